#include "eemp/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace eemp;

namespace {

RunTrace moving_trace(double speed, double power, double seconds, double dt = 0.001) {
  RunTrace t;
  t.dt = dt;
  const int n = static_cast<int>(std::lround(seconds / dt));
  for (int k = 0; k < n; ++k) {
    TraceSample s;
    s.time = k * dt;
    s.body.r = Vec3(speed * k * dt, 0.0, 0.31);
    s.body.v = Vec3(speed, 0.0, 0.0);
    // Odd samples regenerate, which must not count; even samples mix joints.
    if (k % 2 == 0) {
      s.qdot(0) = 2.0;
      s.tau(0) = power;
      s.qdot(4) = 1.0;
      s.tau(4) = -power;
    } else {
      s.qdot(7) = 1.0;
      s.tau(7) = -power;
    }
    s.v_cmd = Vec2(speed, 0.0);
    t.samples.push_back(s);
  }
  return t;
}

TEST(Cot, PositiveWorkOverDistance) {
  const RunTrace t = moving_trace(0.5, 40.0, 2.0);
  const double d = 0.5 * (t.size() - 1) * t.dt;
  EXPECT_NEAR(cost_of_transport(t), 40.0 * (t.size() / 2) * t.dt / d, 1e-9);
  EXPECT_NEAR(positive_work(t, 0, t.size()), 40.0 * 1.0, 1e-9);
}

TEST(Cot, StationaryWindowThrows) {
  const RunTrace t = moving_trace(0.0, 10.0, 1.0);
  EXPECT_THROW(cost_of_transport(t), InsufficientDistance);
  EXPECT_THROW(cost_of_transport(t, 5, 2), std::invalid_argument);
}

TEST(Manipulability, SingularValueRatio) {
  EXPECT_NEAR(manipulability(Vec3(0.2, 0.1, 0.05).asDiagonal()), 4.0, 1e-12);
  std::mt19937_64 rng(50);
  for (int n = 0; n < 50; ++n) {
    const Mat3 U = Eigen::Quaterniond::UnitRandom().toRotationMatrix();
    const Mat3 V = Eigen::Quaterniond::UnitRandom().toRotationMatrix();
    const Vec3 s(0.3, 0.2, 0.07);
    EXPECT_NEAR(manipulability(U * s.asDiagonal() * V.transpose()), 0.3 / 0.07, 1e-9);
  }
  EXPECT_NEAR(manipulability(Mat3::Identity()), 1.0, 1e-15);
  Mat3 sing = Mat3::Identity();
  sing(2, 2) = 0.0;
  EXPECT_THROW(manipulability(sing), SingularJacobian);
}

TEST(Tracking, HeadingFrameError) {
  RunTrace t;
  t.dt = 0.01;
  for (int k = 0; k < 300; ++k) {
    TraceSample s;
    s.time = k * 0.01;
    s.body.theta.z() = M_PI / 2;
    s.body.v = Vec3(0.0, 0.4, 0.0);  // 0.4 forward in the heading frame
    s.v_cmd = Vec2(0.5, 0.0);
    t.samples.push_back(s);
  }
  EXPECT_NEAR(tracking_error(t, 1.0), 0.1, 1e-12);
  EXPECT_EQ(tracking_error(RunTrace{}), 0.0);
}

TEST(Evaluate, StationaryStatus) {
  RobotDescription d;
  RunTrace t = moving_trace(0.0, 5.0, 1.0);
  for (auto& s : t.samples) {
    s.q.setConstant(0.0);
    for (int i = 0; i < kNumLegs; ++i) s.q.segment<3>(3 * i) = Vec3(0.0, 0.8, -1.6);
    s.stance = {true, true, true, true};
  }
  const MetricsReport r = evaluate(d, t);
  EXPECT_EQ(r.status, RunStatus::Stationary);
  EXPECT_FALSE(r.cot.has_value());
  EXPECT_GT(r.manipulability_mean, 1.0);
  EXPECT_TRUE(evaluate(d, RunTrace{}).status == RunStatus::Stationary);
}

TEST(Evaluate, MovingReport) {
  RobotDescription d;
  RunTrace t = moving_trace(0.5, 30.0, 2.0);
  for (auto& s : t.samples)
    for (int i = 0; i < kNumLegs; ++i) s.q.segment<3>(3 * i) = Vec3(0.0, 0.8, -1.6);
  const MetricsReport r = evaluate(d, t, 9.81);
  ASSERT_TRUE(r.cot.has_value());
  EXPECT_EQ(r.status, RunStatus::Ok);
  EXPECT_NEAR(*r.cot_dimensionless, r.energy / (d.total_mass() * 9.81 * r.distance), 1e-12);
  EXPECT_NEAR(r.mean_speed, 0.5, 1e-3);
  // Stance flags are all false, so no legs contribute.
  EXPECT_EQ(r.manipulability_mean, 0.0);
}

}  // namespace
