#include "eemp/control.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace eemp;

namespace {

double rel_err(const Vec3& a, const Vec3& b) { return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff()); }

TEST(SwingLaw, MatchesIndependentImplementation) {
  RobotDescription d;
  d.torque_limit = 1e9;
  std::mt19937_64 rng(40);
  SwingGains gains;
  gains.kp = Vec3(700, 500, 900).asDiagonal();
  gains.kd = Vec3(15, 12, 20).asDiagonal();
  for (int n = 0; n < 100; ++n) {
    const int leg = n % kNumLegs;
    JointState js{oracle::random_q(rng, d), oracle::random_vec(rng, 6.0)};
    js.q[2] = std::min(js.q[2], -0.2);
    FootReference ref{forward_kinematics(d, leg, js.q) + oracle::random_vec(rng, 0.05), oracle::random_vec(rng, 1.0),
                      oracle::random_vec(rng, 20.0)};
    const Vec3 g_body = rotation_from_rpy(oracle::random_vec(rng, 0.3)).transpose() * Vec3(0, 0, -9.81);

    const oracle::Chain c = oracle::build(d, leg, js.q);
    const Mat3 J = oracle::jacobian(c);
    const auto dyn = oracle::dynamics(d, leg, js.q, js.qdot, g_body);
    const Mat3 lambda = (J * dyn.M.inverse() * J.transpose() + 1e-6 * Mat3::Identity()).inverse();
    const Vec3 expect = J.transpose() * (gains.kp * (ref.p - c.point) + gains.kd * (ref.v - J * js.qdot)) +
                        J.transpose() * lambda * ref.a + dyn.V + dyn.G;

    EXPECT_LT(rel_err(swing_torque(d, leg, js, ref, gains, g_body), expect), 1e-10) << "sample " << n;
  }
}

TEST(StanceLaw, MatchesVirtualWork) {
  RobotDescription d;
  std::mt19937_64 rng(41);
  for (int n = 0; n < 100; ++n) {
    const int leg = n % kNumLegs;
    const Vec3 q = oracle::random_q(rng, d);
    const Mat3 R = rotation_from_rpy(oracle::random_vec(rng, 0.5));
    const Vec3 f = oracle::random_vec(rng, 80.0);
    // tau_k is the work rate of the body-frame force per unit joint rate.
    const oracle::Chain c = oracle::build(d, leg, q);
    const Vec3 fb = R.transpose() * f;
    Vec3 expect;
    for (int k = 0; k < 3; ++k) expect[k] = c.joints[k].axis.cross(c.point - c.joints[k].origin).dot(fb);
    EXPECT_LT(rel_err(stance_torque(leg_jacobian(d, leg, q), R, f, 1e9), expect), 1e-10);
  }
}

TEST(StanceLaw, TorqueIsClamped) {
  const Vec3 tau = clamp_torque(Vec3(50.0, -60.0, 10.0), 33.5);
  EXPECT_EQ(tau, Vec3(33.5, -33.5, 10.0));
}

TEST(SwingLaw, HoldsReferenceAtRestAgainstGravity) {
  RobotDescription d;
  const Vec3 q(0.1, 0.8, -1.5);
  JointState js{q, Vec3::Zero()};
  FootReference ref{forward_kinematics(d, 0, q), Vec3::Zero(), Vec3::Zero()};
  const Vec3 tau = swing_torque(d, 0, js, ref, SwingGains{});
  EXPECT_LT((tau - leg_dynamics_terms(d, 0, q, Vec3::Zero()).gravity).norm(), 1e-12);
}

}  // namespace
