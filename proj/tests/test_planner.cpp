#include "eemp/planner.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace eemp;

namespace {

TEST(Swing, ApexAndTerminalIdentities) {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> T(0.1, 0.25), h(0.05, 0.15), d(-0.3, 0.3);
  for (int n = 0; n < 1000; ++n) {
    const double dt = T(rng), hs = h(rng);
    const Vec2 disp(d(rng), d(rng));
    const SwingSample apex = swing_sample(dt / 2, dt, hs, disp);
    const SwingSample end = swing_sample(dt, dt, hs, disp);
    EXPECT_LE(std::abs(apex.p.z() - hs), 1e-12);
    EXPECT_LE((end.p.head<2>() - disp).norm(), 1e-12);
    EXPECT_LE(std::abs(end.p.z()), 1e-12);
  }
}

TEST(Swing, StartsAtRestAndVelocityIsDerivative) {
  const double T = 0.2, hs = 0.1;
  const Vec2 disp(0.12, -0.04);
  const SwingSample s0 = swing_sample(0.0, T, hs, disp);
  EXPECT_LT(s0.p.norm(), 1e-15);
  EXPECT_LT(s0.v.norm(), 1e-15);
  const double e = 1e-6;
  for (double t : {0.03, 0.07, 0.11, 0.17}) {
    const SwingSample s = swing_sample(t, T, hs, disp);
    const Vec3 fd_v = (swing_sample(t + e, T, hs, disp).p - swing_sample(t - e, T, hs, disp).p) / (2 * e);
    const Vec3 fd_a = (swing_sample(t + e, T, hs, disp).v - swing_sample(t - e, T, hs, disp).v) / (2 * e);
    EXPECT_LT((s.v - fd_v).norm(), 1e-6);
    EXPECT_LT((s.a - fd_a).norm(), 1e-4);
  }
}

TEST(Progress, RaibertTerm) {
  const Vec2 off = progress_offset(Vec2(0.5, 0.0), Vec2(0.4, 0.1), 0.25, 0.31, 9.81);
  const double k = std::sqrt(0.31 / 9.81);
  EXPECT_NEAR(off.x(), 0.5 * 0.25 * 0.5 - 0.1 * k, 1e-15);
  EXPECT_NEAR(off.y(), 0.1 * k, 1e-15);
  EXPECT_EQ(progress_offset(Vec2::Zero(), Vec2::Zero(), 0.25, 0.31, 9.81), Vec2::Zero());
  EXPECT_THROW(progress_offset(Vec2::Zero(), Vec2::Zero(), 0.25, 0.0, 9.81), std::invalid_argument);
}

TEST(Ellipse, BoundaryDoesNotTrigger) {
  const Vec2 c(0.25, -0.125);
  EXPECT_FALSE(ellipse_check(c + Vec2(0.0625, 0.0), c, 0.0625, 0.03125));
  EXPECT_FALSE(ellipse_check(c + Vec2(0.0, -0.03125), c, 0.0625, 0.03125));
  EXPECT_TRUE(ellipse_check(c + Vec2(0.0625 * (1 + 1e-9), 0.0), c, 0.0625, 0.03125));
  EXPECT_FALSE(ellipse_check(c, c, 0.0625, 0.03125));
}

TEST(Gait, TrotAlternatesDiagonals) {
  GaitMode m = GaitMode::trot();
  EXPECT_EQ(select_swing_legs(m, leg_bit(1)), kDiagonalB);
  EXPECT_EQ(select_swing_legs(m, leg_bit(1)), kDiagonalA);
  EXPECT_EQ(select_swing_legs(m, kAllLegs), kDiagonalB);
  // The next diagonal must be fully in stance.
  EXPECT_EQ(select_swing_legs(m, leg_bit(0), static_cast<LegMask>(kAllLegs & ~leg_bit(3))), 0);
  EXPECT_EQ(select_swing_legs(m, 0), 0);
}

TEST(Gait, WalkFollowsCycle) {
  GaitMode m = GaitMode::walk();
  // Fresh walk starts at RL.
  EXPECT_EQ(select_swing_legs(m, kAllLegs), leg_bit(3));
  EXPECT_EQ(select_swing_legs(m, kAllLegs), leg_bit(1));
  EXPECT_EQ(select_swing_legs(m, kAllLegs), leg_bit(2));
  EXPECT_EQ(select_swing_legs(m, kAllLegs), leg_bit(0));
  // Skips legs that did not trigger but keeps the order.
  EXPECT_EQ(select_swing_legs(m, leg_bit(1) | leg_bit(2)), leg_bit(1));
  EXPECT_EQ(select_swing_legs(m, leg_bit(0)), leg_bit(0));
}

TEST(Gait, FreeNeverRepeatsAndKeepsTwoInStance) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> mask(1, 15);
  GaitMode m = GaitMode::free();
  LegMask prev = 0;
  for (int n = 0; n < 500; ++n) {
    const LegMask trig = static_cast<LegMask>(mask(rng));
    const LegMask stance = static_cast<LegMask>(mask(rng) | trig);
    const LegMask before = m.last_swung;
    const LegMask got = select_swing_legs(m, trig, stance);
    if (got == 0) {
      EXPECT_EQ(m.last_swung, before);
      continue;
    }
    EXPECT_EQ(got & prev, 0);
    EXPECT_EQ(got & ~(trig & stance), 0);
    EXPECT_GE(leg_count(static_cast<LegMask>(stance & ~got)), 2);
    prev = got;
  }
}

TEST(Reference, EulerIntegratesCommand) {
  BodyState x;
  x.r = Vec3(1.0, 2.0, 0.25);
  x.theta = Vec3(0.1, -0.05, 0.3);
  const VelocityCommand cmd{0.5, 0.1, 0.4};
  const auto ref = body_reference(x, cmd, 10, 0.01, 0.31);
  ASSERT_EQ(ref.size(), 10u);
  double yaw = 0.3;
  Vec3 r = x.r;
  for (const auto& s : ref) {
    const Vec3 v(std::cos(yaw) * 0.5 - std::sin(yaw) * 0.1, std::sin(yaw) * 0.5 + std::cos(yaw) * 0.1, 0.0);
    r += 0.01 * v;
    yaw += 0.004;
    EXPECT_LT((s.r.head<2>() - r.head<2>()).norm(), 1e-14);
    EXPECT_DOUBLE_EQ(s.r.z(), 0.31);
    EXPECT_NEAR(s.theta.z(), yaw, 1e-14);
    EXPECT_EQ(s.theta.x(), 0.0);
    EXPECT_EQ(s.omega, Vec3(0, 0, 0.4));
  }
}

TEST(Trigger, FiresAtFirstViolationOnly) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-1.0, 1.0), axis(0.02, 0.12), speed(0.1, 0.6);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI);
  for (int n = 0; n < 50; ++n) {
    oracle::Glide g;
    PlannerParams p = baseline_params();
    p.ellipse_rx = axis(rng);
    p.ellipse_ry = axis(rng);
    g.yaw = ang(rng);
    const double heading = ang(rng);
    g.v_heading = speed(rng) * Vec2(std::cos(heading), std::sin(heading));
    for (int i = 0; i < kNumLegs; ++i) g.offset[i] = 0.6 * Vec2(u(rng) * p.ellipse_rx, u(rng) * p.ellipse_ry) / std::sqrt(2.0);
    g.place();

    PlannerConfig cfg;
    MotionPlanner planner(g.desc, cfg, GaitMode::trot());
    const VelocityCommand cmd{g.v_heading.x(), g.v_heading.y(), 0.0};
    bool fired = false;
    for (int k = 0; k < 2000 && !fired; ++k) {
      const bool expect = g.outside(p);
      const PlanOutput out = planner.step(g.world, cmd, p);
      fired = out.phase.swinging || out.event.has_value();
      ASSERT_EQ(fired, expect) << "scenario " << n << " tick " << k;
      if (fired) {
        EXPECT_TRUE(out.event.has_value());
        EXPECT_NE(out.event->selected, 0);
      }
      g.advance(cfg.dt);
    }
    EXPECT_TRUE(fired) << "scenario " << n;
  }
}

TEST(Trigger, JustInsideBoundaryDoesNotFire) {
  for (double scale : {1.0 - 1e-9, 1.0 + 1e-9}) {
    oracle::Glide g;
    PlannerParams p = baseline_params();
    g.yaw = 0.7;
    g.offset[2] = Vec2(p.ellipse_rx, 0.0) * scale;
    g.place();
    MotionPlanner planner(g.desc, PlannerConfig{}, GaitMode::trot());
    const PlanOutput out = planner.step(g.world, VelocityCommand{}, p);
    EXPECT_EQ(out.phase.swinging, scale > 1.0);
  }
}

TEST(Trigger, AirborneFootDoesNotFire) {
  oracle::Glide g;
  PlannerParams p = baseline_params();
  g.offset[0] = Vec2(2 * p.ellipse_rx, 0.0);
  g.place();
  g.world.contact[0] = false;
  g.world.foot_world[0].z() = 0.05;
  MotionPlanner planner(g.desc, PlannerConfig{}, GaitMode::trot());
  EXPECT_FALSE(planner.step(g.world, VelocityCommand{}, p).phase.swinging);
}

TEST(Trigger, SwingPlanLandsAtCentrePlusProgress) {
  oracle::Glide g;
  PlannerParams p = baseline_params();
  g.v_heading = Vec2(0.3, 0.0);
  g.offset[1] = Vec2(-1.5 * p.ellipse_rx, 0.0);
  g.place();
  PlannerConfig cfg;
  MotionPlanner planner(g.desc, cfg, GaitMode::trot());
  const VelocityCommand cmd{0.3, 0.0, 0.0};
  const auto out = planner.step(g.world, cmd, p);
  ASSERT_TRUE(out.event.has_value());
  EXPECT_EQ(out.event->selected, kDiagonalB);
  const Vec2 prog = progress_offset(Vec2(0.3, 0), Vec2(0.3, 0), p.swing_time, p.robot_height, cfg.gravity);
  const Vec2 land = planner.bundle().touchdown[1].head<2>();
  EXPECT_LT((land - (g.desc.nominal_foot(1).head<2>() + prog)).norm(), 1e-12);
  EXPECT_EQ(planner.bundle().size(), static_cast<std::size_t>(std::ceil(p.swing_time / cfg.dt - 1e-9)));
}

TEST(Trigger, GaitChangeWaitsForAllStance) {
  oracle::Glide g;
  PlannerParams p = baseline_params();
  g.offset[0] = Vec2(2 * p.ellipse_rx, 0.0);
  g.place();
  MotionPlanner planner(g.desc, PlannerConfig{}, GaitMode::trot());
  planner.step(g.world, VelocityCommand{}, p);
  ASSERT_TRUE(planner.phase().swinging);
  planner.request_gait(GaitKind::Walk);
  planner.step(g.world, VelocityCommand{}, p);
  EXPECT_EQ(planner.mode().kind, GaitKind::Trot);
  while (planner.phase().swinging) planner.step(g.world, VelocityCommand{}, p);
  planner.step(g.world, VelocityCommand{}, p);
  EXPECT_EQ(planner.mode().kind, GaitKind::Walk);
}

TEST(Params, StudyBounds) {
  EXPECT_TRUE(within_study_bounds(baseline_params()));
  PlannerParams p = baseline_params();
  p.step_height = 0.2;
  EXPECT_FALSE(within_study_bounds(p));
  p = baseline_params();
  p.swing_time = 0.09;
  EXPECT_FALSE(within_study_bounds(p));
}

}  // namespace
