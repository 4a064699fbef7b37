#include "eemp/runner.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace eemp;

namespace {

TEST(Sim, BallisticTrunkFollowsParabola) {
  RobotDescription d;
  SimConfig cfg;
  WorldState w = make_standing_world(d, cfg, 0.31);
  w.body.r = Vec3(0.0, 0.0, 2.0);
  w.body.v = Vec3(0.5, -0.2, 1.0);
  detail::refresh_feet(d, w);
  const Vec3 r0 = w.body.r, v0 = w.body.v;
  LegTorques zero = zero_legs<Vec3>();
  for (int k = 0; k < 300; ++k) w = step(w, zero, d, cfg);
  const double t = w.time;
  const Vec3 expect = r0 + v0 * t + 0.5 * Vec3(0, 0, -cfg.gravity) * t * t;
  EXPECT_LT((w.body.r - expect).norm(), 1e-9);
  EXPECT_LT((w.body.v - (v0 + Vec3(0, 0, -cfg.gravity) * t)).norm(), 1e-9);
  EXPECT_LT(w.body.omega.norm(), 1e-12);
  for (bool c : w.contact) EXPECT_FALSE(c);
}

TEST(Sim, StandingControllerHoldsStaticEquilibrium) {
  RobotDescription d;
  SimConfig cfg;
  LocomotionController lc(d, cfg, ControllerConfig{}, GaitKind::Trot, baseline_params());
  const Vec3 r0 = lc.world().body.r;
  for (int k = 0; k < 1500; ++k) lc.tick(VelocityCommand{});
  const auto& w = lc.world();
  double fz = 0.0;
  for (const auto& f : w.grf) fz += f.z();
  EXPECT_NEAR(fz, d.total_mass() * cfg.gravity, 0.02 * d.total_mass() * cfg.gravity);
  EXPECT_LT((w.body.r - r0).head<2>().norm(), 5e-3);
  EXPECT_NEAR(w.body.r.z(), 0.31, 5e-3);
  EXPECT_LT(w.body.v.norm(), 1e-2);
  EXPECT_EQ(lc.steps_taken(), 0);
}

TEST(Sim, ContactForcesRespectFrictionCone) {
  RobotDescription d;
  SimConfig cfg;
  cfg.default_mu = 0.4;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int n = 0; n < 200; ++n) {
    WorldState w = make_standing_world(d, cfg, 0.30 + 0.01 * u(rng));
    w.body.v = Vec3(u(rng), u(rng), 0.3 * u(rng));
    w.body.omega = Vec3(u(rng), u(rng), u(rng));
    for (const auto& f : contact_forces(d, w, cfg)) {
      EXPECT_GE(f.z(), 0.0);
      EXPECT_LE(std::hypot(f.x(), f.y()), cfg.default_mu * f.z() + 1e-12);
    }
  }
}

TEST(Sim, SlidingOnLowFrictionPatchStaysInsideCone) {
  RobotDescription d;
  SimConfig cfg;
  cfg.friction_patches.push_back({-10.0, 10.0, 0.1});
  WorldState w = make_standing_world(d, cfg, 0.31);
  w.body.v = Vec3(1.0, 0.5, 0.0);
  const auto dyn_g = [&](int i) {
    return leg_dynamics_terms(d, i, w.legs[i].q, Vec3::Zero(), w.rotation().transpose() * Vec3(0, 0, -cfg.gravity))
        .gravity;
  };
  bool slid = false;
  for (int k = 0; k < 200; ++k) {
    LegTorques tau;
    for (int i = 0; i < kNumLegs; ++i) tau[i] = dyn_g(i);
    w = step(w, tau, d, cfg);
    for (const auto& f : w.grf) {
      EXPECT_LE(std::hypot(f.x(), f.y()), 0.1 * f.z() + 1e-9);
      if (f.z() > 1.0 && std::hypot(f.x(), f.y()) > 0.099 * f.z()) slid = true;
    }
  }
  EXPECT_TRUE(slid);
}

TEST(Sim, FrictionPatchLookup) {
  SimConfig cfg;
  cfg.friction_patches = {{0.0, 1.0, 0.2}, {0.5, 2.0, 0.3}};
  EXPECT_DOUBLE_EQ(cfg.mu_at(-1.0), cfg.default_mu);
  EXPECT_DOUBLE_EQ(cfg.mu_at(0.7), 0.2);
  EXPECT_DOUBLE_EQ(cfg.mu_at(1.5), 0.3);
}

TEST(Sim, DisturbanceWindowIsHalfOpen) {
  const std::vector<Disturbance> s = {{1.0, 0.5, Vec3(10, 0, 0)}, {1.2, 0.1, Vec3(0, 5, 0)}};
  EXPECT_EQ(apply_disturbance(s, 0.99), Vec3::Zero());
  EXPECT_EQ(apply_disturbance(s, 1.0), Vec3(10, 0, 0));
  EXPECT_EQ(apply_disturbance(s, 1.25), Vec3(10, 5, 0));
  EXPECT_EQ(apply_disturbance(s, 1.5), Vec3::Zero());
}

TEST(Sim, PushChangesTrunkMomentum) {
  RobotDescription d;
  SimConfig cfg;
  WorldState w = make_standing_world(d, cfg, 0.31);
  w.body.r.z() = 2.0;
  cfg.disturbances.push_back({0.0, 0.1, Vec3(0, 60, 0)});
  LegTorques zero = zero_legs<Vec3>();
  while (w.time < 0.2 - 1e-9) w = step(w, zero, d, cfg);
  EXPECT_NEAR(w.body.v.y(), 60 * 0.1 / d.total_mass(), 1e-9);
}

TEST(Sim, NonFiniteTorqueIsReportedAsBlowup) {
  RobotDescription d;
  SimConfig cfg;
  WorldState w = make_standing_world(d, cfg, 0.31);
  LegTorques tau = zero_legs<Vec3>();
  tau[0] = Vec3(std::nan(""), 0, 0);
  EXPECT_THROW(step(w, tau, d, cfg), NumericalBlowup);
}

TEST(Sim, FallDetection) {
  SimConfig cfg;
  WorldState w;
  w.body.r.z() = 0.3;
  EXPECT_FALSE(has_fallen(w, cfg));
  w.body.r.z() = 0.1;
  EXPECT_TRUE(has_fallen(w, cfg));
  w.body.r.z() = 0.3;
  w.body.theta.x() = 0.7;
  EXPECT_TRUE(has_fallen(w, cfg));
}

TEST(Sim, KinematicLegsFollowTargets) {
  RobotDescription d;
  SimConfig cfg;
  cfg.fidelity = Fidelity::KinematicLegs;
  WorldState w = make_standing_world(d, cfg, 0.31);
  KinematicTargets targets;
  const Vec3 p = forward_kinematics(d, 0, w.legs[0].q) + Vec3(0.02, 0.0, 0.05);
  targets[0] = KinematicTarget{p, Vec3::Zero()};
  LegTorques zero = zero_legs<Vec3>();
  w = step(w, zero, d, cfg, targets);
  EXPECT_LT((forward_kinematics(d, 0, w.legs[0].q) - p).norm(), 1e-12);
}

TEST(Sim, ConfigValidation) {
  SimConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.dt = 0.0;
  EXPECT_THROW(cfg.validate(), SimError);
  cfg = SimConfig{};
  cfg.friction_patches.push_back({0, 1, -0.1});
  EXPECT_THROW(cfg.validate(), SimError);
}

TEST(Sim, ClosedLoopRunIsDeterministic) {
  RobotDescription d;
  SimConfig cfg;
  cfg.seed = 42;
  RunOptions ro;
  ro.duration = 1.5;
  ro.velocity = constant_velocity(0.3);
  ro.initial_noise = 0.02;
  std::ostringstream a, b;
  const auto r1 = run_closed_loop(d, cfg, ControllerConfig{}, ro, &a);
  const auto r2 = run_closed_loop(d, cfg, ControllerConfig{}, ro, &b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(r1.report.energy, r2.report.energy);
  EXPECT_GT(r1.report.steps, 0);
}

TEST(Sim, TraceHeaderMatchesRowWidth) {
  RobotDescription d;
  SimConfig cfg;
  std::ostringstream os;
  write_trace_header(os);
  const WorldState w = make_standing_world(d, cfg, 0.31);
  write_trace_row(os, w, LegTorques{});
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(header.rfind("time,", 0), 0u);
}

}  // namespace
