#include "eemp/control.hpp"
#include "eemp/qp.hpp"
#include "eemp/simcore.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace eemp;

namespace {

// Exhaustive active-set enumeration: every subset of at most n rows whose
// equality-constrained KKT point is primal and dual feasible. The convex
// optimum is the best of them.
std::optional<double> enumerate_optimum(const QpProblem& qp, Eigen::VectorXd* best_x = nullptr) {
  const int n = static_cast<int>(qp.num_variables()), m = static_cast<int>(qp.num_constraints());
  std::optional<double> best;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> rows;
    for (int r = 0; r < m; ++r)
      if (mask & (1u << r)) rows.push_back(r);
    const int k = static_cast<int>(rows.size());
    if (k > n) continue;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    K.topLeftCorner(n, n) = qp.hessian;
    rhs.head(n) = -qp.gradient;
    for (int j = 0; j < k; ++j) {
      K.block(0, n + j, n, 1) = qp.constraints.row(rows[j]).transpose();
      K.block(n + j, 0, 1, n) = qp.constraints.row(rows[j]);
      rhs(n + j) = qp.bounds(rows[j]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.rank() < n + k) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    if ((sol.tail(k).array() < -1e-9).any()) continue;
    if (((qp.constraints * x - qp.bounds).array() > 1e-9).any()) continue;
    const double f = qp.objective(x);
    if (!best || f < *best) {
      best = f;
      if (best_x) *best_x = x;
    }
  }
  return best;
}

QpProblem random_qp(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nd(1, 4), md(1, 7);
  std::uniform_real_distribution<double> u(-1.0, 1.0), slack(0.0, 0.5);
  const int n = nd(rng), m = md(rng);
  QpProblem qp;
  Eigen::MatrixXd L(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) L(i, j) = u(rng);
  qp.hessian = L * L.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  qp.gradient.resize(n);
  for (int i = 0; i < n; ++i) qp.gradient(i) = 3.0 * u(rng);
  qp.constraints.resize(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) qp.constraints(i, j) = u(rng);
  Eigen::VectorXd x0(n);
  for (int i = 0; i < n; ++i) x0(i) = u(rng);
  qp.bounds = qp.constraints * x0;
  for (int i = 0; i < m; ++i) qp.bounds(i) += slack(rng);
  return qp;
}

TEST(Qp, MatchesEnumerationOracle) {
  std::mt19937_64 rng(30);
  for (int n = 0; n < 200; ++n) {
    const QpProblem qp = random_qp(rng);
    Eigen::VectorXd x_ref;
    const auto ref = enumerate_optimum(qp, &x_ref);
    ASSERT_TRUE(ref.has_value());
    const QpSolution sol = solve_qp(qp);
    EXPECT_NEAR(sol.objective, *ref, 1e-6) << "problem " << n;
    EXPECT_LT((sol.x - x_ref).norm(), 1e-6);
    EXPECT_LE(sol.kkt_residual, 1e-6);
    EXPECT_LE(sol.primal_violation, 1e-8);
    EXPECT_GE(sol.multipliers.minCoeff(), 0.0);
    // Complementary slackness.
    const Eigen::VectorXd slack = qp.bounds - qp.constraints * sol.x;
    for (int r = 0; r < slack.size(); ++r) EXPECT_LT(std::abs(slack(r) * sol.multipliers(r)), 1e-8);
  }
}

TEST(Qp, UnconstrainedMinimum) {
  QpProblem qp;
  qp.hessian = Eigen::Matrix2d{{4.0, 1.0}, {1.0, 3.0}};
  qp.gradient = Eigen::Vector2d(1.0, 2.0);
  qp.constraints = Eigen::MatrixXd::Zero(0, 2);
  qp.bounds = Eigen::VectorXd::Zero(0);
  const QpSolution sol = solve_qp(qp);
  const Eigen::Vector2d x = qp.hessian.ldlt().solve(-qp.gradient);
  EXPECT_LT((sol.x - x).norm(), 1e-12);
  EXPECT_TRUE(sol.active.empty());
}

TEST(Qp, InfeasibleProblemThrows) {
  QpProblem qp;
  qp.hessian = Eigen::MatrixXd::Identity(1, 1);
  qp.gradient = Eigen::VectorXd::Zero(1);
  qp.constraints = Eigen::MatrixXd(2, 1);
  qp.constraints << 1.0, -1.0;
  qp.bounds = Eigen::Vector2d(-1.0, -1.0);
  EXPECT_THROW(solve_qp(qp), QpInfeasible);
}

struct Standing {
  RobotDescription desc;
  SimConfig sim;
  WorldState world = make_standing_world(desc, sim, 0.31);
  std::array<Vec3, kNumLegs> feet() const { return world.foot_world; }
};

MpcProblem static_problem(const Standing& s, const MpcConfig& cfg) {
  std::vector<BodyState> ref(cfg.horizon, s.world.body);
  ContactSchedule sched(cfg.horizon, {true, true, true, true});
  return build_mpc(s.world.body, ref, s.feet(), sched, cfg, s.desc, s.sim.gravity);
}

TEST(Mpc, StaticStanceBalancesGravity) {
  Standing s;
  MpcConfig cfg;
  const MpcProblem prob = static_problem(s, cfg);
  const QpSolution sol = solve_qp(prob.qp);
  const auto f = mpc_forces(prob, sol.x);
  Vec3 total = Vec3::Zero(), moment = Vec3::Zero();
  for (int i = 0; i < kNumLegs; ++i) {
    total += f[i];
    moment += (s.world.foot_world[i] - s.world.body.r).cross(f[i]);
  }
  const double mg = s.desc.total_mass() * s.sim.gravity;
  EXPECT_NEAR(total.z(), mg, 1e-3);
  EXPECT_LT(total.head<2>().norm(), 1e-3);
  EXPECT_LT(moment.norm(), 1e-3);
  EXPECT_LE(sol.kkt_residual, 1e-6);
  EXPECT_LE(sol.primal_violation, 1e-8);
}

TEST(Mpc, EqualShareHoldsTheReference) {
  // With the reference equal to the standing state, equal vertical forces
  // keep every predicted state on the reference, so the gradient of the
  // tracking term vanishes there and only the force penalty remains.
  Standing s;
  MpcConfig cfg;
  const MpcProblem prob = static_problem(s, cfg);
  const Eigen::Index n = prob.qp.num_variables();
  Eigen::VectorXd u(n);
  for (Eigen::Index k = 0; k < n; k += 3) u.segment<3>(k) = Vec3(0, 0, prob.mass * s.sim.gravity / kNumLegs);
  const Eigen::VectorXd grad = prob.qp.hessian * u + prob.qp.gradient - 2.0 * cfg.r_weight * u;
  EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Mpc, SwingLegsHaveNoForceColumns) {
  Standing s;
  MpcConfig cfg;
  std::vector<BodyState> ref(cfg.horizon, s.world.body);
  ContactSchedule sched(cfg.horizon, {true, false, false, true});
  const MpcProblem prob = build_mpc(s.world.body, ref, s.feet(), sched, cfg, s.desc);
  EXPECT_EQ(prob.qp.num_variables(), 3 * 2 * cfg.horizon);
  const QpSolution sol = solve_qp(prob.qp);
  const auto f = mpc_forces(prob, sol.x);
  EXPECT_EQ(f[1], Vec3::Zero());
  EXPECT_EQ(f[2], Vec3::Zero());
  for (int i : {0, 3}) {
    EXPECT_GE(f[i].z(), cfg.f_min - 1e-9);
    EXPECT_LE(std::abs(f[i].x()), cfg.mu * f[i].z() + 1e-8);
    EXPECT_LE(std::abs(f[i].y()), cfg.mu * f[i].z() + 1e-8);
  }
}

TEST(Mpc, FrictionPyramidHoldsUnderLateralDemand) {
  Standing s;
  MpcConfig cfg;
  std::vector<BodyState> ref(cfg.horizon, s.world.body);
  for (int k = 0; k < cfg.horizon; ++k) {
    ref[k].v = Vec3(2.0, -1.5, 0.0);
    ref[k].r += (k + 1) * cfg.dt * ref[k].v;
  }
  ContactSchedule sched(cfg.horizon, {true, true, true, true});
  const MpcProblem prob = build_mpc(s.world.body, ref, s.feet(), sched, cfg, s.desc);
  const QpSolution sol = solve_qp(prob.qp);
  EXPECT_LE(sol.primal_violation, 1e-8);
  EXPECT_LE(sol.kkt_residual, 1e-6);
  for (int k = 0; k < cfg.horizon; ++k)
    for (const auto& f : mpc_forces(prob, sol.x, k)) {
      EXPECT_LE(std::abs(f.x()), cfg.mu * f.z() + 1e-8);
      EXPECT_LE(std::abs(f.y()), cfg.mu * f.z() + 1e-8);
      EXPECT_LE(f.z(), cfg.f_max + 1e-8);
    }
}

TEST(Mpc, RejectsBadInputs) {
  Standing s;
  MpcConfig cfg;
  std::vector<BodyState> ref(cfg.horizon, s.world.body);
  ContactSchedule none(cfg.horizon, {false, false, false, false});
  EXPECT_THROW(build_mpc(s.world.body, ref, s.feet(), none, cfg, s.desc), InfeasibleSchedule);
  ContactSchedule all(cfg.horizon, {true, true, true, true});
  ref.pop_back();
  EXPECT_THROW(build_mpc(s.world.body, ref, s.feet(), all, cfg, s.desc), std::invalid_argument);
  cfg.horizon = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

}  // namespace
