#pragma once

// Low-level tracking: operational-space swing torques, stance torques from
// ground reaction forces, and a condensed linear single-rigid-body MPC.

#include "eemp/qp.hpp"
#include "eemp/quadmodel.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <array>
#include <vector>

namespace eemp {

struct SwingGains {
  Mat3 kp = Vec3(700.0, 700.0, 700.0).asDiagonal();
  Mat3 kd = Vec3(15.0, 15.0, 15.0).asDiagonal();
};

struct FootReference {
  Vec3 p = Vec3::Zero();  // body frame
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
};

inline Vec3 clamp_torque(Vec3 tau, double limit) {
  for (int j = 0; j < 3; ++j) tau[j] = std::clamp(tau[j], -limit, limit);
  return tau;
}

/// Operational-space swing law:
/// tau = J'[Kp(p_ref - p) + Kd(v_ref - v)] + J' Lambda a_ref + V + G,
/// with the damped operational mass so singular poses stay finite.
inline Vec3 swing_torque(const RobotDescription& desc, int leg, const JointState& js, const FootReference& ref,
                         const SwingGains& gains, const Vec3& gravity_body = Vec3(0.0, 0.0, -9.81)) {
  const Mat3 J = leg_jacobian(desc, leg, js.q);
  const Vec3 p = forward_kinematics(desc, leg, js.q);
  const Vec3 v = J * js.qdot;
  const LegDynamics dyn = leg_dynamics_terms(desc, leg, js.q, js.qdot, gravity_body);
  const Mat3 lambda = damped_operational_mass(J, dyn.mass);
  const Vec3 tau = J.transpose() * (gains.kp * (ref.p - p) + gains.kd * (ref.v - v)) +
                   J.transpose() * (lambda * ref.a) + dyn.coriolis + dyn.gravity;
  return clamp_torque(tau, desc.torque_limit);
}

/// tau = J' R' f, where R is the world-from-body rotation and f the force the
/// foot must exert, in the world frame.
inline Vec3 stance_torque(const Mat3& J, const Mat3& world_from_body, const Vec3& f_world, double torque_limit) {
  return clamp_torque(J.transpose() * world_from_body.transpose() * f_world, torque_limit);
}

// ---------------------------------------------------------------------------
// Stance MPC

struct MpcConfig {
  int horizon = 10;
  double dt = 0.03;
  // theta, r, omega, v
  std::array<double, 12> q_weights = {20, 20, 5, 10, 10, 200, 0.5, 0.5, 0.5, 2, 2, 5};
  double r_weight = 1e-8;
  double mu = 0.6;
  double f_min = 0.0;
  double f_max = 200.0;
  int max_iterations = 2000;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("mpc: horizon must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("mpc: dt must be positive");
    for (double w : q_weights)
      if (w < 0.0) throw std::invalid_argument("mpc: weights must be non-negative");
    if (!(r_weight > 0.0)) throw std::invalid_argument("mpc: r_weight must be positive");
    if (mu < 0.0) throw std::invalid_argument("mpc: mu must be non-negative");
    if (f_min < 0.0 || f_max < f_min) throw std::invalid_argument("mpc: need 0 <= f_min <= f_max");
  }
};

class InfeasibleSchedule : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ContactSchedule = std::vector<std::array<bool, kNumLegs>>;

/// Condensed MPC problem plus the bookkeeping to map the QP vector back to
/// per-leg forces.
struct MpcProblem {
  QpProblem qp;
  // For each horizon step, the QP column of each leg's force (or -1 for swing).
  std::vector<std::array<int, kNumLegs>> columns;
  double mass = 0.0;
};

namespace detail {

constexpr int kMpcStates = 13;

// Continuous-time linear SRB model, yaw-linearised, with gravity as state 13.
inline void srb_model(const BodyState& x0, const std::array<Vec3, kNumLegs>& foot_world, double mass,
                      const Mat3& inertia_body, Eigen::Matrix<double, 13, 13>& A,
                      Eigen::Matrix<double, 13, 12>& B) {
  const double yaw = x0.theta.z();
  const Mat3 Rz = rot_z(yaw);
  A.setZero();
  A.block<3, 3>(0, 6) = Rz.transpose();
  A.block<3, 3>(3, 9) = Mat3::Identity();
  A(11, 12) = -1.0;
  const Mat3 inertia_world = Rz * inertia_body * Rz.transpose();
  const Mat3 inv_inertia = inertia_world.inverse();
  B.setZero();
  for (int i = 0; i < kNumLegs; ++i) {
    B.block<3, 3>(6, 3 * i) = inv_inertia * skew(foot_world[i] - x0.r);
    B.block<3, 3>(9, 3 * i) = Mat3::Identity() / mass;
  }
}

}  // namespace detail

/// Build the condensed QP over stance-leg forces. `x_ref` holds horizon
/// samples k = 1..N, `schedule` the stance flags for k = 0..N-1.
inline MpcProblem build_mpc(const BodyState& x_cur, const std::vector<BodyState>& x_ref,
                            const std::array<Vec3, kNumLegs>& foot_world, const ContactSchedule& schedule,
                            const MpcConfig& cfg, const RobotDescription& desc, double gravity = 9.81) {
  const int N = cfg.horizon;
  if (static_cast<int>(x_ref.size()) < N || static_cast<int>(schedule.size()) < N)
    throw std::invalid_argument("build_mpc: reference or schedule shorter than horizon");
  constexpr int S = detail::kMpcStates;

  MpcProblem out;
  out.mass = desc.total_mass();
  out.columns.resize(N);
  int nvars = 0;
  for (int k = 0; k < N; ++k)
    for (int i = 0; i < kNumLegs; ++i) out.columns[k][i] = schedule[k][i] ? 3 * nvars++ : -1;
  if (nvars == 0) throw InfeasibleSchedule("build_mpc: no stance legs anywhere in the horizon");
  const int n = 3 * nvars;

  Eigen::Matrix<double, 13, 13> Ac;
  Eigen::Matrix<double, 13, 12> Bc;
  detail::srb_model(x_cur, foot_world, out.mass, desc.trunk_inertia, Ac, Bc);

  // Zero-order hold discretisation via the block matrix exponential.
  Eigen::Matrix<double, 25, 25> blk = Eigen::Matrix<double, 25, 25>::Zero();
  blk.topLeftCorner<13, 13>() = Ac * cfg.dt;
  blk.topRightCorner<13, 12>() = Bc * cfg.dt;
  const Eigen::Matrix<double, 25, 25> ex = blk.exp();
  const Eigen::Matrix<double, 13, 13> Ad = ex.topLeftCorner<13, 13>();
  const Eigen::Matrix<double, 13, 12> Bd = ex.topRightCorner<13, 12>();

  Eigen::Matrix<double, 13, 1> x0;
  x0 << x_cur.vector(), gravity;

  // Powers of Ad.
  std::vector<Eigen::Matrix<double, 13, 13>> Apow(N + 1);
  Apow[0].setIdentity();
  for (int k = 1; k <= N; ++k) Apow[k] = Ad * Apow[k - 1];

  // X = Aqp x0 + Bqp U, stacking x_1..x_N.
  Eigen::MatrixXd Bqp = Eigen::MatrixXd::Zero(S * N, n);
  Eigen::VectorXd free_response(S * N);
  Eigen::VectorXd ref(S * N);
  Eigen::VectorXd qdiag(S * N);
  for (int k = 0; k < N; ++k) {
    free_response.segment<S>(S * k) = Apow[k + 1] * x0;
    ref.segment<12>(S * k) = x_ref[k].vector();
    ref(S * k + 12) = gravity;
    for (int j = 0; j < 12; ++j) qdiag(S * k + j) = cfg.q_weights[j];
    qdiag(S * k + 12) = 0.0;
    // Input applied at step j influences states k >= j.
    for (int j = 0; j <= k; ++j) {
      const Eigen::Matrix<double, 13, 12> blkB = Apow[k - j] * Bd;
      for (int i = 0; i < kNumLegs; ++i) {
        const int col = out.columns[j][i];
        if (col >= 0) Bqp.block<S, 3>(S * k, col) = blkB.middleCols<3>(3 * i);
      }
    }
  }

  const Eigen::MatrixXd QB = qdiag.asDiagonal() * Bqp;
  out.qp.hessian = 2.0 * (Bqp.transpose() * QB);
  out.qp.hessian.diagonal().array() += 2.0 * cfg.r_weight;
  out.qp.gradient = 2.0 * QB.transpose() * (free_response - ref);

  // Friction pyramid and normal force bounds per stance force.
  const int m = 6 * nvars;
  out.qp.constraints = Eigen::MatrixXd::Zero(m, n);
  out.qp.bounds = Eigen::VectorXd::Zero(m);
  for (int f = 0; f < nvars; ++f) {
    const int c = 3 * f, r = 6 * f;
    out.qp.constraints(r + 0, c + 0) = 1.0;
    out.qp.constraints(r + 0, c + 2) = -cfg.mu;
    out.qp.constraints(r + 1, c + 0) = -1.0;
    out.qp.constraints(r + 1, c + 2) = -cfg.mu;
    out.qp.constraints(r + 2, c + 1) = 1.0;
    out.qp.constraints(r + 2, c + 2) = -cfg.mu;
    out.qp.constraints(r + 3, c + 1) = -1.0;
    out.qp.constraints(r + 3, c + 2) = -cfg.mu;
    out.qp.constraints(r + 4, c + 2) = 1.0;
    out.qp.bounds(r + 4) = cfg.f_max;
    out.qp.constraints(r + 5, c + 2) = -1.0;
    out.qp.bounds(r + 5) = -cfg.f_min;
  }
  return out;
}

/// Forces for horizon step k (swing legs are exactly zero).
inline std::array<Vec3, kNumLegs> mpc_forces(const MpcProblem& mpc, const Eigen::VectorXd& solution, int k = 0) {
  std::array<Vec3, kNumLegs> f = zero_legs<Vec3>();
  for (int i = 0; i < kNumLegs; ++i) {
    const int col = mpc.columns[k][i];
    f[i] = col >= 0 ? Vec3(solution.segment<3>(col)) : Vec3::Zero();
  }
  return f;
}

}  // namespace eemp
