#pragma once

// Deterministic fixed-step physics: a single rigid trunk carrying the total
// robot weight, driven by foot contact forces; each leg is a torque-driven
// 3-DoF chain riding on the moving trunk. Ground contact is a penalty spring
// with a viscous tangential law capped to the Coulomb disc.
//
// Trunk and leg velocities are advanced together with the contact forces
// linearised and treated implicitly (stiffness and damping), which keeps
// light links and the stiff ground stable at 1 ms.

#include "eemp/quadmodel.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eemp {

enum class Fidelity { Articulated, KinematicLegs };

struct FrictionPatch {
  double x_min = 0.0;
  double x_max = 0.0;
  double mu = 0.8;
};

struct Disturbance {
  double time = 0.0;
  double duration = 0.0;
  Vec3 force = Vec3::Zero();  // N, world frame, applied at the trunk CoM
};

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalBlowup : public SimError {
 public:
  using SimError::SimError;
};

struct SimConfig {
  double dt = 0.001;
  double gravity = 9.81;
  double contact_stiffness = 1e5;
  double contact_damping = 3e3;
  double tangential_damping = 1e4;
  double default_mu = 0.8;
  std::vector<FrictionPatch> friction_patches;
  Fidelity fidelity = Fidelity::Articulated;
  std::uint64_t seed = 0;
  std::vector<Disturbance> disturbances;
  double fall_height = 0.12;
  double fall_angle = 0.6;
  double blowup_limit = 1e6;

  /// Friction coefficient under a foot at world x; the first matching patch wins.
  double mu_at(double x) const {
    for (const auto& p : friction_patches)
      if (x >= p.x_min && x <= p.x_max) return p.mu;
    return default_mu;
  }

  void validate() const {
    if (!(dt > 0.0 && dt <= 0.01)) throw SimError("sim: dt must lie in (0, 0.01]");
    if (!(contact_stiffness > 0.0) || !(contact_damping > 0.0))
      throw SimError("sim: contact stiffness and damping must be positive");
    if (tangential_damping < 0.0) throw SimError("sim: tangential_damping must be non-negative");
    if (default_mu < 0.0) throw SimError("sim: friction coefficients must be non-negative");
    for (const auto& p : friction_patches)
      if (p.mu < 0.0) throw SimError("sim: friction coefficients must be non-negative");
    for (const auto& d : disturbances)
      if (d.duration < 0.0) throw SimError("sim: disturbance duration must be non-negative");
  }
};

struct WorldState {
  double time = 0.0;
  BodyState body;
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
  std::array<JointState, kNumLegs> legs{};
  std::array<Vec3, kNumLegs> foot_world = zero_legs<Vec3>();  // lowest point of each foot sphere
  std::array<bool, kNumLegs> contact{};
  std::array<Vec3, kNumLegs> grf = zero_legs<Vec3>();  // last applied ground reaction forces, world frame

  Mat3 rotation() const { return orientation.toRotationMatrix(); }
};

using LegTorques = std::array<Vec3, kNumLegs>;

/// Body-frame foot target for a leg driven kinematically (kinematic-legs fidelity).
struct KinematicTarget {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};
using KinematicTargets = std::array<std::optional<KinematicTarget>, kNumLegs>;

namespace detail {

inline Vec3 foot_centre_world(const RobotDescription& desc, const WorldState& w, int leg, const Mat3& R) {
  return w.body.r + R * forward_kinematics(desc, leg, w.legs[leg].q);
}

// Velocity of the foot point in the world frame.
inline Vec3 foot_velocity_world(const RobotDescription& desc, const WorldState& w, int leg, const Mat3& R) {
  const Vec3 pb = forward_kinematics(desc, leg, w.legs[leg].q);
  const Mat3 J = leg_jacobian(desc, leg, w.legs[leg].q);
  return w.body.v + w.body.omega.cross(R * pb) + R * (J * w.legs[leg].qdot);
}

inline Vec3 cap_to_friction(const Vec3& f, double mu) {
  Vec3 out = f;
  const double fn = std::max(0.0, f.z());
  out.z() = fn;
  const double ft = std::hypot(f.x(), f.y());
  const double cap = mu * fn;
  if (ft > cap) {
    const double s = ft > 0.0 ? cap / ft : 0.0;
    out.x() *= s;
    out.y() *= s;
  }
  return out;
}

inline void refresh_feet(const RobotDescription& desc, WorldState& w) {
  const Mat3 R = w.rotation();
  for (int i = 0; i < kNumLegs; ++i) {
    w.foot_world[i] = foot_centre_world(desc, w, i, R) - Vec3(0.0, 0.0, desc.foot_radius);
    w.contact[i] = w.foot_world[i].z() <= 0.0;
  }
}

}  // namespace detail

/// Penalty ground reaction at each foot from the current state (explicit law).
inline std::array<Vec3, kNumLegs> contact_forces(const RobotDescription& desc, const WorldState& world,
                                                 const SimConfig& cfg) {
  std::array<Vec3, kNumLegs> out = zero_legs<Vec3>();
  const Mat3 R = world.rotation();
  for (int i = 0; i < kNumLegs; ++i) {
    const Vec3 p = detail::foot_centre_world(desc, world, i, R) - Vec3(0.0, 0.0, desc.foot_radius);
    out[i].setZero();
    if (p.z() > 0.0) continue;
    const Vec3 v = detail::foot_velocity_world(desc, world, i, R);
    const double penetration = -p.z();
    const double fn = std::max(0.0, cfg.contact_stiffness * penetration - cfg.contact_damping * v.z());
    Vec3 f(-cfg.tangential_damping * v.x(), -cfg.tangential_damping * v.y(), fn);
    out[i] = detail::cap_to_friction(f, cfg.mu_at(p.x()));
  }
  return out;
}

/// Sum of scheduled trunk pushes active at time t. Windows are [time, time + duration).
inline Vec3 apply_disturbance(const std::vector<Disturbance>& schedule, double t) {
  Vec3 f = Vec3::Zero();
  for (const auto& d : schedule)
    if (t >= d.time && t < d.time + d.duration) f += d.force;
  return f;
}

inline bool has_fallen(const WorldState& w, const SimConfig& cfg) {
  return w.body.r.z() < cfg.fall_height || std::abs(w.body.theta.x()) > cfg.fall_angle ||
         std::abs(w.body.theta.y()) > cfg.fall_angle;
}

/// Robot standing still with trunk at `height`, feet at the given body-frame
/// x/y positions and resting on the ground with static penetration.
inline WorldState make_standing_world(const RobotDescription& desc, const SimConfig& cfg, double height,
                                      const std::array<Vec2, kNumLegs>& foot_xy) {
  WorldState w;
  w.body.r = Vec3(0.0, 0.0, height);
  const double penetration = desc.total_mass() * cfg.gravity / kNumLegs / cfg.contact_stiffness;
  for (int i = 0; i < kNumLegs; ++i) {
    const Vec3 target(foot_xy[i].x(), foot_xy[i].y(), -height + desc.foot_radius - penetration);
    w.legs[i].q = inverse_kinematics(desc, i, target);
  }
  detail::refresh_feet(desc, w);
  return w;
}

inline WorldState make_standing_world(const RobotDescription& desc, const SimConfig& cfg, double height) {
  std::array<Vec2, kNumLegs> xy;
  for (int i = 0; i < kNumLegs; ++i) xy[i] = desc.nominal_foot(i).head<2>();
  return make_standing_world(desc, cfg, height, xy);
}

/// Advance the world by cfg.dt. Torques are clamped to the torque limit.
/// Legs with a kinematic target (kinematic-legs fidelity only) follow it exactly.
///
/// Trunk and leg velocities are solved together with the contact law
/// linearised in the new velocities; feet that would exceed the Coulomb
/// disc slide with the tangential force tied to the (implicit) normal force.
inline WorldState step(const WorldState& world, const LegTorques& torques, const RobotDescription& desc,
                       const SimConfig& cfg, const KinematicTargets& targets = {}) {
  constexpr int N = 6 + 3 * kNumLegs;
  using MatN = Eigen::Matrix<double, N, N>;
  using VecN = Eigen::Matrix<double, N, 1>;
  using Mat3N = Eigen::Matrix<double, 3, N>;

  const double dt = cfg.dt;
  const Mat3 R = world.rotation();
  const Vec3 g_world(0.0, 0.0, -cfg.gravity);
  const Vec3 g_body = R.transpose() * g_world;
  const double mass = desc.total_mass();
  const Mat3 inertia_world = R * desc.trunk_inertia * R.transpose();
  const Vec3& w = world.body.omega;

  MatN A = MatN::Zero();
  VecN rhs = VecN::Zero();
  A.block<3, 3>(0, 0) = mass * Mat3::Identity();
  A.block<3, 3>(3, 3) = inertia_world;
  rhs.segment<3>(0) = mass * world.body.v + dt * (mass * g_world + apply_disturbance(cfg.disturbances, world.time));
  rhs.segment<3>(3) = inertia_world * w - dt * w.cross(inertia_world * w);

  std::array<bool, kNumLegs> kinematic{};
  std::array<Vec3, kNumLegs> q_kin = zero_legs<Vec3>();
  std::array<Mat3N, kNumLegs> G{};
  std::array<bool, kNumLegs> touching{};
  std::array<double, kNumLegs> mu{};
  std::array<Vec3, kNumLegs> arm = zero_legs<Vec3>();

  for (int i = 0; i < kNumLegs; ++i) {
    const JointState& js = world.legs[i];
    const int c = 6 + 3 * i;
    kinematic[i] = cfg.fidelity == Fidelity::KinematicLegs && targets[i].has_value();
    if (kinematic[i]) {
      q_kin[i] = inverse_kinematics(desc, i, targets[i]->position);
      Vec3 qd = leg_jacobian(desc, i, q_kin[i]).fullPivLu().solve(targets[i]->velocity);
      if (!qd.allFinite()) qd.setZero();
      A.block<3, 3>(c, c) = Mat3::Identity();
      rhs.segment<3>(c) = qd;
    } else {
      Vec3 tau = torques[i];
      for (int j = 0; j < 3; ++j) tau[j] = std::clamp(tau[j], -desc.torque_limit, desc.torque_limit);
      const LegDynamics dyn = leg_dynamics_terms(desc, i, js.q, js.qdot, g_body);
      A.block<3, 3>(c, c) = dyn.mass;
      rhs.segment<3>(c) = dyn.mass * js.qdot + dt * (tau - dyn.coriolis - dyn.gravity);
    }
    const Vec3 pb = forward_kinematics(desc, i, js.q);
    arm[i] = R * pb - Vec3(0.0, 0.0, desc.foot_radius);
    const Vec3 contact_pt = world.body.r + arm[i];
    touching[i] = contact_pt.z() <= 0.0;
    mu[i] = cfg.mu_at(contact_pt.x());
    // Contact-point velocity = G x.
    G[i].setZero();
    G[i].block<3, 3>(0, 0) = Mat3::Identity();
    G[i].block<3, 3>(0, 3) = -skew(arm[i]);
    G[i].block<3, 3>(0, c) = R * leg_jacobian(desc, i, js.q);
  }

  enum class Mode { Off, Stick, Slip };
  std::array<Mode, kNumLegs> mode{};
  std::array<Vec2, kNumLegs> slip_dir = zero_legs<Vec2>();
  std::array<Vec3, kNumLegs> spring = zero_legs<Vec3>();
  for (int i = 0; i < kNumLegs; ++i) {
    mode[i] = touching[i] ? Mode::Stick : Mode::Off;
    const double penetration = -(world.body.r.z() + arm[i].z());
    spring[i] = Vec3(0.0, 0.0, cfg.contact_stiffness * std::max(0.0, penetration));
  }
  const double dn = cfg.contact_damping + dt * cfg.contact_stiffness;
  const double dtan = cfg.tangential_damping;

  // Force law per mode: f = s - D (G x).
  auto law = [&](int i, Vec3& s, Mat3& D) {
    s.setZero();
    D.setZero();
    if (mode[i] == Mode::Stick) {
      s = spring[i];
      D.diagonal() = Vec3(dtan, dtan, dn);
    } else if (mode[i] == Mode::Slip) {
      const Vec3 k(mu[i] * slip_dir[i].x(), mu[i] * slip_dir[i].y(), 1.0);
      s = k * spring[i].z();
      D.col(2) = k * dn;
    }
  };

  VecN x;
  std::array<Vec3, kNumLegs> f = zero_legs<Vec3>();
  for (int pass = 0; pass < 6; ++pass) {
    MatN lhs = A;
    VecN b = rhs;
    for (int i = 0; i < kNumLegs; ++i) {
      if (mode[i] == Mode::Off) continue;
      Vec3 s;
      Mat3 D;
      law(i, s, D);
      Mat3N W = G[i];
      for (int k = 0; k < kNumLegs; ++k)
        if (kinematic[k]) W.block<3, 3>(0, 6 + 3 * k).setZero();
      lhs += dt * W.transpose() * D * G[i];
      b += dt * W.transpose() * s;
    }
    x = lhs.partialPivLu().solve(b);

    bool changed = false;
    for (int i = 0; i < kNumLegs; ++i) {
      f[i].setZero();
      if (mode[i] == Mode::Off) continue;
      Vec3 s;
      Mat3 D;
      law(i, s, D);
      f[i] = s - D * (G[i] * x);
      if (f[i].z() <= 0.0) {
        mode[i] = Mode::Off;
        changed = true;
      } else if (mode[i] == Mode::Stick && std::hypot(f[i].x(), f[i].y()) > mu[i] * f[i].z()) {
        mode[i] = Mode::Slip;
        slip_dir[i] = f[i].head<2>().normalized();
        changed = true;
      }
    }
    if (!changed) break;
  }

  WorldState next = world;
  next.body.v = x.segment<3>(0);
  next.body.omega = x.segment<3>(3);
  next.body.r = world.body.r + 0.5 * dt * (world.body.v + next.body.v);
  const double angle = next.body.omega.norm() * dt;
  if (angle > 0.0) {
    next.orientation =
        (Eigen::Quaterniond(Eigen::AngleAxisd(angle, next.body.omega.normalized())) * world.orientation)
            .normalized();
  }
  next.body.theta = rpy_from_rotation(next.rotation());

  for (int i = 0; i < kNumLegs; ++i) {
    next.grf[i] = mode[i] == Mode::Off ? Vec3::Zero() : detail::cap_to_friction(f[i], mu[i]);
    Vec3 qd = x.segment<3>(6 + 3 * i);
    if (kinematic[i]) {
      next.legs[i].q = q_kin[i];
      next.legs[i].qdot = qd;
      continue;
    }
    Vec3 q = world.legs[i].q + dt * qd;
    for (int j = 0; j < 3; ++j) {
      const auto& lim = desc.joint_limits[j];
      if (q[j] < lim.min) {
        q[j] = lim.min;
        qd[j] = std::max(0.0, qd[j]);
      } else if (q[j] > lim.max) {
        q[j] = lim.max;
        qd[j] = std::min(0.0, qd[j]);
      }
    }
    next.legs[i].q = q;
    next.legs[i].qdot = qd;
  }
  next.time = world.time + dt;
  detail::refresh_feet(desc, next);

  const double limit = cfg.blowup_limit;
  auto bad = [limit](const Vec3& v) { return !v.allFinite() || v.cwiseAbs().maxCoeff() > limit; };
  bool blown = bad(next.body.r) || bad(next.body.v) || bad(next.body.omega);
  for (const auto& l : next.legs) blown = blown || bad(l.q) || bad(l.qdot);
  if (blown) throw NumericalBlowup("sim: state magnitude exceeded blow-up limit at t=" + std::to_string(next.time));
  return next;
}

/// CSV trace header (column order is part of the file format).
inline void write_trace_header(std::ostream& os) {
  os << "time,roll,pitch,yaw,x,y,z,wx,wy,wz,vx,vy,vz";
  for (int i = 0; i < kNumLegs; ++i)
    for (int j = 0; j < 3; ++j) os << ",q_" << leg_name(i) << j;
  for (int i = 0; i < kNumLegs; ++i)
    for (int j = 0; j < 3; ++j) os << ",tau_" << leg_name(i) << j;
  for (int i = 0; i < kNumLegs; ++i) os << ",contact_" << leg_name(i);
  for (int i = 0; i < kNumLegs; ++i)
    for (char c : {'x', 'y', 'z'}) os << ",grf_" << leg_name(i) << c;
  for (int i = 0; i < kNumLegs; ++i)
    for (int j = 0; j < 3; ++j) os << ",qd_" << leg_name(i) << j;
  os << '\n';
}

}  // namespace eemp
