#pragma once

// Kinematics and per-leg dynamics of a point-foot quadruped with 3-DoF legs
// (abduction about body x, hip pitch and knee about the rotated y axis).
//
// Zero-angle convention: q = (0, 0, 0) is a fully stretched leg pointing
// straight down, foot at hip_offset + (0, side * abduction_offset, -(thigh + calf)).
// Positive hip/knee pitch swings the distal link towards -x.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace eemp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec12 = Eigen::Matrix<double, 12, 1>;

inline constexpr int kNumLegs = 4;

/// Per-leg array of zero vectors; Eigen leaves default-constructed vectors uninitialised.
template <class V>
std::array<V, kNumLegs> zero_legs() {
  std::array<V, kNumLegs> a;
  a.fill(V::Zero());
  return a;
}

// Leg order used everywhere: FR, FL, RR, RL.
enum class Leg : int { FR = 0, FL = 1, RR = 2, RL = 3 };

inline constexpr const char* leg_name(int leg) {
  constexpr const char* names[] = {"FR", "FL", "RR", "RL"};
  return names[leg];
}

// +1 for left legs, -1 for right legs.
inline constexpr double side_sign(int leg) { return (leg == 1 || leg == 3) ? 1.0 : -1.0; }
// +1 for front legs, -1 for rear legs.
inline constexpr double front_sign(int leg) { return leg < 2 ? 1.0 : -1.0; }

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnreachableTarget : public ModelError {
 public:
  using ModelError::ModelError;
};

class NearSingularity : public ModelError {
 public:
  using ModelError::ModelError;
};

struct JointLimit {
  double min = -M_PI;
  double max = M_PI;
};

/// Physical description of the robot. The defaults are illustrative A1-like
/// numbers, not measured data.
struct RobotDescription {
  double trunk_mass = 12.0;
  Mat3 trunk_inertia = Eigen::Vector3d(0.05, 0.15, 0.17).asDiagonal();
  std::array<Vec3, kNumLegs> hip_offsets = {Vec3(0.183, -0.047, 0.0), Vec3(0.183, 0.047, 0.0),
                                            Vec3(-0.183, -0.047, 0.0), Vec3(-0.183, 0.047, 0.0)};
  double abduction_offset = 0.08505;
  double thigh_length = 0.2;
  double calf_length = 0.2;
  // Point masses: abduction link, thigh, calf.
  std::array<double, 3> link_masses = {0.5, 0.8, 0.2};
  std::array<JointLimit, 3> joint_limits = {JointLimit{-0.8, 0.8}, JointLimit{-1.0, 3.5},
                                            JointLimit{-2.7, -0.05}};
  double torque_limit = 33.5;
  double default_height = 0.31;
  double foot_radius = 0.02;

  double leg_mass() const { return link_masses[0] + link_masses[1] + link_masses[2]; }
  double total_mass() const { return trunk_mass + kNumLegs * leg_mass(); }

  /// Hip-pitch joint origin at zero abduction, i.e. where a vertical leg's
  /// foot sits in x/y. Ellipse centres are placed beneath this point.
  Vec3 nominal_foot(int leg) const {
    return hip_offsets[leg] + Vec3(0.0, side_sign(leg) * abduction_offset, 0.0);
  }

  void validate() const {
    auto positive = [](double v, const char* what) {
      if (!(v > 0.0)) throw ModelError(std::string("robot: ") + what + " must be positive");
    };
    positive(trunk_mass, "trunk_mass");
    positive(abduction_offset, "abduction_offset");
    positive(thigh_length, "thigh_length");
    positive(calf_length, "calf_length");
    positive(torque_limit, "torque_limit");
    positive(default_height, "default_height");
    for (double m : link_masses) positive(m, "link_masses");
    if (foot_radius < 0.0) throw ModelError("robot: foot_radius must be non-negative");
    if (!trunk_inertia.isApprox(trunk_inertia.transpose(), 1e-12))
      throw ModelError("robot: trunk_inertia must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> eig(trunk_inertia);
    if (eig.eigenvalues().minCoeff() <= 0.0)
      throw ModelError("robot: trunk_inertia must be positive definite");
    for (const auto& lim : joint_limits)
      if (!(lim.min < lim.max)) throw ModelError("robot: joint limit min must be below max");
    // Mirror symmetry of the hip layout.
    const auto& h = hip_offsets;
    auto mirrored = [](const Vec3& a, const Vec3& b, double sx, double sy) {
      return std::abs(a.x() - sx * b.x()) < 1e-9 && std::abs(a.y() - sy * b.y()) < 1e-9 &&
             std::abs(a.z() - b.z()) < 1e-9;
    };
    if (!mirrored(h[0], h[1], 1, -1) || !mirrored(h[2], h[3], 1, -1) || !mirrored(h[0], h[2], -1, 1) ||
        !mirrored(h[1], h[3], -1, 1))
      throw ModelError("robot: hip_offsets must be mirror symmetric in x and y");
  }
};

struct JointState {
  Vec3 q = Vec3::Zero();
  Vec3 qdot = Vec3::Zero();
};

/// Trunk state X = [theta, r, omega, v]. theta is roll/pitch/yaw (ZYX),
/// omega and v are expressed in the world frame.
struct BodyState {
  Vec3 theta = Vec3::Zero();
  Vec3 r = Vec3::Zero();
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();

  Vec12 vector() const {
    Vec12 x;
    x << theta, r, omega, v;
    return x;
  }
  static BodyState from_vector(const Vec12& x) {
    return BodyState{x.segment<3>(0), x.segment<3>(3), x.segment<3>(6), x.segment<3>(9)};
  }
};

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

/// World-from-body rotation for roll/pitch/yaw (R = Rz * Ry * Rx).
inline Mat3 rotation_from_rpy(const Vec3& rpy) { return rot_z(rpy.z()) * rot_y(rpy.y()) * rot_x(rpy.x()); }

inline Vec3 rpy_from_rotation(const Mat3& R) {
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  const double roll = std::atan2(R(2, 1), R(2, 2));
  const double yaw = std::atan2(R(1, 0), R(0, 0));
  return {roll, pitch, yaw};
}

namespace detail {

// Geometry of one leg chain: p = hip + A(q0) (o + B(q1) (t + C(q2) c)).
struct LegChain {
  Vec3 hip, o, t, c;
};

inline LegChain chain_to(const RobotDescription& d, int leg, int link, double calf_fraction = 1.0) {
  LegChain ch;
  ch.hip = d.hip_offsets[leg];
  ch.o = Vec3(0.0, side_sign(leg) * d.abduction_offset, 0.0);
  ch.t = Vec3(0.0, 0.0, -d.thigh_length);
  ch.c = Vec3(0.0, 0.0, -d.calf_length * calf_fraction);
  if (link == 0) {  // midpoint of the abduction link
    ch.o *= 0.5;
    ch.t.setZero();
    ch.c.setZero();
  } else if (link == 1) {  // thigh midpoint
    ch.t *= 0.5;
    ch.c.setZero();
  }
  return ch;
}

inline Vec3 chain_position(const LegChain& ch, const Vec3& q) {
  return ch.hip + rot_x(q[0]) * (ch.o + rot_y(q[1]) * (ch.t + rot_y(q[2]) * ch.c));
}

inline Mat3 chain_jacobian(const LegChain& ch, const Vec3& q) {
  const Mat3 A = rot_x(q[0]), B = rot_y(q[1]), C = rot_y(q[2]);
  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY();
  const Vec3 w2 = ch.t + C * ch.c;
  const Vec3 w1 = ch.o + B * w2;
  Mat3 J;
  J.col(0) = A * ex.cross(w1);
  J.col(1) = A * B * ey.cross(w2);
  J.col(2) = A * B * C * ey.cross(ch.c);
  return J;
}

// Jdot * qdot for the chain point (velocity-product acceleration).
inline Vec3 chain_bias_acceleration(const LegChain& ch, const Vec3& q, const Vec3& qd) {
  const Mat3 A = rot_x(q[0]), B = rot_y(q[1]), C = rot_y(q[2]);
  const Mat3 Sx = skew(Vec3::UnitX()), Sy = skew(Vec3::UnitY());
  const double a = qd[0], b = qd[1], c = qd[2];
  const Vec3 w2 = ch.t + C * ch.c;
  const Vec3 w1 = ch.o + B * w2;
  const Vec3 w2dot = C * Sy * ch.c * c;
  const Vec3 w1dot = B * Sy * w2 * b + B * w2dot;

  Vec3 acc = A * Sx * Sx * w1 * a * a + A * Sx * w1dot * a;
  acc += A * Sx * B * Sy * w2 * a * b + A * B * Sy * Sy * w2 * b * b + A * B * Sy * w2dot * b;
  acc += A * Sx * B * C * Sy * ch.c * a * c + A * B * Sy * C * Sy * ch.c * b * c +
         A * B * C * Sy * Sy * ch.c * c * c;
  return acc;
}

// Link centre fractions used for the point-mass model (calf mass at 0.4 of its length).
inline LegChain mass_point_chain(const RobotDescription& d, int leg, int link) {
  return link == 2 ? chain_to(d, leg, 2, 0.4) : chain_to(d, leg, link);
}

}  // namespace detail

/// Foot position in the body frame.
inline Vec3 forward_kinematics(const RobotDescription& desc, int leg, const Vec3& q) {
  return detail::chain_position(detail::chain_to(desc, leg, 2), q);
}

/// d(foot position)/dq in the body frame.
inline Mat3 leg_jacobian(const RobotDescription& desc, int leg, const Vec3& q) {
  return detail::chain_jacobian(detail::chain_to(desc, leg, 2), q);
}

/// Knee-backward inverse kinematics (knee angle <= 0).
inline Vec3 inverse_kinematics(const RobotDescription& desc, int leg, const Vec3& p) {
  const double l1 = desc.thigh_length, l2 = desc.calf_length;
  const double oy = side_sign(leg) * desc.abduction_offset;
  const Vec3 rel = p - desc.hip_offsets[leg];
  const double rho2 = rel.y() * rel.y() + rel.z() * rel.z();
  if (rho2 < oy * oy) throw UnreachableTarget("inverse_kinematics: target inside abduction offset");
  // In-plane height below the hip-pitch joint after abduction.
  const double zp = -std::sqrt(rho2 - oy * oy);
  const double q0 = std::atan2(rel.z(), rel.y()) - std::atan2(zp, oy);

  const double dist = std::hypot(rel.x(), zp);
  constexpr double slack = 1e-12;
  if (dist > l1 + l2 + slack || dist < std::abs(l1 - l2) - slack)
    throw UnreachableTarget("inverse_kinematics: target outside reach annulus");

  const double cos_knee = std::clamp((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double q2 = -std::acos(cos_knee);
  const double alpha = std::atan2(-rel.x(), -zp);
  const double beta = std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
  return {std::remainder(q0, 2.0 * M_PI), alpha - beta, q2};
}

struct LegDynamics {
  Mat3 mass;       // M(q)
  Vec3 coriolis;   // V(q, qdot)
  Vec3 gravity;    // G(q)
};

/// Joint-space dynamics of one leg on a fixed base: M qdd + V + G = tau.
/// `gravity_body` is the gravity acceleration expressed in the body frame.
inline LegDynamics leg_dynamics_terms(const RobotDescription& desc, int leg, const Vec3& q, const Vec3& qdot,
                                      const Vec3& gravity_body = Vec3(0.0, 0.0, -9.81)) {
  LegDynamics out{Mat3::Zero(), Vec3::Zero(), Vec3::Zero()};
  for (int link = 0; link < 3; ++link) {
    const auto ch = detail::mass_point_chain(desc, leg, link);
    const double m = desc.link_masses[link];
    const Mat3 J = detail::chain_jacobian(ch, q);
    out.mass += m * J.transpose() * J;
    out.coriolis += m * J.transpose() * detail::chain_bias_acceleration(ch, q, qdot);
    out.gravity -= m * J.transpose() * gravity_body;
  }
  return out;
}

/// Lambda = (J M^-1 J^T)^-1; throws NearSingularity when cond(J) exceeds `cond_cap`.
inline Mat3 operational_mass(const Mat3& J, const Mat3& M, double cond_cap = 1e6) {
  Eigen::JacobiSVD<Mat3> svd(J);
  const auto& s = svd.singularValues();
  if (!(s(2) > 0.0) || s(0) / s(2) > cond_cap)
    throw NearSingularity("operational_mass: Jacobian condition number above cap");
  const Mat3 inv = J * M.ldlt().solve(J.transpose());
  Mat3 lambda = inv.inverse();
  return 0.5 * (lambda + lambda.transpose());
}

inline Mat3 operational_mass(const RobotDescription& desc, int leg, const Vec3& q, double cond_cap = 1e6) {
  const auto dyn = leg_dynamics_terms(desc, leg, q, Vec3::Zero());
  return operational_mass(leg_jacobian(desc, leg, q), dyn.mass, cond_cap);
}

/// (J M^-1 J^T + eps I)^-1, finite at singular configurations.
inline Mat3 damped_operational_mass(const Mat3& J, const Mat3& M, double eps = 1e-6) {
  const Mat3 inv = J * M.ldlt().solve(J.transpose()) + eps * Mat3::Identity();
  Mat3 lambda = inv.ldlt().solve(Mat3::Identity());
  return 0.5 * (lambda + lambda.transpose());
}

}  // namespace eemp
