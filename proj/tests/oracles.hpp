#pragma once

// Reference implementations used only by the tests. They rebuild the leg
// from homogeneous transforms and joint axes, sharing no code with the
// library's kinematics.

#include "eemp/planner.hpp"
#include "eemp/simcore.hpp"

#include <Eigen/Geometry>

#include <random>

namespace oracle {

using eemp::Mat3;
using eemp::Vec3;

struct Frame {
  Vec3 origin;
  Vec3 axis;
};

// Joint frames and the tracked point for one leg. `lengths` scales the
// abduction, thigh and calf segments of the chain up to the point.
struct Chain {
  std::array<Frame, 3> joints;
  Vec3 point;
  int links = 3;  // number of joints that move the point
};

inline Chain build(const eemp::RobotDescription& d, int leg, const Vec3& q, int link = 2, double calf_fraction = 1.0) {
  const double side = (leg == 1 || leg == 3) ? 1.0 : -1.0;
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  T.translate(d.hip_offsets[leg]);
  Chain c;
  c.joints[0] = {T.translation(), T.linear() * Vec3::UnitX()};
  T.rotate(Eigen::AngleAxisd(q[0], Vec3::UnitX()));
  const Vec3 o(0.0, side * d.abduction_offset, 0.0);
  if (link == 0) {
    c.point = T * (0.5 * o);
    c.links = 1;
    return c;
  }
  T.translate(o);
  c.joints[1] = {T.translation(), T.linear() * Vec3::UnitY()};
  T.rotate(Eigen::AngleAxisd(q[1], Vec3::UnitY()));
  const Vec3 t(0.0, 0.0, -d.thigh_length);
  if (link == 1) {
    c.point = T * (0.5 * t);
    c.links = 2;
    return c;
  }
  T.translate(t);
  c.joints[2] = {T.translation(), T.linear() * Vec3::UnitY()};
  T.rotate(Eigen::AngleAxisd(q[2], Vec3::UnitY()));
  c.point = T * Vec3(0.0, 0.0, -d.calf_length * calf_fraction);
  c.links = 3;
  return c;
}

inline Vec3 foot(const eemp::RobotDescription& d, int leg, const Vec3& q) { return build(d, leg, q).point; }

// Geometric Jacobian: column k = axis_k x (point - origin_k).
inline Mat3 jacobian(const Chain& c) {
  Mat3 J = Mat3::Zero();
  for (int k = 0; k < c.links; ++k) J.col(k) = c.joints[k].axis.cross(c.point - c.joints[k].origin);
  return J;
}

// Acceleration of the point for zero joint acceleration, by propagating
// angular velocity and acceleration down the chain.
inline Vec3 bias_acceleration(const Chain& c, const Vec3& qd) {
  Vec3 w = Vec3::Zero(), alpha = Vec3::Zero(), a = Vec3::Zero();
  for (int k = 0; k < c.links; ++k) {
    const Vec3 axis_rate = w.cross(c.joints[k].axis) * qd[k];
    alpha += axis_rate;
    w += c.joints[k].axis * qd[k];
    const Vec3 next = (k + 1 < c.links) ? c.joints[k + 1].origin : c.point;
    const Vec3 r = next - c.joints[k].origin;
    a += alpha.cross(r) + w.cross(w.cross(r));
  }
  return a;
}

inline Chain mass_chain(const eemp::RobotDescription& d, int leg, const Vec3& q, int link) {
  return build(d, leg, q, link, link == 2 ? 0.4 : 1.0);
}

struct Dynamics {
  Mat3 M = Mat3::Zero();
  Vec3 V = Vec3::Zero();
  Vec3 G = Vec3::Zero();
};

inline Dynamics dynamics(const eemp::RobotDescription& d, int leg, const Vec3& q, const Vec3& qd, const Vec3& g) {
  Dynamics out;
  for (int link = 0; link < 3; ++link) {
    const Chain c = mass_chain(d, leg, q, link);
    const Mat3 J = jacobian(c);
    const double m = d.link_masses[link];
    out.M += m * J.transpose() * J;
    out.V += m * J.transpose() * bias_acceleration(c, qd);
    out.G -= m * J.transpose() * g;
  }
  return out;
}

inline double potential(const eemp::RobotDescription& d, int leg, const Vec3& q, const Vec3& g) {
  double u = 0.0;
  for (int link = 0; link < 3; ++link) u -= d.link_masses[link] * g.dot(mass_chain(d, leg, q, link).point);
  return u;
}

inline Vec3 random_q(std::mt19937_64& rng, const eemp::RobotDescription& d) {
  Vec3 q;
  for (int j = 0; j < 3; ++j) {
    std::uniform_real_distribution<double> u(d.joint_limits[j].min, d.joint_limits[j].max);
    q[j] = u(rng);
  }
  return q;
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

// A trunk gliding over planted feet. The trigger must fire exactly at the
// first tick some foot leaves its ellipse.
struct Glide {
  eemp::RobotDescription desc;
  eemp::WorldState world;
  double yaw = 0.0;
  eemp::Vec2 v_heading = eemp::Vec2::Zero();
  std::array<eemp::Vec2, eemp::kNumLegs> offset = eemp::zero_legs<eemp::Vec2>();  // foot minus ellipse centre at t = 0, heading frame

  void place() {
    world.body.r = Vec3(0.4, -0.7, 0.31);
    world.body.theta = Vec3(0, 0, yaw);
    world.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
    const Mat3 Rz = eemp::rot_z(yaw);
    world.body.v = Rz * Vec3(v_heading.x(), v_heading.y(), 0.0);
    for (int i = 0; i < eemp::kNumLegs; ++i) {
      const eemp::Vec2 h = desc.nominal_foot(i).head<2>() + offset[i];
      world.foot_world[i] = world.body.r + Rz * Vec3(h.x(), h.y(), 0.0);
      world.foot_world[i].z() = 0.0;
      world.contact[i] = true;
      world.legs[i].q = Vec3(0.0, 0.7, -1.4);
    }
  }

  void advance(double dt) {
    world.body.r += dt * world.body.v;
    world.time += dt;
  }

  // Independent residual: rotate the world offset back by -yaw.
  bool outside(const eemp::PlannerParams& p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    for (int i = 0; i < eemp::kNumLegs; ++i) {
      const double dx = world.foot_world[i].x() - world.body.r.x(), dy = world.foot_world[i].y() - world.body.r.y();
      const double hx = c * dx + s * dy - desc.nominal_foot(i).x();
      const double hy = -s * dx + c * dy - desc.nominal_foot(i).y();
      if (hx * hx / (p.ellipse_rx * p.ellipse_rx) + hy * hy / (p.ellipse_ry * p.ellipse_ry) > 1.0) return true;
    }
    return false;
  }
};

}  // namespace oracle
