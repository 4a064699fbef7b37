#pragma once

// Run evaluation: cost of transport, force manipulability, velocity tracking.

#include "eemp/quadmodel.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace eemp {

class InsufficientDistance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularJacobian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceSample {
  double time = 0.0;
  BodyState body;
  Vec12 q = Vec12::Zero();
  Vec12 qdot = Vec12::Zero();
  Vec12 tau = Vec12::Zero();
  std::array<bool, kNumLegs> contact{};
  std::array<bool, kNumLegs> stance{};  // planner stance flags
  Vec2 v_cmd = Vec2::Zero();            // commanded planar velocity, heading frame
};

struct RunTrace {
  double dt = 0.0;
  std::vector<TraceSample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Sum of positive joint power times dt over samples [begin, end).
inline double positive_work(const RunTrace& trace, std::size_t begin, std::size_t end) {
  double e = 0.0;
  for (std::size_t k = begin; k < end; ++k) e += std::max(trace.samples[k].qdot.dot(trace.samples[k].tau), 0.0);
  return e * trace.dt;
}

inline double horizontal_distance(const RunTrace& trace, std::size_t begin, std::size_t last) {
  return (trace.samples[last].body.r.head<2>() - trace.samples[begin].body.r.head<2>()).norm();
}

/// Mechanical cost of transport over samples [begin, end), in J/m.
inline double cost_of_transport(const RunTrace& trace, std::size_t begin, std::size_t end,
                                double distance_floor = 1e-3) {
  if (end > trace.size() || begin >= end) throw std::invalid_argument("cost_of_transport: bad window");
  const double d = horizontal_distance(trace, begin, end - 1);
  if (!(d > distance_floor))
    throw InsufficientDistance("cost_of_transport: window travelled " + std::to_string(d) + " m");
  return positive_work(trace, begin, end) / d;
}

inline double cost_of_transport(const RunTrace& trace, double distance_floor = 1e-3) {
  return cost_of_transport(trace, 0, trace.size(), distance_floor);
}

/// sqrt(max eig / min eig) of (J J')^-1.
inline double manipulability(const Mat3& J, double condition_cap = 1e8) {
  const Eigen::JacobiSVD<Mat3> svd(J);
  const Vec3 s = svd.singularValues();
  if (!(s(2) > 0.0) || s(0) / s(2) > condition_cap) throw SingularJacobian("manipulability: singular Jacobian");
  const Mat3 U = (J * J.transpose()).inverse();
  const Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (U + U.transpose()));
  const Vec3 ev = es.eigenvalues();
  return std::sqrt(ev.maxCoeff() / ev.minCoeff());
}

/// Mean absolute planar velocity error after `skip` seconds. The error is
/// the norm of the difference between commanded and realised velocity in
/// the heading frame.
inline double tracking_error(const RunTrace& trace, double skip = 1.0) {
  if (trace.samples.empty()) return 0.0;
  const double t0 = trace.samples.front().time;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : trace.samples) {
    if (s.time - t0 < skip) continue;
    const Vec2 v = (rot_z(s.body.theta.z()).transpose() * s.body.v).head<2>();
    sum += (v - s.v_cmd).norm();
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Time-mean manipulability over stance legs.
inline double mean_stance_manipulability(const RobotDescription& desc, const RunTrace& trace, std::size_t stride = 1) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < trace.size(); k += stride) {
    const auto& s = trace.samples[k];
    for (int i = 0; i < kNumLegs; ++i) {
      if (!s.stance[i]) continue;
      try {
        sum += manipulability(leg_jacobian(desc, i, s.q.segment<3>(3 * i)));
        ++n;
      } catch (const SingularJacobian&) {
      }
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

enum class RunStatus { Ok, Stationary, Fell, Blowup };

inline const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Stationary: return "stationary";
    case RunStatus::Fell: return "fell";
    case RunStatus::Blowup: return "blowup";
  }
  return "?";
}

struct MetricsReport {
  std::optional<double> cot;                // J/m, absent when stationary or failed
  std::optional<double> cot_dimensionless;  // E / (m g d)
  double manipulability_mean = 0.0;
  double tracking_mae = 0.0;                // m/s
  double distance = 0.0;                    // m
  double energy = 0.0;                      // J
  double duration = 0.0;                    // s
  double mean_speed = 0.0;                  // m/s
  int steps = 0;                            // swing events
  bool fell = false;
  RunStatus status = RunStatus::Ok;
};

inline MetricsReport evaluate(const RobotDescription& desc, const RunTrace& trace, double gravity = 9.81,
                              double tracking_skip = 1.0) {
  MetricsReport r;
  if (trace.samples.empty()) {
    r.status = RunStatus::Stationary;
    return r;
  }
  const std::size_t n = trace.size();
  r.energy = positive_work(trace, 0, n);
  r.distance = horizontal_distance(trace, 0, n - 1);
  r.duration = trace.samples.back().time - trace.samples.front().time + trace.dt;
  r.mean_speed = r.duration > 0.0 ? r.distance / r.duration : 0.0;
  r.tracking_mae = tracking_error(trace, tracking_skip);
  r.manipulability_mean = mean_stance_manipulability(desc, trace, 10);
  try {
    r.cot = cost_of_transport(trace);
    r.cot_dimensionless = r.energy / (desc.total_mass() * gravity * r.distance);
  } catch (const InsufficientDistance&) {
    r.status = RunStatus::Stationary;
  }
  return r;
}

}  // namespace eemp
