#pragma once

// Placement-set footstep planner: each foot may stay in stance while it is
// inside an ellipse centred beneath its hip; once a stance foot leaves its
// ellipse a swing is planned that returns it to the centre plus a
// Raibert-style progress offset, following a sinusoidal profile.

#include "eemp/quadmodel.hpp"
#include "eemp/simcore.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace eemp {

struct PlannerParams {
  double swing_time = 0.25;   // s
  double step_height = 0.10;  // m
  double robot_height = 0.31; // m
  double ellipse_rx = 0.07;   // m
  double ellipse_ry = 0.05;   // m

  bool operator==(const PlannerParams&) const = default;
};

/// Closed parameter ranges used by the parameter study.
struct ParamBounds {
  double min, max;
  bool contains(double v) const { return v >= min - 1e-12 && v <= max + 1e-12; }
};

namespace study_bounds {
inline constexpr ParamBounds velocity{0.05, 1.00};
inline constexpr ParamBounds swing_time{0.10, 0.25};
inline constexpr ParamBounds step_height{0.05, 0.15};
inline constexpr ParamBounds robot_height{0.28, 0.311};
inline constexpr ParamBounds ellipse_axis{0.01, 0.15};
}  // namespace study_bounds

inline bool within_study_bounds(const PlannerParams& p) {
  using namespace study_bounds;
  return swing_time.contains(p.swing_time) && step_height.contains(p.step_height) &&
         robot_height.contains(p.robot_height) && ellipse_axis.contains(p.ellipse_rx) &&
         ellipse_axis.contains(p.ellipse_ry);
}

/// Parameters that did best on average across the velocity range.
inline PlannerParams baseline_params() { return PlannerParams{0.25, 0.10, 0.31, 0.07, 0.05}; }

// Bit i set = leg i.
using LegMask = std::uint8_t;
inline constexpr LegMask kAllLegs = 0b1111;
inline constexpr bool has_leg(LegMask m, int leg) { return (m >> leg) & 1u; }
inline constexpr int leg_count(LegMask m) { return std::popcount(static_cast<unsigned>(m)); }
inline constexpr LegMask leg_bit(int leg) { return static_cast<LegMask>(1u << leg); }

enum class GaitKind { Trot, Walk, Free };

inline const char* gait_name(GaitKind g) {
  switch (g) {
    case GaitKind::Trot: return "trot";
    case GaitKind::Walk: return "walk";
    case GaitKind::Free: return "free";
  }
  return "?";
}

inline GaitKind parse_gait(const std::string& s) {
  if (s == "trot") return GaitKind::Trot;
  if (s == "walk") return GaitKind::Walk;
  if (s == "free") return GaitKind::Free;
  throw std::invalid_argument("unknown gait '" + s + "' (expected trot, walk or free)");
}

// Diagonal pairs: {FR, RL} and {FL, RR}.
inline constexpr LegMask kDiagonalA = leg_bit(0) | leg_bit(3);
inline constexpr LegMask kDiagonalB = leg_bit(1) | leg_bit(2);
inline constexpr LegMask diagonal_of(int leg) { return (leg == 0 || leg == 3) ? kDiagonalA : kDiagonalB; }

struct GaitMode {
  GaitKind kind = GaitKind::Trot;
  std::array<int, kNumLegs> walk_cycle = {0, 3, 1, 2};  // FR -> RL -> FL -> RR
  LegMask last_swung = 0;                               // legs of the previous swing event

  // A fresh walk starts at the hind leg after FR, so a forward-drifting
  // trunk keeps its centre inside the first support triangle.
  static GaitMode of(GaitKind kind) {
    GaitMode m{kind};
    if (kind == GaitKind::Walk) m.last_swung = leg_bit(m.walk_cycle[0]);
    return m;
  }
  static GaitMode trot() { return of(GaitKind::Trot); }
  static GaitMode walk() { return of(GaitKind::Walk); }
  static GaitMode free() { return of(GaitKind::Free); }
};

struct VelocityCommand {
  double vx = 0.0;        // m/s, body frame
  double vy = 0.0;        // m/s, body frame
  double yaw_rate = 0.0;  // rad/s
};

/// True iff the foot offset from the ellipse centre lies strictly outside.
inline bool ellipse_check(const Vec2& p_cur, const Vec2& p_hip, double rx, double ry) {
  const Vec2 d = p_cur - p_hip;
  return (d.x() * d.x()) / (rx * rx) + (d.y() * d.y()) / (ry * ry) > 1.0;
}

inline double ellipse_residual(const Vec2& d, double rx, double ry) {
  return (d.x() * d.x()) / (rx * rx) + (d.y() * d.y()) / (ry * ry);
}

/// Raibert-style progress term, per axis:
///   stance_fraction * V_des * dT + sqrt(Xz / g) * (V_cur - V_des).
/// `stance_fraction` defaults to one half.
inline Vec2 progress_offset(const Vec2& v_des, const Vec2& v_cur, double swing_time, double height, double g,
                            double stance_fraction = 0.5) {
  if (!(height > 0.0)) throw std::invalid_argument("progress_offset: height must be positive");
  const double k = std::sqrt(height / g);
  return stance_fraction * swing_time * v_des + k * (v_cur - v_des);
}

struct SwingSample {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
};

/// Sinusoidal swing profile, offsets from the lift-off point. The vertical
/// channel runs one full cosine period (apex h at dT/2); the horizontal
/// channels run a half period and arrive at `displacement` at t = dT.
inline SwingSample swing_sample(double t, double swing_time, double step_height, const Vec2& displacement) {
  const double wz = 2.0 * M_PI / swing_time;
  const double wxy = M_PI / swing_time;
  const double az_max = step_height * 0.5 * wz * wz;
  SwingSample s;
  s.a.z() = az_max * std::cos(wz * t);
  s.v.z() = az_max / wz * std::sin(wz * t);
  s.p.z() = az_max / (wz * wz) * (1.0 - std::cos(wz * t));
  for (int k = 0; k < 2; ++k) {
    const double a_max = displacement[k] * 0.5 * wxy * wxy;
    s.a[k] = a_max * std::cos(wxy * t);
    s.v[k] = a_max / wxy * std::sin(wxy * t);
    s.p[k] = a_max / (wxy * wxy) * (1.0 - std::cos(wxy * t));
  }
  return s;
}

/// Legs to lift for this tick, given the legs whose feet left their ellipse.
/// Returns 0 when no leg is eligible. Updates mode.last_swung when nonzero.
inline LegMask select_swing_legs(GaitMode& mode, LegMask triggering, LegMask stance = kAllLegs) {
  triggering &= stance;
  if (triggering == 0) return 0;
  LegMask chosen = 0;
  switch (mode.kind) {
    case GaitKind::Trot: {
      if (mode.last_swung == kDiagonalA) {
        chosen = kDiagonalB;
      } else if (mode.last_swung == kDiagonalB) {
        chosen = kDiagonalA;
      } else {
        for (int i = 0; i < kNumLegs; ++i)
          if (has_leg(triggering, i)) {
            chosen = diagonal_of(i);
            break;
          }
      }
      if ((chosen & stance) != chosen) chosen = 0;
      break;
    }
    case GaitKind::Walk: {
      int last_pos = -1;
      for (int k = 0; k < kNumLegs; ++k)
        if (has_leg(mode.last_swung, mode.walk_cycle[k])) last_pos = k;
      for (int step = 1; step <= kNumLegs; ++step) {
        const int leg = mode.walk_cycle[(last_pos + step + kNumLegs) % kNumLegs];
        if (has_leg(triggering, leg)) {
          chosen = leg_bit(leg);
          break;
        }
      }
      break;
    }
    case GaitKind::Free: {
      // Never the same leg twice in a row; keep at least two legs in stance.
      const LegMask eligible = triggering & static_cast<LegMask>(~mode.last_swung);
      for (int i = 0; i < kNumLegs; ++i) {
        if (!has_leg(eligible, i)) continue;
        const LegMask candidate = chosen | leg_bit(i);
        if (leg_count(stance & static_cast<LegMask>(~candidate)) >= 2) chosen = candidate;
      }
      break;
    }
  }
  if (chosen != 0) mode.last_swung = chosen;
  return chosen;
}

/// Euler-integrated body reference: position follows the commanded planar
/// velocity rotated by the integrated yaw, height fixed, roll/pitch zero.
inline std::vector<BodyState> body_reference(const BodyState& x_cur, const VelocityCommand& cmd, int ticks,
                                             double dt, double height) {
  std::vector<BodyState> out;
  out.reserve(ticks);
  BodyState x = x_cur;
  x.theta.x() = 0.0;
  x.theta.y() = 0.0;
  x.r.z() = height;
  x.omega = Vec3(0.0, 0.0, cmd.yaw_rate);
  for (int k = 0; k < ticks; ++k) {
    const double yaw = x.theta.z();
    const Vec3 v_world(std::cos(yaw) * cmd.vx - std::sin(yaw) * cmd.vy,
                       std::sin(yaw) * cmd.vx + std::cos(yaw) * cmd.vy, 0.0);
    x.v = v_world;
    x.r += dt * v_world;
    x.theta.z() += dt * cmd.yaw_rate;
    out.push_back(x);
  }
  return out;
}

/// Per-tick references handed to the controllers.
struct ReferenceTick {
  BodyState x_ref;
  std::array<Vec3, kNumLegs> p = zero_legs<Vec3>();  // body frame
  std::array<Vec3, kNumLegs> v = zero_legs<Vec3>();
  std::array<Vec3, kNumLegs> a = zero_legs<Vec3>();
  std::array<bool, kNumLegs> stance{true, true, true, true};
};

/// A planned swing: references for every tick of the swing horizon.
/// Foot samples are trunk-relative in the heading frame, except z which is
/// the absolute world height of the foot centre; `MotionPlanner::step` maps
/// them into the body frame with the attitude of the moment.
struct ReferenceBundle {
  std::vector<BodyState> x_ref;
  std::vector<std::array<Vec3, kNumLegs>> p, v, a;
  std::vector<std::array<bool, kNumLegs>> contact;
  std::array<Vec3, kNumLegs> touchdown = zero_legs<Vec3>();  // heading frame, trunk-relative; z is world height
  std::array<Vec3, kNumLegs> liftoff = zero_legs<Vec3>();
  std::array<Vec2, kNumLegs> offset = zero_legs<Vec2>();     // liftoff foot minus ellipse centre
  Vec2 v_des = Vec2::Zero();
  PlannerParams params;

  std::size_t size() const { return contact.size(); }
};

struct PlannerPhase {
  bool swinging = false;
  double elapsed = 0.0;  // s since lift-off
  std::size_t tick = 0;  // next bundle index to emit
  LegMask legs = 0;
};

struct PlannerConfig {
  double dt = 0.002;               // control period
  double gravity = 9.81;
  double stance_fraction = 0.5;    // multiplier on V_des * dT in the progress term
  double walk_stance_fraction = 1.5;  // same, in walk, where stance lasts three swing times
  bool require_contact = true;     // a trigger also needs the foot on or near the ground
  bool retarget = false;           // re-evaluate the progress term during swing
  double contact_tolerance = 0.01; // walk only: m above ground still counted as touching
};

/// Emitted on each swing trigger; serialised to the planner event log.
struct PlanEvent {
  double time = 0.0;
  LegMask triggered = 0;
  LegMask selected = 0;
  std::array<double, kNumLegs> residuals{};
  std::array<Vec2, kNumLegs> displacement = zero_legs<Vec2>();  // planned x/y displacement per selected leg
};

struct PlanOutput {
  ReferenceTick tick;
  PlannerPhase phase;
  std::optional<PlanEvent> event;
};

/// Foot centre relative to the trunk in the yaw-aligned horizontal frame.
inline Vec3 foot_in_heading_frame(const WorldState& w, int leg, double foot_radius) {
  const Vec3 rel = w.foot_world[leg] + Vec3(0.0, 0.0, foot_radius) - w.body.r;
  return rot_z(w.body.theta.z()).transpose() * rel;
}

class MotionPlanner {
 public:
  MotionPlanner(RobotDescription desc, PlannerConfig cfg, GaitMode mode = GaitMode::trot())
      : desc_(std::move(desc)), cfg_(cfg), mode_(mode) {}

  const PlannerPhase& phase() const { return phase_; }
  const GaitMode& mode() const { return mode_; }
  const PlannerConfig& config() const { return cfg_; }
  const ReferenceBundle& bundle() const { return bundle_; }

  /// Gait changes take effect at the next all-stance tick.
  void request_gait(GaitKind kind) { pending_gait_ = kind; }

  /// Centre of the placement ellipse of `leg` in the heading frame.
  Vec2 ellipse_centre(int leg) const { return desc_.nominal_foot(leg).head<2>(); }

  /// Stance flags for the next `ticks` samples spaced `stride` control ticks
  /// apart, starting with the tick emitted last.
  std::vector<std::array<bool, kNumLegs>> upcoming_contacts(int ticks, int stride = 1) const {
    std::vector<std::array<bool, kNumLegs>> out;
    for (int k = 0; k < ticks; ++k) {
      const std::size_t idx = phase_.tick + static_cast<std::size_t>(k * stride);
      if (phase_.swinging && idx >= 1 && idx - 1 < bundle_.size())
        out.push_back(bundle_.contact[idx - 1]);
      else
        out.push_back({true, true, true, true});
    }
    return out;
  }

  /// World-frame ground point where a swinging leg is planned to land,
  /// assuming the trunk keeps its current planar velocity.
  std::optional<Vec3> planned_touchdown(const WorldState& world, int leg) const {
    if (!phase_.swinging || !has_leg(phase_.legs, leg)) return std::nullopt;
    const double remaining = static_cast<double>(bundle_.size() - phase_.tick) * cfg_.dt;
    Vec3 p = world.body.r + remaining * Vec3(world.body.v.x(), world.body.v.y(), 0.0) +
             rot_z(world.body.theta.z()) * Vec3(bundle_.touchdown[leg].x(), bundle_.touchdown[leg].y(), 0.0);
    p.z() = 0.0;
    return p;
  }

  PlanOutput step(const WorldState& world, const VelocityCommand& cmd, const PlannerParams& params) {
    PlanOutput out;
    if (!phase_.swinging) {
      if (pending_gait_) {
        mode_ = GaitMode::of(*pending_gait_);
        pending_gait_.reset();
      }
      if (auto ev = try_trigger(world, cmd, params)) out.event = ev;
    }

    if (phase_.swinging) {
      out.tick = swing_tick(world, phase_.tick);
      ++phase_.tick;
      phase_.elapsed = static_cast<double>(phase_.tick) * cfg_.dt;
      if (phase_.tick >= bundle_.size()) {
        // Swing complete: next tick starts from all-stance.
        phase_ = PlannerPhase{};
      }
    } else {
      out.tick = stance_tick(world, cmd, params);
    }
    out.phase = phase_;
    return out;
  }

 private:
  double stance_fraction() const {
    return mode_.kind == GaitKind::Walk ? cfg_.walk_stance_fraction : cfg_.stance_fraction;
  }

  ReferenceTick stance_tick(const WorldState& world, const VelocityCommand& cmd, const PlannerParams& params) const {
    ReferenceTick t;
    t.x_ref = body_reference(world.body, cmd, 1, cfg_.dt, params.robot_height).front();
    for (int i = 0; i < kNumLegs; ++i) {
      t.p[i] = forward_kinematics(desc_, i, world.legs[i].q);
      t.v[i].setZero();
      t.a[i].setZero();
    }
    return t;
  }

  ReferenceTick swing_tick(const WorldState& world, std::size_t k) const {
    ReferenceTick t;
    t.x_ref = bundle_.x_ref[k];
    t.stance = bundle_.contact[k];
    const Mat3 body_from_heading = world.rotation().transpose() * rot_z(world.body.theta.z());
    for (int i = 0; i < kNumLegs; ++i) {
      if (t.stance[i]) {
        t.p[i] = forward_kinematics(desc_, i, world.legs[i].q);
        t.v[i].setZero();
        t.a[i].setZero();
        continue;
      }
      Vec3 ph = bundle_.p[k][i], vh = bundle_.v[k][i], ah = bundle_.a[k][i];
      if (cfg_.retarget) {
        const PlannerParams& pp = bundle_.params;
        const Vec2 v_cur = (rot_z(world.body.theta.z()).transpose() * world.body.v).head<2>();
        const Vec2 prog = progress_offset(bundle_.v_des, v_cur, pp.swing_time, pp.robot_height, cfg_.gravity,
                                          stance_fraction());
        const double tk = std::min(static_cast<double>(k + 1) * cfg_.dt, pp.swing_time);
        const SwingSample sw = swing_sample(tk, pp.swing_time, pp.step_height, -bundle_.offset[i] + prog);
        ph = bundle_.liftoff[i] + sw.p;
        vh = sw.v;
        ah = sw.a;
      }
      t.p[i] = body_from_heading * Vec3(ph.x(), ph.y(), ph.z() - world.body.r.z());
      t.v[i] = body_from_heading * Vec3(vh.x(), vh.y(), vh.z() - world.body.v.z());
      t.a[i] = body_from_heading * ah;
    }
    return t;
  }

  std::optional<PlanEvent> try_trigger(const WorldState& world, const VelocityCommand& cmd,
                                       const PlannerParams& params) {
    PlanEvent ev;
    ev.time = world.time;
    LegMask triggering = 0;
    std::array<Vec3, kNumLegs> rel = zero_legs<Vec3>();
    std::array<Vec2, kNumLegs> offset = zero_legs<Vec2>();
    for (int i = 0; i < kNumLegs; ++i) {
      rel[i] = foot_in_heading_frame(world, i, desc_.foot_radius);
      offset[i] = rel[i].head<2>() - ellipse_centre(i);
      ev.residuals[i] = ellipse_residual(offset[i], params.ellipse_rx, params.ellipse_ry);
      const bool in_contact = !cfg_.require_contact || world.contact[i] ||
                              (mode_.kind == GaitKind::Walk && world.foot_world[i].z() <= cfg_.contact_tolerance);
      if (in_contact && ellipse_check(rel[i].head<2>(), ellipse_centre(i), params.ellipse_rx, params.ellipse_ry))
        triggering |= leg_bit(i);
    }
    if (triggering == 0) return std::nullopt;
    ev.triggered = triggering;
    const LegMask legs = select_swing_legs(mode_, triggering, kAllLegs);
    ev.selected = legs;
    if (legs == 0) return ev;

    // Heading-frame velocities for the progress term.
    const Mat3 Rz = rot_z(world.body.theta.z());
    const Vec2 v_cur = (Rz.transpose() * world.body.v).head<2>();
    const Vec2 v_des(cmd.vx, cmd.vy);
    const Vec2 prog =
        progress_offset(v_des, v_cur, params.swing_time, params.robot_height, cfg_.gravity, stance_fraction());

    const auto ticks = static_cast<std::size_t>(std::ceil(params.swing_time / cfg_.dt - 1e-9));
    bundle_ = ReferenceBundle{};
    bundle_.x_ref = body_reference(world.body, cmd, static_cast<int>(ticks), cfg_.dt, params.robot_height);
    bundle_.p.resize(ticks);
    bundle_.v.resize(ticks);
    bundle_.a.resize(ticks);
    bundle_.contact.resize(ticks);
    bundle_.v_des = v_des;
    bundle_.params = params;

    for (int i = 0; i < kNumLegs; ++i) {
      const bool swing = has_leg(legs, i);
      const Vec2 d = -offset[i] + prog;
      const Vec3 liftoff(rel[i].x(), rel[i].y(), world.foot_world[i].z() + desc_.foot_radius);
      bundle_.liftoff[i] = liftoff;
      bundle_.offset[i] = offset[i];
      if (swing) {
        ev.displacement[i] = d;
        bundle_.touchdown[i] = liftoff + Vec3(d.x(), d.y(), 0.0);
      }
      for (std::size_t k = 0; k < ticks; ++k) {
        bundle_.contact[k][i] = !swing;
        if (swing) {
          const double t = std::min(static_cast<double>(k + 1) * cfg_.dt, params.swing_time);
          const SwingSample s = swing_sample(t, params.swing_time, params.step_height, d);
          bundle_.p[k][i] = liftoff + s.p;
          bundle_.v[k][i] = s.v;
          bundle_.a[k][i] = s.a;
        } else {
          bundle_.p[k][i] = liftoff;
          bundle_.v[k][i].setZero();
          bundle_.a[k][i].setZero();
        }
      }
    }
    phase_ = PlannerPhase{true, 0.0, 0, legs};
    return ev;
  }

  RobotDescription desc_;
  PlannerConfig cfg_;
  GaitMode mode_;
  std::optional<GaitKind> pending_gait_;
  PlannerPhase phase_;
  ReferenceBundle bundle_;
};

}  // namespace eemp
