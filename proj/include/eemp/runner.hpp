#pragma once

// Closed-loop locomotion: planner + swing/stance control + simulator.
// Rates: physics at SimConfig::dt, control every `control_every` physics
// steps, MPC every `mpc_every` control ticks with forces held in between.

#include "eemp/control.hpp"
#include "eemp/metrics.hpp"
#include "eemp/planner.hpp"
#include "eemp/simcore.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>

namespace eemp {

struct ControllerConfig {
  int control_every = 2;  // physics steps per control tick
  int mpc_every = 5;      // control ticks per MPC solve
  SwingGains swing;
  MpcConfig mpc;
  double stance_fraction = 0.5;
  double walk_stance_fraction = 1.5;
  bool retarget = true;
  double stance_kd = 10.0;  // damping of foot world velocity on stance legs, N s/m
  double anchor_limit = 0.1;  // max distance between reference anchor and trunk, m
  double max_accel = 1.0;     // slew limit on the commanded planar velocity, m/s^2
  double max_yaw_accel = 2.0; // rad/s^2
  // Walk only: pull of the MPC reference towards the stance-foot centroid, per heading axis.
  double support_shift_lateral = 1.0;
  double support_shift_forward = 1.0;
};

using VelocityProfile = std::function<VelocityCommand(double)>;

inline VelocityProfile constant_velocity(double vx, double vy = 0.0, double yaw_rate = 0.0) {
  return [=](double) { return VelocityCommand{vx, vy, yaw_rate}; };
}

struct RunOptions {
  double duration = 10.0;
  GaitKind gait = GaitKind::Trot;
  PlannerParams params = baseline_params();
  VelocityProfile velocity = constant_velocity(0.0);
  bool record_trace = true;
  double initial_noise = 0.0;       // std-dev of initial trunk velocity noise, m/s
  std::ostream* event_log = nullptr;  // planner + MPC events as JSON lines
};

struct MpcDiagnostics {
  int solves = 0;
  int failures = 0;
  double max_kkt = 0.0;
  double max_violation = 0.0;
  int max_iterations = 0;
};

inline nlohmann::json event_json(const PlanEvent& ev) {
  nlohmann::json j;
  j["type"] = "step";
  j["time"] = ev.time;
  nlohmann::json trig = nlohmann::json::array(), sel = nlohmann::json::array(), disp = nlohmann::json::object();
  for (int i = 0; i < kNumLegs; ++i) {
    if (has_leg(ev.triggered, i)) trig.push_back(leg_name(i));
    if (has_leg(ev.selected, i)) {
      sel.push_back(leg_name(i));
      disp[leg_name(i)] = {ev.displacement[i].x(), ev.displacement[i].y()};
    }
  }
  j["triggered"] = trig;
  j["selected"] = sel;
  j["residuals"] = ev.residuals;
  j["displacement"] = disp;
  return j;
}

/// One robot under closed-loop control. Owns all mutable state of a run.
class LocomotionController {
 public:
  LocomotionController(RobotDescription desc, SimConfig sim, ControllerConfig ctrl, GaitKind gait,
                       PlannerParams params)
      : desc_(std::move(desc)),
        sim_(std::move(sim)),
        ctrl_(ctrl),
        params_(params),
        planner_(desc_, planner_config(sim_, ctrl),
                 GaitMode::of(gait)) {
    desc_.validate();
    sim_.validate();
    ctrl_.mpc.validate();
    world_ = make_standing_world(desc_, sim_, params_.robot_height);
    anchor_ = world_.body;
    const Vec3 f(0.0, 0.0, desc_.total_mass() * sim_.gravity / kNumLegs);
    forces_.fill(f);
    stance_.fill(true);
  }

  const WorldState& world() const { return world_; }
  WorldState& mutable_world() { return world_; }
  const MotionPlanner& planner() const { return planner_; }
  const PlannerParams& params() const { return params_; }
  const MpcDiagnostics& mpc_diagnostics() const { return diag_; }
  const std::array<bool, kNumLegs>& stance() const { return stance_; }
  const LegTorques& torques() const { return torques_; }
  const RobotDescription& description() const { return desc_; }
  const SimConfig& sim_config() const { return sim_; }
  SimConfig& mutable_sim_config() { return sim_; }
  int steps_taken() const { return steps_; }
  void set_event_log(std::ostream* os) { events_ = os; }

  void set_params(const PlannerParams& p) { params_ = p; }
  void request_gait(GaitKind g) { planner_.request_gait(g); }

  /// One control tick: plan, control, then `control_every` physics steps.
  /// `on_step` sees every physics state together with the torques applied.
  template <class OnStep>
  void tick(const VelocityCommand& raw_cmd, OnStep&& on_step) {
    const double ctrl_dt = sim_.dt * ctrl_.control_every;
    const VelocityCommand cmd = slew(raw_cmd, ctrl_dt);
    advance_anchor(cmd, ctrl_dt);

    const PlanOutput plan = planner_.step(world_, cmd, params_);
    if (plan.event) {
      if (plan.event->selected) ++steps_;
      if (events_) *events_ << event_json(*plan.event).dump() << '\n';
    }
    stance_ = plan.tick.stance;

    if (tick_count_ % ctrl_.mpc_every == 0) solve_mpc(cmd, ctrl_dt);
    ++tick_count_;

    compute_torques(plan.tick);
    KinematicTargets targets{};
    if (sim_.fidelity == Fidelity::KinematicLegs)
      for (int i = 0; i < kNumLegs; ++i)
        if (!stance_[i]) targets[i] = KinematicTarget{plan.tick.p[i], plan.tick.v[i]};

    for (int s = 0; s < ctrl_.control_every; ++s) {
      world_ = step(world_, torques_, desc_, sim_, targets);
      on_step(world_, torques_);
    }
  }

  void tick(const VelocityCommand& cmd) {
    tick(cmd, [](const WorldState&, const LegTorques&) {});
  }

 /// Command after the slew limit, as seen by planner and MPC.
  const VelocityCommand& command() const { return cmd_; }

 private:
  VelocityCommand slew(const VelocityCommand& target, double dt) {
    auto towards = [](double from, double to, double step) { return from + std::clamp(to - from, -step, step); };
    cmd_.vx = towards(cmd_.vx, target.vx, ctrl_.max_accel * dt);
    cmd_.vy = towards(cmd_.vy, target.vy, ctrl_.max_accel * dt);
    cmd_.yaw_rate = towards(cmd_.yaw_rate, target.yaw_rate, ctrl_.max_yaw_accel * dt);
    return cmd_;
  }

  void advance_anchor(const VelocityCommand& cmd, double dt) {
    const BodyState next = body_reference(anchor_, cmd, 1, dt, params_.robot_height).front();
    anchor_ = next;
    // Keep the anchor near the trunk so large errors do not wind up.
    Vec2 err = anchor_.r.head<2>() - world_.body.r.head<2>();
    if (err.norm() > ctrl_.anchor_limit) {
      err *= ctrl_.anchor_limit / err.norm();
      anchor_.r.head<2>() = world_.body.r.head<2>() + err;
    }
    const double yaw_err = std::remainder(anchor_.theta.z() - world_.body.theta.z(), 2.0 * M_PI);
    anchor_.theta.z() = world_.body.theta.z() + std::clamp(yaw_err, -0.3, 0.3);
  }

  void solve_mpc(const VelocityCommand& cmd, double ctrl_dt) {
    const auto& m = ctrl_.mpc;
    auto x_ref = body_reference(anchor_, cmd, m.horizon, m.dt, params_.robot_height);
    const int stride = std::max(1, static_cast<int>(std::lround(m.dt / ctrl_dt)));
    // Index 0 of the planner schedule is the tick just emitted.
    auto schedule = planner_.upcoming_contacts(m.horizon, stride);
    schedule.front() = stance_;
    std::array<Vec3, kNumLegs> feet = zero_legs<Vec3>();
    const Mat3 R = world_.rotation();
    for (int i = 0; i < kNumLegs; ++i) {
      // Swinging legs act at their planned landing point once back in stance.
      if (auto td = planner_.planned_touchdown(world_, i))
        feet[i] = *td;
      else
        feet[i] = detail::foot_centre_world(desc_, world_, i, R) - Vec3(0.0, 0.0, desc_.foot_radius);
    }
    if (planner_.mode().kind == GaitKind::Walk) shift_reference(x_ref, feet, schedule);
    ++diag_.solves;
    try {
      const MpcProblem prob = build_mpc(world_.body, x_ref, feet, schedule, m, desc_, sim_.gravity);
      const QpSolution sol = solve_qp(prob.qp, QpOptions{m.max_iterations});
      forces_ = mpc_forces(prob, sol.x, 0);
      diag_.max_kkt = std::max(diag_.max_kkt, sol.kkt_residual);
      diag_.max_violation = std::max(diag_.max_violation, sol.primal_violation);
      diag_.max_iterations = std::max(diag_.max_iterations, sol.iterations);
      if (events_ && log_mpc_) {
        nlohmann::json j{{"type", "mpc"}, {"time", world_.time}, {"cost", sol.objective},
                         {"iterations", sol.iterations}, {"kkt", sol.kkt_residual}};
        *events_ << j.dump() << '\n';
      }
    } catch (const std::exception& e) {
      // Keep the previous forces.
      ++diag_.failures;
      if (events_) *events_ << nlohmann::json{{"type", "mpc_error"}, {"time", world_.time}, {"what", e.what()}}.dump() << '\n';
    }
    for (int i = 0; i < kNumLegs; ++i)
      if (!schedule.front()[i]) forces_[i].setZero();
  }

  static PlannerConfig planner_config(const SimConfig& sim, const ControllerConfig& ctrl) {
    PlannerConfig pc;
    pc.dt = sim.dt * ctrl.control_every;
    pc.gravity = sim.gravity;
    pc.stance_fraction = ctrl.stance_fraction;
    pc.walk_stance_fraction = ctrl.walk_stance_fraction;
    pc.retarget = ctrl.retarget;
    return pc;
  }

  void shift_reference(std::vector<BodyState>& x_ref, const std::array<Vec3, kNumLegs>& feet,
                       const ContactSchedule& schedule) const {
    for (std::size_t k = 0; k < x_ref.size(); ++k) {
      const auto& st = schedule[std::min(k + 1, schedule.size() - 1)];
      Vec2 c = Vec2::Zero();
      int n = 0;
      for (int i = 0; i < kNumLegs; ++i)
        if (st[i]) {
          c += feet[i].head<2>();
          ++n;
        }
      if (n < 3) continue;
      c /= n;
      const Eigen::Matrix2d Rz = rot_z(x_ref[k].theta.z()).topLeftCorner<2, 2>();
      Vec2 e = Rz.transpose() * (c - x_ref[k].r.head<2>());
      e.x() *= ctrl_.support_shift_forward;
      e.y() *= ctrl_.support_shift_lateral;
      x_ref[k].r.head<2>() += Rz * e;
    }
  }

  void compute_torques(const ReferenceTick& ref) {
    const Mat3 R = world_.rotation();
    const Vec3 g_body = R.transpose() * Vec3(0.0, 0.0, -sim_.gravity);
    for (int i = 0; i < kNumLegs; ++i) {
      const JointState& js = world_.legs[i];
      if (stance_[i]) {
        const Mat3 J = leg_jacobian(desc_, i, js.q);
        const LegDynamics dyn = leg_dynamics_terms(desc_, i, js.q, js.qdot, g_body);
        // The foot pushes on the ground with the opposite of the reaction force;
        // the damping term only acts when the foot moves in the world.
        const Vec3 v_foot = detail::foot_velocity_world(desc_, world_, i, R);
        const Vec3 f_foot = -forces_[i] - ctrl_.stance_kd * v_foot;
        torques_[i] = clamp_torque(J.transpose() * R.transpose() * f_foot + dyn.gravity, desc_.torque_limit);
      } else {
        torques_[i] = swing_torque(desc_, i, js, FootReference{ref.p[i], ref.v[i], ref.a[i]}, ctrl_.swing, g_body);
      }
    }
  }

  RobotDescription desc_;
  SimConfig sim_;
  ControllerConfig ctrl_;
  PlannerParams params_;
  MotionPlanner planner_;
  WorldState world_;
  BodyState anchor_;
  VelocityCommand cmd_;
  std::array<Vec3, kNumLegs> forces_ = zero_legs<Vec3>();
  std::array<bool, kNumLegs> stance_{};
  LegTorques torques_ = zero_legs<Vec3>();
  MpcDiagnostics diag_;
  long tick_count_ = 0;
  int steps_ = 0;
  std::ostream* events_ = nullptr;
  bool log_mpc_ = false;
};

struct RunResult {
  MetricsReport report;
  RunTrace trace;
  MpcDiagnostics mpc;
  WorldState final_world;
  std::string error;
};

inline TraceSample make_sample(const WorldState& w, const LegTorques& tau, const std::array<bool, kNumLegs>& stance,
                               const VelocityCommand& cmd) {
  TraceSample s;
  s.time = w.time;
  s.body = w.body;
  for (int i = 0; i < kNumLegs; ++i) {
    s.q.segment<3>(3 * i) = w.legs[i].q;
    s.qdot.segment<3>(3 * i) = w.legs[i].qdot;
    s.tau.segment<3>(3 * i) = tau[i];
    s.contact[i] = w.contact[i];
  }
  s.stance = stance;
  s.v_cmd = Vec2(cmd.vx, cmd.vy);
  return s;
}

inline void write_trace_row(std::ostream& os, const WorldState& w, const LegTorques& tau) {
  os << std::setprecision(9) << w.time;
  for (int j = 0; j < 12; ++j) os << ',' << w.body.vector()[j];
  for (const auto& l : w.legs)
    for (int j = 0; j < 3; ++j) os << ',' << l.q[j];
  for (const auto& t : tau)
    for (int j = 0; j < 3; ++j) os << ',' << t[j];
  for (bool c : w.contact) os << ',' << (c ? 1 : 0);
  for (const auto& f : w.grf)
    for (int j = 0; j < 3; ++j) os << ',' << f[j];
  for (const auto& l : w.legs)
    for (int j = 0; j < 3; ++j) os << ',' << l.qdot[j];
  os << '\n';
}

/// Run a closed-loop simulation. Falls and blow-ups end the run early and
/// are reported in the result, not thrown.
inline RunResult run_closed_loop(const RobotDescription& desc, const SimConfig& sim, const ControllerConfig& ctrl,
                                 const RunOptions& opt, std::ostream* csv = nullptr) {
  RunResult out;
  LocomotionController lc(desc, sim, ctrl, opt.gait, opt.params);
  lc.set_event_log(opt.event_log);
  if (opt.initial_noise > 0.0) {
    std::mt19937_64 rng(sim.seed);
    std::normal_distribution<double> n(0.0, opt.initial_noise);
    lc.mutable_world().body.v += Vec3(n(rng), n(rng), 0.0);
  }
  out.trace.dt = sim.dt;
  if (csv) write_trace_header(*csv);

  const long ticks = std::lround(opt.duration / (sim.dt * ctrl.control_every));
  bool fell = false, blowup = false;
  VelocityCommand cmd;
  try {
    for (long k = 0; k < ticks && !fell; ++k) {
      cmd = opt.velocity(lc.world().time);
      lc.tick(cmd, [&](const WorldState& w, const LegTorques& tau) {
        if (opt.record_trace) out.trace.samples.push_back(make_sample(w, tau, lc.stance(), cmd));
        if (csv) write_trace_row(*csv, w, tau);
      });
      if (has_fallen(lc.world(), lc.sim_config())) fell = true;
    }
  } catch (const NumericalBlowup& e) {
    blowup = true;
    out.error = e.what();
  } catch (const UnreachableTarget& e) {
    fell = true;
    out.error = e.what();
  }
  out.final_world = lc.world();
  out.mpc = lc.mpc_diagnostics();
  out.report = evaluate(desc, out.trace, sim.gravity);
  out.report.steps = lc.steps_taken();
  if (fell || blowup) {
    out.report.fell = true;
    out.report.status = blowup ? RunStatus::Blowup : RunStatus::Fell;
  }
  return out;
}

}  // namespace eemp
