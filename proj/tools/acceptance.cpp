// eemp_acceptance: runs every primary acceptance criterion and prints one
// PASS/FAIL line per criterion. Exit status is the number of failures.

#include "eemp/teleop.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

using namespace eemp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Options {
  int workers = 1;
  std::string out_dir;
  std::string records;
};

std::string num(double x, int prec = 3) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome swing_identities() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> T(study_bounds::swing_time.min, study_bounds::swing_time.max),
      h(study_bounds::step_height.min, study_bounds::step_height.max), d(-0.3, 0.3);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const double dt = T(rng), hs = h(rng);
    const Vec2 disp(d(rng), d(rng));
    worst = std::max(worst, std::abs(swing_sample(dt / 2, dt, hs, disp).p.z() - hs));
    worst = std::max(worst, (swing_sample(dt, dt, hs, disp).p.head<2>() - disp).norm());
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 1.0, "max error " + num(worst) + " over 1000 draws, " + num(secs) + " s"};
}

Outcome ellipse_trigger() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0), axis(0.02, 0.12), speed(0.1, 0.6), ang(-M_PI, M_PI);
  int mismatches = 0, never = 0, boundary_fires = 0;
  for (int n = 0; n < 50; ++n) {
    oracle::Glide g;
    PlannerParams p = baseline_params();
    p.ellipse_rx = axis(rng);
    p.ellipse_ry = axis(rng);
    g.yaw = ang(rng);
    const double heading = ang(rng);
    g.v_heading = speed(rng) * Vec2(std::cos(heading), std::sin(heading));
    for (int i = 0; i < kNumLegs; ++i)
      g.offset[i] = 0.6 * Vec2(u(rng) * p.ellipse_rx, u(rng) * p.ellipse_ry) / std::sqrt(2.0);
    g.place();
    PlannerConfig cfg;
    MotionPlanner planner(g.desc, cfg, GaitMode::trot());
    const VelocityCommand cmd{g.v_heading.x(), g.v_heading.y(), 0.0};
    bool fired = false;
    for (int k = 0; k < 2000 && !fired; ++k) {
      const bool expect = g.outside(p);
      const PlanOutput out = planner.step(g.world, cmd, p);
      fired = out.phase.swinging || out.event.has_value();
      if (fired != expect) {
        ++mismatches;
        break;
      }
      g.advance(cfg.dt);
    }
    if (!fired) ++never;

    // A stationary foot on the boundary of a rotated ellipse, a hair inside.
    oracle::Glide b;
    b.yaw = g.yaw;
    const double a = ang(rng);
    b.offset[n % kNumLegs] = (1.0 - 1e-9) * Vec2(p.ellipse_rx * std::cos(a), p.ellipse_ry * std::sin(a));
    b.place();
    MotionPlanner still(b.desc, cfg, GaitMode::trot());
    if (still.step(b.world, VelocityCommand{}, p).phase.swinging) ++boundary_fires;
  }
  // Exactly on the boundary, in representable arithmetic.
  const Vec2 c(0.25, -0.125);
  if (ellipse_check(c + Vec2(0.0625, 0.0), c, 0.0625, 0.03125) ||
      ellipse_check(c + Vec2(0.0, 0.03125), c, 0.0625, 0.03125))
    ++boundary_fires;
  const double secs = seconds_since(t0);
  return {mismatches == 0 && never == 0 && boundary_fires == 0 && secs < 10.0,
          "50 scenarios: " + std::to_string(mismatches) + " early/late triggers, " + std::to_string(never) +
              " never fired, " + std::to_string(boundary_fires) + " boundary triggers, " + num(secs) + " s"};
}

Outcome zero_velocity_quiescence() {
  RunOptions ro;
  ro.duration = 5.0;
  ro.velocity = constant_velocity(0.0);
  const RunResult r = run_closed_loop(RobotDescription{}, SimConfig{}, ControllerConfig{}, ro);
  double drift = 0.0;
  const Vec2 start = r.trace.samples.front().body.r.head<2>();
  for (const auto& s : r.trace.samples) drift = std::max(drift, (s.body.r.head<2>() - start).norm());
  return {r.report.steps == 0 && drift < 5e-3 && !r.report.fell,
          std::to_string(r.report.steps) + " steps, max drift " + num(drift * 1e3) + " mm over 5 s"};
}

Outcome controller_oracles() {
  RobotDescription d;
  d.torque_limit = 1e9;
  std::mt19937_64 rng(4);
  auto rel = [](const Vec3& a, const Vec3& b) { return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff()); };
  double swing = 0.0, stance = 0.0, jac = 0.0, grav = 0.0;
  SwingGains gains;
  const double h = 1e-6;
  for (int n = 0; n < 100; ++n) {
    const int leg = n % kNumLegs;
    JointState js{oracle::random_q(rng, d), oracle::random_vec(rng, 6.0)};
    js.q[2] = std::min(js.q[2], -0.2);
    FootReference ref{forward_kinematics(d, leg, js.q) + oracle::random_vec(rng, 0.05), oracle::random_vec(rng, 1.0),
                      oracle::random_vec(rng, 20.0)};
    const Mat3 R = rotation_from_rpy(oracle::random_vec(rng, 0.3));
    const Vec3 g_body = R.transpose() * Vec3(0, 0, -9.81);

    const oracle::Chain c = oracle::build(d, leg, js.q);
    const Mat3 J = oracle::jacobian(c);
    const auto dyn = oracle::dynamics(d, leg, js.q, js.qdot, g_body);
    const Mat3 lambda = (J * dyn.M.inverse() * J.transpose() + 1e-6 * Mat3::Identity()).inverse();
    const Vec3 swing_ref = J.transpose() * (gains.kp * (ref.p - c.point) + gains.kd * (ref.v - J * js.qdot)) +
                           J.transpose() * lambda * ref.a + dyn.V + dyn.G;
    swing = std::max(swing, rel(swing_torque(d, leg, js, ref, gains, g_body), swing_ref));

    const Vec3 f = oracle::random_vec(rng, 80.0), fb = R.transpose() * f;
    Vec3 stance_ref;
    for (int k = 0; k < 3; ++k) stance_ref[k] = c.joints[k].axis.cross(c.point - c.joints[k].origin).dot(fb);
    stance = std::max(stance, rel(stance_torque(leg_jacobian(d, leg, js.q), R, f, 1e9), stance_ref));

    Mat3 fd;
    Vec3 grad;
    for (int j = 0; j < 3; ++j) {
      Vec3 dq = Vec3::Zero();
      dq[j] = h;
      fd.col(j) = (forward_kinematics(d, leg, js.q + dq) - forward_kinematics(d, leg, js.q - dq)) / (2 * h);
      grad[j] = (oracle::potential(d, leg, js.q + dq, g_body) - oracle::potential(d, leg, js.q - dq, g_body)) / (2 * h);
    }
    jac = std::max(jac, (leg_jacobian(d, leg, js.q) - fd).cwiseAbs().maxCoeff());
    grav = std::max(grav, (leg_dynamics_terms(d, leg, js.q, Vec3::Zero(), g_body).gravity - grad).cwiseAbs().maxCoeff());
  }
  return {swing <= 1e-10 && stance <= 1e-10 && jac <= 1e-6 && grav <= 1e-6,
          "swing " + num(swing) + ", stance " + num(stance) + ", Jacobian FD " + num(jac) + ", G gradient " + num(grav)};
}

// Best convex QP optimum over every candidate active set.
std::optional<double> enumerate_optimum(const QpProblem& qp) {
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
    if ((sol.tail(k).array() < -1e-9).any()) continue;
    if (((qp.constraints * sol.head(n) - qp.bounds).array() > 1e-9).any()) continue;
    const double f = qp.objective(sol.head(n));
    if (!best || f < *best) best = f;
  }
  return best;
}

Outcome qp_correctness() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> nd(1, 4), md(1, 7);
  std::uniform_real_distribution<double> u(-1.0, 1.0), slack(0.0, 0.5);
  double obj_err = 0.0, kkt = 0.0, viol = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int n = nd(rng), m = md(rng);
    QpProblem qp;
    Eigen::MatrixXd L(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) L(i, j) = u(rng);
    qp.hessian = L * L.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    qp.gradient = 3.0 * Eigen::VectorXd::NullaryExpr(n, [&] { return u(rng); });
    qp.constraints = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return u(rng); });
    const Eigen::VectorXd x0 = Eigen::VectorXd::NullaryExpr(n, [&] { return u(rng); });
    qp.bounds = qp.constraints * x0 + Eigen::VectorXd::NullaryExpr(m, [&] { return slack(rng); });
    const QpSolution sol = solve_qp(qp);
    obj_err = std::max(obj_err, std::abs(sol.objective - *enumerate_optimum(qp)));
    kkt = std::max(kkt, sol.kkt_residual);
    viol = std::max(viol, sol.primal_violation);
  }

  RobotDescription desc;
  SimConfig sim;
  const WorldState w = make_standing_world(desc, sim, 0.31);
  MpcConfig cfg;
  std::vector<BodyState> ref(cfg.horizon, w.body);
  const MpcProblem prob = build_mpc(w.body, ref, w.foot_world, ContactSchedule(cfg.horizon, {true, true, true, true}),
                                    cfg, desc, sim.gravity);
  const QpSolution sol = solve_qp(prob.qp);
  kkt = std::max(kkt, sol.kkt_residual);
  viol = std::max(viol, sol.primal_violation);
  Vec3 total = Vec3::Zero(), moment = Vec3::Zero();
  const auto f = mpc_forces(prob, sol.x);
  for (int i = 0; i < kNumLegs; ++i) {
    total += f[i];
    moment += (w.foot_world[i] - w.body.r).cross(f[i]);
  }
  const double mg = desc.total_mass() * sim.gravity;
  const double fz_err = std::abs(total.z() - mg) / mg;

  // Every solve of a closed-loop trot.
  RunOptions ro;
  ro.velocity = constant_velocity(0.5);
  ro.record_trace = false;
  const RunResult run = run_closed_loop(desc, sim, ControllerConfig{}, ro);
  kkt = std::max(kkt, run.mpc.max_kkt);
  viol = std::max(viol, run.mpc.max_violation);

  return {obj_err <= 1e-6 && kkt <= 1e-6 && viol <= 1e-8 && fz_err <= 1e-3 && moment.norm() <= 1e-3 &&
              run.mpc.failures == 0,
          "200 QPs objective error " + num(obj_err) + "; KKT " + num(kkt) + ", violation " + num(viol) + " over " +
              std::to_string(run.mpc.solves + 201) + " solves; static sum fz off by " + num(100 * fz_err) +
              "%, moment " + num(moment.norm()) + " N m"};
}

Outcome closed_loop() {
  Outcome out;
  for (auto [gait, v] : {std::pair{GaitKind::Trot, 0.5}, std::pair{GaitKind::Walk, 0.3}}) {
    const auto t0 = std::chrono::steady_clock::now();
    RunOptions ro;
    ro.gait = gait;
    ro.velocity = constant_velocity(v);
    const RunResult r = run_closed_loop(RobotDescription{}, SimConfig{}, ControllerConfig{}, ro);
    const double secs = seconds_since(t0);
    const bool ok = !r.report.fell && std::abs(r.report.mean_speed - v) <= 0.1 && secs <= 120.0;
    out.pass = out.pass && ok;
    if (!out.detail.empty()) out.detail += "; ";
    out.detail += std::string(gait_name(gait)) + " " + num(v) + " m/s: mean " + num(r.report.mean_speed) +
                  (r.report.fell ? " FELL" : "") + ", " + num(secs) + " s";
  }
  return out;
}

// The coarse sweep shared by the trend and improvement criteria.
struct SweepCache {
  std::vector<SweepRecord> records;
  double seconds = 0.0;
  bool loaded = false;
};

const SweepCache& sweep(const Options& opt) {
  static SweepCache cache;
  static bool done = false;
  if (done) return cache;
  done = true;
  if (!opt.records.empty()) {
    std::ifstream in(opt.records);
    cache.records = records_from_json(json::parse(in));
    cache.loaded = true;
    return cache;
  }
  const auto t0 = std::chrono::steady_clock::now();
  SweepOptions so;
  so.workers = opt.workers;
  cache.records = run_sweep(SweepGrid{}, RobotDescription{}, SimConfig{}, ControllerConfig{}, so);
  cache.seconds = seconds_since(t0);
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream csv(fs::path(opt.out_dir) / "records.csv");
    write_records_csv(csv, cache.records);
    std::ofstream js(fs::path(opt.out_dir) / "records.json");
    js << records_json(cache.records).dump(1) << '\n';
    std::ofstream cmp(fs::path(opt.out_dir) / "comparison.csv");
    write_comparison_csv(cmp, compare_gaits(cache.records, {1.0, 0.0}));
  }
  return cache;
}

std::string runtime_note(const SweepCache& c) {
  return c.loaded ? "records loaded from file" : num(c.seconds, 4) + " s sweep";
}

Outcome walk_trot_trend(const Options& opt) {
  const SweepCache& c = sweep(opt);
  const auto rows = compare_gaits(c.records, {1.0, 0.0});
  std::optional<double> walk03;
  for (const auto& r : rows)
    if (std::abs(r.velocity - 0.3) < 1e-9) walk03 = r.walk.cot;
  bool low_ok = true, walk_breaks = false, trot_survives = true;
  std::string curve;
  for (const auto& r : rows) {
    curve += " " + num(r.velocity, 2) + ":" + (r.walk.stable ? num(*r.walk.cot) : "F") + "/" +
             (r.trot.stable ? num(*r.trot.cot) : "F");
    const bool low = r.velocity <= 0.4 + 1e-9;
    if (low) {
      if (r.walk.stable)
        low_ok = low_ok && r.trot.stable && *r.walk.cot < *r.trot.cot;
      else if (r.velocity < 0.4 - 1e-9)
        low_ok = false;
    }
    if (r.velocity >= 0.4 - 1e-9 && (!r.walk.stable || (walk03 && *r.walk.cot >= 2.0 * *walk03))) walk_breaks = true;
    if (r.velocity <= 0.8 + 1e-9 && !r.trot.stable) trot_survives = false;
  }
  const bool in_time = c.loaded || c.seconds <= 1800.0;
  return {low_ok && walk_breaks && trot_survives && in_time,
          "walk/trot best CoT by velocity:" + curve + "; " + runtime_note(c)};
}

Outcome optimal_vs_fixed(const Options& opt) {
  const SweepCache& c = sweep(opt);
  const PlannerParams fixed = baseline_params();
  int buckets = 0, strict = 0, violations = 0;
  std::string detail;
  for (GaitKind g : {GaitKind::Walk, GaitKind::Trot}) {
    double sum_gain = 0.0;
    int n_gain = 0;
    for (double v : SweepGrid{}.velocities) {
      std::vector<SweepRecord> bucket;
      const SweepRecord* base = nullptr;
      for (const auto& r : c.records)
        if (r.point.gait == g && std::abs(r.point.velocity - v) < 1e-9) bucket.push_back(r);
      for (const auto& r : bucket)
        if (r.point.params == fixed) base = &r;
      if (!base) continue;
      std::optional<double> best;
      try {
        best = build_lookup(bucket, {1.0, 0.0}).lookup(v).cot;
      } catch (const EmptyBucket&) {
        continue;
      }
      ++buckets;
      if (base->failed()) {
        ++strict;
        continue;
      }
      const double fixed_cot = *base->report.cot;
      if (*best > fixed_cot) ++violations;
      if (*best < fixed_cot) ++strict;
      sum_gain += (fixed_cot - *best) / fixed_cot;
      ++n_gain;
    }
    detail += std::string(gait_name(g)) + " mean gain " + (n_gain ? num(100 * sum_gain / n_gain) + "%" : "n/a") + "; ";
  }
  return {buckets > 0 && violations == 0 && 2 * strict >= buckets,
          detail + std::to_string(strict) + "/" + std::to_string(buckets) + " buckets strictly improved, " +
              std::to_string(violations) + " worse"};
}

Outcome sweep_determinism() {
  SweepGrid g;
  g.velocities = {0.2, 0.5};
  g.swing_times = {0.2, 0.25};
  g.ellipse_rx = {0.07};
  g.duration = 2.0;
  auto csv = [&](int workers) {
    std::ostringstream os;
    write_records_csv(os, run_sweep(g, RobotDescription{}, SimConfig{}, ControllerConfig{}, {workers, 11, 0.02}));
    return os.str();
  };
  const std::string a = csv(1), b = csv(3), again = csv(1);
  return {a == b && a == again, std::to_string(g.size()) + " points; workers 1 vs 3 " +
                                    (a == b ? "identical" : "DIFFER") + ", rerun " + (a == again ? "identical" : "DIFFER")};
}

Outcome teleop_protocol() {
  using namespace std::chrono_literals;
  AppConfig cfg;
  cfg.teleop.port = 0;
  cfg.teleop.time_scale = 2.0;
  TeleopServer server(cfg);
  TeleopClient client("127.0.0.1", server.start());
  if (!client.read_type("hello", 3000ms)) return {false, "no hello frame"};

  // vx steps 0 -> 0.3 -> 0.5 -> 0, with a lateral push during the 0.5 phase.
  const std::vector<std::pair<double, double>> steps = {{0.0, 0.0}, {1.0, 0.3}, {5.0, 0.5}, {9.0, 0.0}};
  const double push_at = 6.5, end = 12.0;
  int sent = -1, frames = 0, quiet_tracking = 0;
  bool pushed = false, push_seen = false, recovered = false, fell = false;
  double push_time = 0.0;
  while (true) {
    const auto t = client.read_type("telemetry", 3000ms);
    if (!t) return {false, "telemetry stopped after " + std::to_string(frames) + " frames"};
    ++frames;
    const double time = (*t)["time"].get<double>();
    fell = fell || (*t)["fell"].get<bool>();
    int phase = 0;
    while (phase + 1 < static_cast<int>(steps.size()) && time >= steps[phase + 1].first) ++phase;
    if (phase != sent) {
      client.send(command_json({steps[phase].second, 0.0, 0.0}));
      sent = phase;
    }
    if (!pushed && time >= push_at) {
      client.send(json{{"v", 1}, {"type", "command"}, {"vx", 0.5}, {"disturbance", {{"force", {0, 60, 0}}, {"duration", 0.1}}}}.dump());
      pushed = true;
      push_time = time;
    }

    const double yaw = (*t)["body"]["theta"][2].get<double>();
    const double wx = (*t)["body"]["v"][0].get<double>(), wy = (*t)["body"]["v"][1].get<double>();
    const double vx = std::cos(yaw) * wx + std::sin(yaw) * wy, vy = -std::sin(yaw) * wx + std::cos(yaw) * wy;
    bool all_stance = !(*t)["phase"]["swinging"].get<bool>();
    for (int i = 0; i < kNumLegs; ++i) all_stance = all_stance && (*t)["stance"][i].get<bool>() && (*t)["contact"][i].get<bool>();
    if (all_stance && (*t)["command"]["vx"].get<double>() > 0.2 && vx > 0.1) ++quiet_tracking;

    const json& dist = (*t)["disturbance"];
    if (pushed && std::abs(dist[1].get<double>()) > 0.0) push_seen = true;
    if (pushed && time > push_time + 0.5 && time < steps[3].first && std::abs(vy) < 0.15 && std::abs(vx - 0.5) < 0.2)
      recovered = true;
    if (time >= end || fell) break;
  }
  fell = fell || server.fell();
  return {quiet_tracking > 0 && push_seen && recovered && !fell,
          std::to_string(frames) + " frames; " + std::to_string(quiet_tracking) +
              " all-stance frames while tracking; push " + (push_seen ? "seen" : "NOT seen") + ", " +
              (recovered ? "recovered" : "NOT recovered") + (fell ? ", FELL" : ", no fall")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Primary acceptance criteria"};
  Options opt;
  opt.workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> only, tolerated;
  app.add_option("--workers", opt.workers, "worker threads for the coarse sweep");
  app.add_option("--out-dir", opt.out_dir, "write the coarse sweep records here");
  app.add_option("--records", opt.records, "reuse records.json instead of sweeping")->check(CLI::ExistingFile);
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--tolerate", tolerated, "criteria whose failure does not count toward the exit status");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"swing-identities", swing_identities},
      {"ellipse-trigger", ellipse_trigger},
      {"zero-velocity-quiescence", zero_velocity_quiescence},
      {"controller-oracles", controller_oracles},
      {"qp-correctness", qp_correctness},
      {"closed-loop-locomotion", closed_loop},
      {"walk-trot-trend", [&] { return walk_trot_trend(opt); }},
      {"optimal-vs-fixed", [&] { return optimal_vs_fixed(opt); }},
      {"sweep-determinism", sweep_determinism},
      {"teleop-protocol", teleop_protocol},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool known = std::find(tolerated.begin(), tolerated.end(), name) != tolerated.end();
    if (!o.pass && !known) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << (!o.pass && known ? " (tolerated)" : "")
              << std::endl;
  }
  std::cout << failures << " failing criteria" << (tolerated.empty() ? "" : " not tolerated") << std::endl;
  return failures;
}
