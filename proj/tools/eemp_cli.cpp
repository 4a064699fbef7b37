// eemp: single runs, parameter sweeps, gait comparison, contour export and
// the teleoperation server.

#include "eemp/teleop.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace eemp;

namespace {

enum Exit { kOk = 0, kError = 1, kRunFailed = 2, kEmptyBucket = 3 };

struct Common {
  std::string config;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<double> velocity;
  std::optional<std::string> gait;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "base random seed");
  app->add_option("--out-dir", c.out_dir, "output directory")->capture_default_str();
  app->add_option("--duration", c.duration, "simulated seconds per run");
  app->add_option("--velocity", c.velocity, "forward velocity command, m/s");
  app->add_option("--gait", c.gait, "walk, trot or free");
}

AppConfig load(const Common& c) {
  AppConfig cfg = c.config.empty() ? AppConfig{} : load_config(c.config);
  if (c.seed) cfg.sim.seed = *c.seed;
  if (c.duration) {
    cfg.run.duration = *c.duration;
    cfg.study.grid.duration = *c.duration;
  }
  if (c.velocity) {
    cfg.run.velocity.vx = *c.velocity;
    cfg.study.grid.velocities = {*c.velocity};
  }
  if (c.gait) {
    cfg.gait = parse_gait(*c.gait);
    cfg.study.grid.gaits = {cfg.gait};
  }
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return nlohmann::json::parse(is);
}

std::string slug(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

int cmd_run(const Common& c) {
  const AppConfig cfg = load(c);
  fs::create_directories(c.out_dir);
  auto trace = open_out(fs::path(c.out_dir) / "trace.csv");
  auto events = open_out(fs::path(c.out_dir) / "events.jsonl");
  RunOptions ro;
  ro.duration = cfg.run.duration;
  ro.gait = cfg.gait;
  ro.params = cfg.params;
  ro.velocity = constant_velocity(cfg.run.velocity.vx, cfg.run.velocity.vy, cfg.run.velocity.yaw_rate);
  ro.initial_noise = cfg.run.initial_noise;
  ro.record_trace = true;
  ro.event_log = &events;
  const RunResult res = run_closed_loop(cfg.robot, cfg.sim, cfg.control, ro, &trace);

  nlohmann::json report = report_json(res.report);
  report["gait"] = gait_name(cfg.gait);
  report["params"] = params_json(cfg.params);
  report["command"] = {{"vx", cfg.run.velocity.vx}, {"vy", cfg.run.velocity.vy}, {"yaw_rate", cfg.run.velocity.yaw_rate}};
  report["seed"] = cfg.sim.seed;
  report["mpc"] = {{"solves", res.mpc.solves},
                   {"failures", res.mpc.failures},
                   {"max_kkt", res.mpc.max_kkt},
                   {"max_violation", res.mpc.max_violation}};
  if (!res.error.empty()) report["error"] = res.error;
  open_out(fs::path(c.out_dir) / "report.json") << report.dump(2) << '\n';
  std::cout << report.dump(2) << '\n';
  return res.report.fell ? kRunFailed : kOk;
}

std::vector<SweepRecord> sweep(const AppConfig& cfg, int workers) {
  SweepOptions so;
  so.workers = workers;
  so.seed = cfg.sim.seed;
  so.initial_noise = cfg.study.initial_noise;
  return run_sweep(cfg.study.grid, cfg.robot, cfg.sim, cfg.control, so,
                   [](const SweepRecord& r, std::size_t done, std::size_t total) {
                     std::cerr << '[' << done << '/' << total << "] v=" << r.point.velocity << ' '
                               << gait_name(r.point.gait) << ' ' << status_name(r.report.status) << '\n';
                   });
}

void write_contours(const std::vector<SweepRecord>& records, const fs::path& dir, const PlannerParams& held) {
  std::set<std::pair<double, GaitKind>> keys;
  for (const auto& r : records) keys.insert({r.point.velocity, r.point.gait});
  for (const auto& [v, g] : keys) {
    auto os = open_out(dir / ("contour_" + std::string(gait_name(g)) + "_v" + slug(v) + ".csv"));
    write_contour_csv(os, contour_export(records, v, g, held));
  }
}

int cmd_sweep(const Common& c, int workers, bool contours) {
  AppConfig cfg = load(c);
  if (workers <= 0) workers = cfg.study.workers;
  fs::create_directories(c.out_dir);
  const fs::path dir(c.out_dir);
  const auto records = sweep(cfg, workers);
  {
    auto os = open_out(dir / "records.csv");
    write_records_csv(os, records);
  }
  open_out(dir / "records.json") << records_json(records).dump(1) << '\n';
  {
    auto os = open_out(dir / "comparison.csv");
    write_comparison_csv(os, compare_gaits(records, cfg.study.weights));
  }
  if (contours) write_contours(records, dir, cfg.params);
  try {
    const LookupTable table = build_lookup(records, cfg.study.weights, cfg.study.bucket_width);
    open_out(dir / "lookup.json") << table.to_json().dump(2) << '\n';
  } catch (const EmptyBucket& e) {
    std::cerr << "eemp: " << e.what() << '\n';
    return kEmptyBucket;
  }
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.failed();
  std::cout << records.size() << " records, " << failed << " failed, written to " << dir.string() << '\n';
  return kOk;
}

std::vector<SweepRecord> records_or_sweep(const Common& c, const std::string& records_path, int workers) {
  if (!records_path.empty()) return records_from_json(read_json(records_path));
  AppConfig cfg = load(c);
  return sweep(cfg, workers > 0 ? workers : cfg.study.workers);
}

int cmd_compare(const Common& c, const std::string& records_path, int workers) {
  const AppConfig cfg = load(c);
  const auto records = records_or_sweep(c, records_path, workers);
  const auto rows = compare_gaits(records, cfg.study.weights);
  fs::create_directories(c.out_dir);
  auto os = open_out(fs::path(c.out_dir) / "comparison.csv");
  write_comparison_csv(os, rows);
  write_comparison_csv(std::cout, rows);
  return kOk;
}

int cmd_contour(const Common& c, const std::string& records_path, int workers) {
  const AppConfig cfg = load(c);
  const auto records = records_or_sweep(c, records_path, workers);
  fs::create_directories(c.out_dir);
  if (c.velocity) {
    const GaitKind g = c.gait ? parse_gait(*c.gait) : cfg.gait;
    const auto grid = contour_export(records, *c.velocity, g, cfg.params);
    auto os = open_out(fs::path(c.out_dir) / ("contour_" + std::string(gait_name(g)) + "_v" + slug(*c.velocity) + ".csv"));
    write_contour_csv(os, grid);
    write_contour_csv(std::cout, grid);
  } else {
    write_contours(records, c.out_dir, cfg.params);
  }
  return kOk;
}

std::atomic<bool> g_stop{false};

int cmd_teleop(const Common& c, std::optional<int> port, const std::string& lookup_path, const std::string& script,
               double serve_for) {
  AppConfig cfg = load(c);
  if (port) cfg.teleop.port = *port;
  std::optional<LookupTable> lookup;
  const std::string lp = lookup_path.empty() ? cfg.teleop.lookup_file : lookup_path;
  if (!lp.empty()) lookup = LookupTable::from_json(read_json(lp));

  if (!script.empty()) {
    std::ifstream is(script);
    if (!is) throw std::runtime_error("cannot read " + script);
    const auto events = parse_script(is);
    fs::create_directories(c.out_dir);
    auto trace = open_out(fs::path(c.out_dir) / "trace.csv");
    auto tele = open_out(fs::path(c.out_dir) / "telemetry.jsonl");
    const bool ok = run_script(cfg, lookup, events, cfg.run.duration, &trace, &tele);
    std::cout << (ok ? "script completed" : "robot fell during script") << '\n';
    return ok ? kOk : kRunFailed;
  }

  TeleopServer server(cfg, lookup);
  const auto bound = server.start();
  std::cout << "teleop listening on ws://" << cfg.teleop.bind << ':' << bound << '/' << std::endl;
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (serve_for > 0.0 && std::chrono::steady_clock::now() - t0 > std::chrono::duration<double>(serve_for)) break;
  }
  server.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-efficient quadruped locomotion simulator"};
  app.require_subcommand(1);

  Common common;
  int workers = 0;
  std::string records_path, lookup_path, script;
  std::optional<int> port;
  double serve_for = 0.0;
  bool contours = true;

  auto* run = app.add_subcommand("run", "one closed-loop run: trace.csv, report.json, events.jsonl");
  add_common(run, common);

  auto* sw = app.add_subcommand("sweep", "grid sweep: records, lookup table, comparison, contours");
  add_common(sw, common);
  sw->add_option("--workers", workers, "worker threads (default from config)");
  sw->add_flag("!--no-contours", contours, "skip contour CSVs");

  auto* cmp = app.add_subcommand("compare-gaits", "best walk and trot CoT per velocity");
  add_common(cmp, common);
  cmp->add_option("--records", records_path, "records.json from a previous sweep")->check(CLI::ExistingFile);
  cmp->add_option("--workers", workers, "worker threads when sweeping");

  auto* con = app.add_subcommand("contour", "CoT over swing time and ellipse x radius");
  add_common(con, common);
  con->add_option("--records", records_path, "records.json from a previous sweep")->check(CLI::ExistingFile);
  con->add_option("--workers", workers, "worker threads when sweeping");

  auto* tel = app.add_subcommand("teleop", "WebSocket teleoperation server");
  add_common(tel, common);
  tel->add_option("--port", port, "listen port, 0 for any");
  tel->add_option("--lookup", lookup_path, "lookup.json enabling gait \"auto\"")->check(CLI::ExistingFile);
  tel->add_option("--script", script, "replay JSON-lines commands in simulated time instead of serving")
      ->check(CLI::ExistingFile);
  tel->add_option("--serve-for", serve_for, "stop after this many wall seconds");

  auto* show = app.add_subcommand("config", "print the effective configuration as JSON");
  add_common(show, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(common);
    if (*sw) return cmd_sweep(common, workers, contours);
    if (*cmp) return cmd_compare(common, records_path, workers);
    if (*con) return cmd_contour(common, records_path, workers);
    if (*tel) return cmd_teleop(common, port, lookup_path, script, serve_for);
    if (*show) {
      std::cout << config_to_json(load(common)).dump(2) << '\n';
      return kOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "eemp: " << e.what() << '\n';
    return kError;
  }
  return kError;
}
