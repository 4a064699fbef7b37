#pragma once

// Parameter study: grid sweeps of closed-loop runs, per-velocity lookup of
// the best planner parameters and gait, walk/trot comparison, contour data.

#include "eemp/runner.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace eemp {

struct SweepPoint {
  std::size_t index = 0;
  double velocity = 0.0;
  GaitKind gait = GaitKind::Trot;
  PlannerParams params;
};

struct SweepGrid {
  std::vector<double> velocities = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8};
  std::vector<GaitKind> gaits = {GaitKind::Walk, GaitKind::Trot};
  std::vector<double> swing_times = {0.10, 0.15, 0.20, 0.25};
  std::vector<double> step_heights = {0.10};
  std::vector<double> robot_heights = {0.31};
  std::vector<double> ellipse_rx = {0.04, 0.07, 0.10, 0.13};
  std::vector<double> ellipse_ry = {0.05};
  double duration = 10.0;

  std::size_t size() const {
    return velocities.size() * gaits.size() * swing_times.size() * step_heights.size() * robot_heights.size() *
           ellipse_rx.size() * ellipse_ry.size();
  }

  void validate() const {
    auto check = [](const std::vector<double>& v, ParamBounds b, const char* name) {
      if (v.empty()) throw std::invalid_argument(std::string("grid: no samples for ") + name);
      for (double x : v)
        if (!b.contains(x)) throw std::invalid_argument(std::string("grid: ") + name + " sample out of range");
    };
    // A zero velocity is allowed so stationary runs can be swept too.
    if (velocities.empty()) throw std::invalid_argument("grid: no velocity samples");
    for (double v : velocities)
      if (!(v == 0.0 || study_bounds::velocity.contains(v))) throw std::invalid_argument("grid: velocity out of range");
    if (gaits.empty()) throw std::invalid_argument("grid: no gaits");
    check(swing_times, study_bounds::swing_time, "swing_time");
    check(step_heights, study_bounds::step_height, "step_height");
    check(robot_heights, study_bounds::robot_height, "robot_height");
    check(ellipse_rx, study_bounds::ellipse_axis, "ellipse_rx");
    check(ellipse_ry, study_bounds::ellipse_axis, "ellipse_ry");
    if (!(duration > 0.0)) throw std::invalid_argument("grid: duration must be positive");
  }

  // Mixed-radix enumeration, velocity slowest, ellipse_ry fastest.
  SweepPoint point(std::size_t index) const {
    if (index >= size()) throw std::out_of_range("grid: index out of range");
    SweepPoint p;
    p.index = index;
    std::size_t r = index;
    auto take = [&r](std::size_t n) {
      const std::size_t k = r % n;
      r /= n;
      return k;
    };
    p.params.ellipse_ry = ellipse_ry[take(ellipse_ry.size())];
    p.params.ellipse_rx = ellipse_rx[take(ellipse_rx.size())];
    p.params.robot_height = robot_heights[take(robot_heights.size())];
    p.params.step_height = step_heights[take(step_heights.size())];
    p.params.swing_time = swing_times[take(swing_times.size())];
    p.gait = gaits[take(gaits.size())];
    p.velocity = velocities[take(velocities.size())];
    return p;
  }
};

struct SweepRecord {
  SweepPoint point;
  MetricsReport report;

  bool failed() const { return report.fell || report.status != RunStatus::Ok; }
};

struct SweepOptions {
  int workers = 1;
  std::uint64_t seed = 0;
  double initial_noise = 0.0;
};

/// Seed of one grid point, a splitmix64 mix of the base seed and index.
inline std::uint64_t point_seed(std::uint64_t base, std::size_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline SweepRecord run_point(const SweepPoint& pt, double duration, const RobotDescription& desc, SimConfig sim,
                             const ControllerConfig& ctrl, const SweepOptions& opt) {
  sim.seed = point_seed(opt.seed, pt.index);
  RunOptions ro;
  ro.duration = duration;
  ro.gait = pt.gait;
  ro.params = pt.params;
  ro.velocity = constant_velocity(pt.velocity);
  ro.initial_noise = opt.initial_noise;
  SweepRecord rec{pt, run_closed_loop(desc, sim, ctrl, ro).report};
  return rec;
}

using SweepProgress = std::function<void(const SweepRecord&, std::size_t done, std::size_t total)>;

/// One closed-loop run per grid point on a bounded worker pool. Records come
/// back in grid order regardless of scheduling.
inline std::vector<SweepRecord> run_sweep(const SweepGrid& grid, const RobotDescription& desc, const SimConfig& sim,
                                          const ControllerConfig& ctrl, const SweepOptions& opt = {},
                                          const SweepProgress& progress = {}) {
  grid.validate();
  const std::size_t n = grid.size();
  std::vector<SweepRecord> out(n);
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      SweepRecord rec = run_point(grid.point(i), grid.duration, desc, sim, ctrl, opt);
      std::lock_guard<std::mutex> lock(mu);
      out[i] = rec;
      ++done;
      if (progress) progress(rec, done, n);
    }
  };
  const int w = std::max(1, std::min<int>(opt.workers, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int k = 1; k < w; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Record files

namespace detail {

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

}  // namespace detail

inline const char* kRecordCsvHeader =
    "index,velocity,gait,swing_time,step_height,robot_height,ellipse_rx,ellipse_ry,status,fell,cot,"
    "cot_dimensionless,manipulability,tracking_mae,distance,energy,duration,mean_speed,steps";

inline void write_records_csv(std::ostream& os, const std::vector<SweepRecord>& records) {
  using detail::fmt;
  os << kRecordCsvHeader << '\n';
  for (const auto& r : records) {
    const auto& p = r.point.params;
    const auto& m = r.report;
    os << r.point.index << ',' << fmt(r.point.velocity) << ',' << gait_name(r.point.gait) << ',' << fmt(p.swing_time)
       << ',' << fmt(p.step_height) << ',' << fmt(p.robot_height) << ',' << fmt(p.ellipse_rx) << ','
       << fmt(p.ellipse_ry) << ',' << status_name(m.status) << ',' << (m.fell ? 1 : 0) << ',' << fmt(m.cot) << ','
       << fmt(m.cot_dimensionless) << ',' << fmt(m.manipulability_mean) << ',' << fmt(m.tracking_mae) << ','
       << fmt(m.distance) << ',' << fmt(m.energy) << ',' << fmt(m.duration) << ',' << fmt(m.mean_speed) << ','
       << m.steps << '\n';
  }
}

inline nlohmann::json params_json(const PlannerParams& p) {
  return {{"swing_time", p.swing_time},
          {"step_height", p.step_height},
          {"robot_height", p.robot_height},
          {"ellipse_rx", p.ellipse_rx},
          {"ellipse_ry", p.ellipse_ry}};
}

inline PlannerParams params_from_json(const nlohmann::json& j) {
  PlannerParams p;
  p.swing_time = j.at("swing_time").get<double>();
  p.step_height = j.at("step_height").get<double>();
  p.robot_height = j.at("robot_height").get<double>();
  p.ellipse_rx = j.at("ellipse_rx").get<double>();
  p.ellipse_ry = j.at("ellipse_ry").get<double>();
  return p;
}

inline nlohmann::json report_json(const MetricsReport& m) {
  nlohmann::json j{{"status", status_name(m.status)},
                   {"fell", m.fell},
                   {"manipulability", m.manipulability_mean},
                   {"tracking_mae", m.tracking_mae},
                   {"distance", m.distance},
                   {"energy", m.energy},
                   {"duration", m.duration},
                   {"mean_speed", m.mean_speed},
                   {"steps", m.steps}};
  j["cot"] = m.cot ? nlohmann::json(*m.cot) : nlohmann::json(nullptr);
  j["cot_dimensionless"] = m.cot_dimensionless ? nlohmann::json(*m.cot_dimensionless) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json records_json(const std::vector<SweepRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records)
    arr.push_back({{"index", r.point.index},
                   {"velocity", r.point.velocity},
                   {"gait", gait_name(r.point.gait)},
                   {"params", params_json(r.point.params)},
                   {"report", report_json(r.report)}});
  return arr;
}

inline RunStatus parse_status(const std::string& s) {
  for (auto st : {RunStatus::Ok, RunStatus::Stationary, RunStatus::Fell, RunStatus::Blowup})
    if (s == status_name(st)) return st;
  throw std::invalid_argument("unknown run status '" + s + "'");
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport m;
  m.status = parse_status(j.at("status").get<std::string>());
  m.fell = j.at("fell").get<bool>();
  m.manipulability_mean = j.at("manipulability").get<double>();
  m.tracking_mae = j.at("tracking_mae").get<double>();
  m.distance = j.at("distance").get<double>();
  m.energy = j.at("energy").get<double>();
  m.duration = j.at("duration").get<double>();
  m.mean_speed = j.at("mean_speed").get<double>();
  m.steps = j.at("steps").get<int>();
  if (!j.at("cot").is_null()) m.cot = j["cot"].get<double>();
  if (!j.at("cot_dimensionless").is_null()) m.cot_dimensionless = j["cot_dimensionless"].get<double>();
  return m;
}

inline std::vector<SweepRecord> records_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("records: expected a JSON array");
  std::vector<SweepRecord> out;
  for (const auto& e : j) {
    SweepRecord r;
    r.point.index = e.at("index").get<std::size_t>();
    r.point.velocity = e.at("velocity").get<double>();
    r.point.gait = parse_gait(e.at("gait").get<std::string>());
    r.point.params = params_from_json(e.at("params"));
    r.report = report_from_json(e.at("report"));
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lookup table

class EmptyBucket : public std::runtime_error {
 public:
  EmptyBucket(double velocity)
      : std::runtime_error("lookup: every run failed at velocity " + detail::fmt(velocity)), velocity(velocity) {}
  double velocity;
};

struct ScoringWeights {
  double cot = 0.8;
  double manipulability = 0.2;
};

struct LookupEntry {
  double velocity = 0.0;  // bucket centre
  GaitKind gait = GaitKind::Trot;
  PlannerParams params;
  double score = 0.0;
  double cot = 0.0;
  double manipulability = 0.0;
  std::size_t index = 0;  // grid index of the chosen record
};

struct LookupTable {
  double bucket_width = 0.05;
  ScoringWeights weights;
  std::map<long, LookupEntry> entries;

  long bucket_of(double v) const { return std::lround(v / bucket_width); }

  /// Nearest bucket; ties go to the slower one.
  const LookupEntry& lookup(double v) const {
    if (entries.empty()) throw std::out_of_range("lookup: empty table");
    const long b = bucket_of(std::abs(v));
    auto hi = entries.lower_bound(b);
    if (hi == entries.end()) return std::prev(hi)->second;
    if (hi->first == b || hi == entries.begin()) return hi->second;
    auto lo = std::prev(hi);
    return (b - lo->first) <= (hi->first - b) ? lo->second : hi->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [b, e] : entries)
      arr.push_back({{"velocity", e.velocity},
                     {"gait", gait_name(e.gait)},
                     {"params", params_json(e.params)},
                     {"score", e.score},
                     {"cot", e.cot},
                     {"manipulability", e.manipulability},
                     {"index", e.index}});
    return {{"bucket_width", bucket_width},
            {"weights", {{"cot", weights.cot}, {"manipulability", weights.manipulability}}},
            {"entries", arr}};
  }

  static LookupTable from_json(const nlohmann::json& j) {
    LookupTable t;
    t.bucket_width = j.at("bucket_width").get<double>();
    if (!(t.bucket_width > 0.0)) throw std::invalid_argument("lookup: bucket_width must be positive");
    t.weights.cot = j.at("weights").at("cot").get<double>();
    t.weights.manipulability = j.at("weights").at("manipulability").get<double>();
    for (const auto& e : j.at("entries")) {
      LookupEntry le;
      le.velocity = e.at("velocity").get<double>();
      le.gait = parse_gait(e.at("gait").get<std::string>());
      le.params = params_from_json(e.at("params"));
      le.score = e.at("score").get<double>();
      le.cot = e.at("cot").get<double>();
      le.manipulability = e.at("manipulability").get<double>();
      le.index = e.at("index").get<std::size_t>();
      t.entries[t.bucket_of(le.velocity)] = le;
    }
    return t;
  }
};

namespace detail {

inline bool eligible(const SweepRecord& r) { return !r.failed() && r.report.cot.has_value(); }

// Index into `cands` of the best record under the scoring rule.
inline std::size_t best_of(const std::vector<const SweepRecord*>& cands, const ScoringWeights& w,
                           double* score_out = nullptr) {
  double cmin = INFINITY, cmax = -INFINITY, mmin = INFINITY, mmax = -INFINITY;
  for (const auto* r : cands) {
    cmin = std::min(cmin, *r->report.cot);
    cmax = std::max(cmax, *r->report.cot);
    mmin = std::min(mmin, r->report.manipulability_mean);
    mmax = std::max(mmax, r->report.manipulability_mean);
  }
  auto norm = [](double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.0; };
  std::size_t best = 0;
  double best_score = INFINITY;
  for (std::size_t k = 0; k < cands.size(); ++k) {
    const auto& r = *cands[k];
    const double s = w.cot * norm(*r.report.cot, cmin, cmax) - w.manipulability * norm(r.report.manipulability_mean, mmin, mmax);
    bool better = s < best_score;
    if (!better && s == best_score) {
      const auto& b = *cands[best];
      if (*r.report.cot != *b.report.cot)
        better = *r.report.cot < *b.report.cot;
      else if (r.point.params.swing_time != b.point.params.swing_time)
        better = r.point.params.swing_time > b.point.params.swing_time;
      else
        better = r.point.index < b.point.index;
    }
    if (better) {
      best = k;
      best_score = s;
    }
  }
  if (score_out) *score_out = best_score;
  return best;
}

}  // namespace detail

/// Per velocity bucket, the non-failed record minimising
/// w_cot * norm(CoT) - w_manip * norm(manipulability), with min-max
/// normalisation inside the bucket.
inline LookupTable build_lookup(const std::vector<SweepRecord>& records, const ScoringWeights& weights = {},
                                double bucket_width = 0.05) {
  if (!(bucket_width > 0.0)) throw std::invalid_argument("lookup: bucket_width must be positive");
  LookupTable t;
  t.bucket_width = bucket_width;
  t.weights = weights;
  std::map<long, std::vector<const SweepRecord*>> buckets;
  std::map<long, double> first_velocity;
  for (const auto& r : records) {
    const long b = t.bucket_of(r.point.velocity);
    first_velocity.emplace(b, r.point.velocity);
    auto& v = buckets[b];
    if (detail::eligible(r)) v.push_back(&r);
  }
  for (const auto& [b, cands] : buckets) {
    if (cands.empty()) throw EmptyBucket(first_velocity[b]);
    double score = 0.0;
    const auto& r = *cands[detail::best_of(cands, weights, &score)];
    t.entries[b] = LookupEntry{static_cast<double>(b) * bucket_width, r.point.gait, r.point.params, score,
                               *r.report.cot, r.report.manipulability_mean, r.point.index};
  }
  return t;
}

// ---------------------------------------------------------------------------
// Walk / trot comparison

struct GaitBest {
  std::optional<double> cot;
  double manipulability = 0.0;
  bool stable = false;  // at least one run at this velocity did not fail
  std::optional<std::size_t> index;
};

struct GaitComparison {
  double velocity = 0.0;
  GaitBest walk;
  GaitBest trot;
};

/// Best record per (velocity, gait) under the scoring rule.
inline std::vector<GaitComparison> compare_gaits(const std::vector<SweepRecord>& records,
                                                 const ScoringWeights& weights = {}) {
  std::map<double, std::map<GaitKind, std::vector<const SweepRecord*>>> groups;
  for (const auto& r : records) {
    auto& g = groups[r.point.velocity];
    auto& v = g[r.point.gait];
    if (detail::eligible(r)) v.push_back(&r);
  }
  std::vector<GaitComparison> out;
  for (const auto& [v, byGait] : groups) {
    GaitComparison c;
    c.velocity = v;
    for (const auto& [gait, cands] : byGait) {
      if (gait == GaitKind::Free) continue;
      GaitBest& gb = gait == GaitKind::Walk ? c.walk : c.trot;
      if (cands.empty()) continue;
      const auto& r = *cands[detail::best_of(cands, weights)];
      gb.cot = r.report.cot;
      gb.manipulability = r.report.manipulability_mean;
      gb.stable = true;
      gb.index = r.point.index;
    }
    out.push_back(c);
  }
  return out;
}

inline void write_comparison_csv(std::ostream& os, const std::vector<GaitComparison>& rows) {
  using detail::fmt;
  os << "velocity,walk_cot,trot_cot,walk_manipulability,trot_manipulability,walk_stable,trot_stable\n";
  for (const auto& c : rows)
    os << fmt(c.velocity) << ',' << fmt(c.walk.cot) << ',' << fmt(c.trot.cot) << ','
       << (c.walk.stable ? fmt(c.walk.manipulability) : "") << ',' << (c.trot.stable ? fmt(c.trot.manipulability) : "")
       << ',' << (c.walk.stable ? 1 : 0) << ',' << (c.trot.stable ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// Contour export

struct ContourCell {
  enum class Kind { Missing, Failed, Value } kind = Kind::Missing;
  double cot = 0.0;
};

struct ContourGrid {
  double velocity = 0.0;
  GaitKind gait = GaitKind::Trot;
  std::vector<double> swing_times;  // columns
  std::vector<double> ellipse_rx;   // rows
  std::vector<std::vector<ContourCell>> cells;  // [row][column]
};

/// CoT over (swing_time, ellipse_rx) at one velocity and gait, other
/// parameters held at the baseline values.
inline ContourGrid contour_export(const std::vector<SweepRecord>& records, double velocity, GaitKind gait,
                                  const PlannerParams& held = baseline_params()) {
  auto same = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
  ContourGrid g;
  g.velocity = velocity;
  g.gait = gait;
  std::vector<const SweepRecord*> sel;
  for (const auto& r : records) {
    const auto& p = r.point.params;
    if (!same(r.point.velocity, velocity) || r.point.gait != gait) continue;
    if (!same(p.step_height, held.step_height) || !same(p.robot_height, held.robot_height) ||
        !same(p.ellipse_ry, held.ellipse_ry))
      continue;
    sel.push_back(&r);
    g.swing_times.push_back(p.swing_time);
    g.ellipse_rx.push_back(p.ellipse_rx);
  }
  auto uniq = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(g.swing_times);
  uniq(g.ellipse_rx);
  g.cells.assign(g.ellipse_rx.size(), std::vector<ContourCell>(g.swing_times.size()));
  for (const auto* r : sel) {
    const auto col = std::lower_bound(g.swing_times.begin(), g.swing_times.end(), r->point.params.swing_time) -
                     g.swing_times.begin();
    const auto row = std::lower_bound(g.ellipse_rx.begin(), g.ellipse_rx.end(), r->point.params.ellipse_rx) -
                     g.ellipse_rx.begin();
    ContourCell& c = g.cells[row][col];
    if (detail::eligible(*r)) {
      // Duplicates keep the lowest CoT.
      if (c.kind != ContourCell::Kind::Value || *r->report.cot < c.cot) c = {ContourCell::Kind::Value, *r->report.cot};
    } else if (c.kind == ContourCell::Kind::Missing) {
      c.kind = ContourCell::Kind::Failed;
    }
  }
  return g;
}

/// First row: "ellipse_rx\swing_time" then the swing times; then one row per
/// ellipse_rx. Missing cells are NA, failed runs FAIL.
inline void write_contour_csv(std::ostream& os, const ContourGrid& g) {
  os << "ellipse_rx\\swing_time";
  for (double t : g.swing_times) os << ',' << detail::fmt(t);
  os << '\n';
  for (std::size_t r = 0; r < g.ellipse_rx.size(); ++r) {
    os << detail::fmt(g.ellipse_rx[r]);
    for (const auto& c : g.cells[r]) {
      os << ',';
      switch (c.kind) {
        case ContourCell::Kind::Missing: os << "NA"; break;
        case ContourCell::Kind::Failed: os << "FAIL"; break;
        case ContourCell::Kind::Value: os << detail::fmt(c.cot); break;
      }
    }
    os << '\n';
  }
}

}  // namespace eemp
