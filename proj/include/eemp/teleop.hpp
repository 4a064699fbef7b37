#pragma once

// Teleoperation: the v1 JSON command/telemetry protocol, a deterministic
// session that owns the simulation, a WebSocket server around it, and a
// small blocking client.

#include "eemp/config.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace eemp {

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamOverrides {
  std::optional<double> swing_time, step_height, robot_height, ellipse_rx, ellipse_ry;

  PlannerParams apply(PlannerParams p) const {
    if (swing_time) p.swing_time = *swing_time;
    if (step_height) p.step_height = *step_height;
    if (robot_height) p.robot_height = *robot_height;
    if (ellipse_rx) p.ellipse_rx = *ellipse_rx;
    if (ellipse_ry) p.ellipse_ry = *ellipse_ry;
    return p;
  }
  bool empty() const { return !swing_time && !step_height && !robot_height && !ellipse_rx && !ellipse_ry; }
};

struct PushRequest {
  Vec3 force = Vec3::Zero();
  double duration = 0.0;
};

struct CommandMessage {
  VelocityCommand velocity;
  std::optional<std::string> gait;  // "walk", "trot", "free" or "auto"
  ParamOverrides params;
  std::optional<PushRequest> push;
  bool takeover = false;
};

/// Parse and validate one command frame. Velocities are clamped to the
/// configured limits; parameter overrides must lie in the study ranges.
inline CommandMessage parse_command(const std::string& text, const TeleopSection& limits) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError("malformed JSON");
  }
  if (!j.is_object()) throw ProtocolError("expected a JSON object");
  if (!j.contains("v") || j["v"] != kProtocolVersion) throw ProtocolError("unsupported or missing protocol version");
  if (j.value("type", std::string()) != "command") throw ProtocolError("expected type \"command\"");

  auto number = [&](const nlohmann::json& obj, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj[key];
    if (!v.is_number()) throw ProtocolError(std::string("field '") + key + "' must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ProtocolError(std::string("field '") + key + "' must be finite");
    return x;
  };

  static const std::set<std::string> known = {"v", "type", "vx", "vy", "yaw_rate", "gait", "params", "disturbance", "takeover"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ProtocolError("unknown field '" + it.key() + "'");

  CommandMessage m;
  m.velocity.vx = std::clamp(number(j, "vx", 0.0), -limits.max_vx, limits.max_vx);
  m.velocity.vy = std::clamp(number(j, "vy", 0.0), -limits.max_vy, limits.max_vy);
  m.velocity.yaw_rate = std::clamp(number(j, "yaw_rate", 0.0), -limits.max_yaw_rate, limits.max_yaw_rate);

  if (j.contains("gait")) {
    if (!j["gait"].is_string()) throw ProtocolError("field 'gait' must be a string");
    const std::string g = j["gait"].get<std::string>();
    if (g != "auto") {
      try {
        parse_gait(g);
      } catch (const std::invalid_argument&) {
        throw ProtocolError("unknown gait '" + g + "'");
      }
    }
    m.gait = g;
  }

  if (j.contains("params")) {
    const auto& p = j["params"];
    if (!p.is_object()) throw ProtocolError("field 'params' must be an object");
    auto field = [&](const char* key, ParamBounds b, std::optional<double>& out) {
      if (!p.contains(key)) return;
      const double x = number(p, key, 0.0);
      if (!b.contains(x)) throw ProtocolError(std::string("params.") + key + " outside the study range");
      out = x;
    };
    for (auto it = p.begin(); it != p.end(); ++it) {
      static const std::set<std::string> keys = {"swing_time", "step_height", "robot_height", "ellipse_rx", "ellipse_ry"};
      if (!keys.count(it.key())) throw ProtocolError("unknown parameter '" + it.key() + "'");
    }
    field("swing_time", study_bounds::swing_time, m.params.swing_time);
    field("step_height", study_bounds::step_height, m.params.step_height);
    field("robot_height", study_bounds::robot_height, m.params.robot_height);
    field("ellipse_rx", study_bounds::ellipse_axis, m.params.ellipse_rx);
    field("ellipse_ry", study_bounds::ellipse_axis, m.params.ellipse_ry);
  }

  if (j.contains("disturbance")) {
    const auto& d = j["disturbance"];
    if (!d.is_object()) throw ProtocolError("field 'disturbance' must be an object");
    PushRequest push{Vec3(0.0, limits.push_force, 0.0), limits.push_duration};
    if (d.contains("force")) {
      const auto& f = d["force"];
      if (!f.is_array() || f.size() != 3) throw ProtocolError("disturbance.force must be [fx, fy, fz]");
      for (int k = 0; k < 3; ++k) {
        if (!f[k].is_number()) throw ProtocolError("disturbance.force must be numeric");
        push.force[k] = f[k].get<double>();
      }
    }
    push.duration = number(d, "duration", push.duration);
    if (!(push.duration > 0.0) || push.duration > 2.0) throw ProtocolError("disturbance.duration must lie in (0, 2] s");
    m.push = push;
  }

  if (j.contains("takeover")) {
    if (!j["takeover"].is_boolean()) throw ProtocolError("field 'takeover' must be a boolean");
    m.takeover = j["takeover"].get<bool>();
  }
  return m;
}

inline std::string command_json(const VelocityCommand& v, const std::optional<std::string>& gait = std::nullopt) {
  nlohmann::json j{{"v", kProtocolVersion}, {"type", "command"}, {"vx", v.vx}, {"vy", v.vy}, {"yaw_rate", v.yaw_rate}};
  if (gait) j["gait"] = *gait;
  return j.dump();
}

inline std::string error_json(const std::string& message) {
  return nlohmann::json{{"v", kProtocolVersion}, {"type", "error"}, {"message", message}}.dump();
}

// ---------------------------------------------------------------------------
// Session

/// Owns the controller and advances it deterministically in simulated time.
/// Commands are latched at the command rate; a disconnect ramps the latched
/// command to zero over the decay time.
class TeleopSession {
 public:
  TeleopSession(const AppConfig& cfg, std::optional<LookupTable> lookup = std::nullopt)
      : cfg_(cfg), lookup_(std::move(lookup)), lc_(cfg.robot, cfg.sim, cfg.control, cfg.gait, cfg.params) {
    sample_period_ = 1.0 / cfg.teleop.command_hz;
    gait_name_ = gait_name(cfg.gait);
  }

  bool has_lookup() const { return lookup_.has_value(); }
  const LocomotionController& controller() const { return lc_; }
  double time() const { return lc_.world().time; }
  bool fell() const { return fell_; }
  const VelocityCommand& active_command() const { return active_; }

  void submit(const CommandMessage& m) {
    if (m.gait && *m.gait == "auto" && !lookup_) throw ProtocolError("gait 'auto' needs a lookup table");
    pending_ = m;
    has_pending_ = true;
    decaying_ = false;
  }

  void disconnect() {
    decaying_ = true;
    decay_start_ = time();
    decay_from_ = active_;
    has_pending_ = false;
  }

  using StepHook = std::function<void(const WorldState&, const LegTorques&)>;

  void advance(double seconds, const StepHook& hook = {}) {
    const double ctrl_dt = cfg_.sim.dt * cfg_.control.control_every;
    const long ticks = std::max(1L, std::lround(seconds / ctrl_dt));
    for (long k = 0; k < ticks && !fell_; ++k) {
      if (time() + 1e-12 >= next_sample_) {
        sample();
        next_sample_ += sample_period_;
      }
      if (decaying_) {
        const double s =
            cfg_.teleop.decay_time > 0.0 ? std::max(0.0, 1.0 - (time() - decay_start_) / cfg_.teleop.decay_time) : 0.0;
        active_ = VelocityCommand{decay_from_.vx * s, decay_from_.vy * s, decay_from_.yaw_rate * s};
      }
      try {
        lc_.tick(active_, [&](const WorldState& w, const LegTorques& tau) {
          record_power(w);
          if (hook) hook(w, tau);
        });
      } catch (const NumericalBlowup&) {
        fell_ = true;
      } catch (const UnreachableTarget&) {
        fell_ = true;
      }
      if (has_fallen(lc_.world(), lc_.sim_config())) fell_ = true;
    }
  }

  /// Mechanical CoT over the last second, if the trunk moved far enough.
  std::optional<double> cot_window() const {
    if (window_.size() < 2) return std::nullopt;
    double e = 0.0;
    for (const auto& s : window_) e += s.energy;
    const double d = (window_.back().xy - window_.front().xy).norm();
    if (d < 0.01) return std::nullopt;
    return e / d;
  }

  nlohmann::json telemetry() const {
    const WorldState& w = lc_.world();
    const auto& params = lc_.params();
    auto v3 = [](const Vec3& v) { return nlohmann::json{v.x(), v.y(), v.z()}; };
    nlohmann::json feet = nlohmann::json::array(), grf = nlohmann::json::array(), ell = nlohmann::json::array();
    const Mat3 Rz = rot_z(w.body.theta.z());
    for (int i = 0; i < kNumLegs; ++i) {
      feet.push_back(v3(w.foot_world[i]));
      grf.push_back(v3(w.grf[i]));
      const Vec2 c = lc_.planner().ellipse_centre(i);
      const Vec3 cw = w.body.r + Rz * Vec3(c.x(), c.y(), 0.0);
      const Vec3 rel = foot_in_heading_frame(w, i, cfg_.robot.foot_radius);
      ell.push_back({{"leg", leg_name(i)},
                     {"center", {cw.x(), cw.y()}},
                     {"rx", params.ellipse_rx},
                     {"ry", params.ellipse_ry},
                     {"yaw", w.body.theta.z()},
                     {"outside", ellipse_check(rel.head<2>(), c, params.ellipse_rx, params.ellipse_ry)}});
    }
    const auto& ph = lc_.planner().phase();
    nlohmann::json swing_legs = nlohmann::json::array();
    for (int i = 0; i < kNumLegs; ++i)
      if (ph.swinging && has_leg(ph.legs, i)) swing_legs.push_back(leg_name(i));
    const auto cot = cot_window();
    const Vec3 push = apply_disturbance(lc_.sim_config().disturbances, w.time);
    return {{"v", kProtocolVersion},
            {"type", "telemetry"},
            {"time", w.time},
            {"body", {{"r", v3(w.body.r)}, {"theta", v3(w.body.theta)}, {"v", v3(w.body.v)}, {"omega", v3(w.body.omega)}}},
            {"feet", feet},
            {"grf", grf},
            {"ellipses", ell},
            {"contact", w.contact},
            {"stance", lc_.stance()},
            {"cot_window", cot ? nlohmann::json(*cot) : nlohmann::json(nullptr)},
            {"phase", {{"swinging", ph.swinging}, {"elapsed", ph.elapsed}, {"legs", swing_legs}}},
            {"gait", gait_name(lc_.planner().mode().kind)},
            {"params", params_json(params)},
            {"command", {{"vx", active_.vx}, {"vy", active_.vy}, {"yaw_rate", active_.yaw_rate}}},
            {"disturbance", v3(push)},
            {"steps", lc_.steps_taken()},
            {"fell", fell_}};
  }

 private:
  struct PowerSample {
    double energy;
    Vec2 xy;
  };

  void sample() {
    if (!has_pending_) return;
    has_pending_ = false;
    const CommandMessage& m = pending_;
    active_ = m.velocity;
    if (m.gait) {
      gait_name_ = *m.gait;
      if (*m.gait != "auto") lc_.request_gait(parse_gait(*m.gait));
    }
    if (gait_name_ == "auto" && lookup_) {
      const LookupEntry& e = lookup_->lookup(std::hypot(active_.vx, active_.vy));
      lc_.request_gait(e.gait);
      lc_.set_params(e.params);
    }
    if (!m.params.empty()) lc_.set_params(m.params.apply(lc_.params()));
    if (m.push) {
      lc_.mutable_sim_config().disturbances.push_back(Disturbance{time(), m.push->duration, m.push->force});
    }
  }

  void record_power(const WorldState& w) {
    double p = 0.0;
    for (int i = 0; i < kNumLegs; ++i) p += w.legs[i].qdot.dot(lc_.torques()[i]);
    window_.push_back({std::max(p, 0.0) * cfg_.sim.dt, w.body.r.head<2>()});
    const std::size_t cap = static_cast<std::size_t>(std::lround(1.0 / cfg_.sim.dt));
    while (window_.size() > cap) window_.pop_front();
  }

  AppConfig cfg_;
  std::optional<LookupTable> lookup_;
  LocomotionController lc_;
  double sample_period_ = 0.1;
  double next_sample_ = 0.0;
  CommandMessage pending_;
  bool has_pending_ = false;
  VelocityCommand active_;
  std::string gait_name_;
  bool decaying_ = false;
  double decay_start_ = 0.0;
  VelocityCommand decay_from_;
  bool fell_ = false;
  std::deque<PowerSample> window_;
};

// ---------------------------------------------------------------------------
// Scripted replay

struct ScriptEvent {
  double time = 0.0;
  std::string text;     // a command frame, unused for disconnects
  bool disconnect = false;
};

/// JSON lines: {"t": seconds, ...command fields} or {"t": seconds, "type": "disconnect"}.
inline std::vector<ScriptEvent> parse_script(std::istream& in) {
  std::vector<ScriptEvent> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ProtocolError("script line " + std::to_string(n) + ": malformed JSON");
    }
    if (!j.is_object() || !j.contains("t") || !j["t"].is_number())
      throw ProtocolError("script line " + std::to_string(n) + ": needs a numeric \"t\"");
    ScriptEvent ev;
    ev.time = j["t"].get<double>();
    j.erase("t");
    if (j.value("type", std::string()) == "disconnect") {
      ev.disconnect = true;
    } else {
      j["v"] = kProtocolVersion;
      j["type"] = "command";
      ev.text = j.dump();
    }
    out.push_back(ev);
  }
  std::stable_sort(out.begin(), out.end(), [](const ScriptEvent& a, const ScriptEvent& b) { return a.time < b.time; });
  return out;
}

/// Replays a script in simulated time with no network or wall clock.
/// Telemetry is sampled at the configured rate in simulated time.
inline bool run_script(const AppConfig& cfg, const std::optional<LookupTable>& lookup,
                       const std::vector<ScriptEvent>& script, double duration, std::ostream* trace_csv,
                       std::ostream* telemetry_jsonl) {
  TeleopSession s(cfg, lookup);
  if (trace_csv) write_trace_header(*trace_csv);
  const double batch = cfg.teleop.batch;
  const double tele_period = 1.0 / cfg.teleop.telemetry_hz;
  double next_tele = 0.0;
  std::size_t k = 0;
  while (s.time() < duration - 1e-9 && !s.fell()) {
    while (k < script.size() && script[k].time <= s.time() + 1e-9) {
      if (script[k].disconnect)
        s.disconnect();
      else
        s.submit(parse_command(script[k].text, cfg.teleop));
      ++k;
    }
    s.advance(batch, [&](const WorldState& w, const LegTorques& tau) {
      if (trace_csv) write_trace_row(*trace_csv, w, tau);
    });
    if (telemetry_jsonl && s.time() + 1e-9 >= next_tele) {
      *telemetry_jsonl << s.telemetry().dump() << '\n';
      next_tele += tele_period;
    }
  }
  return !s.fell();
}

// ---------------------------------------------------------------------------
// WebSocket server

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

class TeleopServer;

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, TeleopServer& server, int id) : ws_(std::move(socket)), server_(server), id_(id) {}

  int id() const { return id_; }

  void run() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] { self->on_run(); });
  }

  void send(std::shared_ptr<const std::string> msg) {
    net::post(ws_.get_executor(), [self = shared_from_this(), msg = std::move(msg)] {
      // A slow viewer drops frames rather than growing without bound.
      if (self->queue_.size() >= 64) return;
      self->queue_.push_back(msg);
      if (self->queue_.size() == 1) self->write_next();
    });
  }

  void close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      beast::get_lowest_layer(self->ws_).close();
    });
  }

 private:
  void on_run();
  void on_accept(beast::error_code ec);
  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t n) { self->on_read(ec, n); });
  }
  void on_read(beast::error_code ec, std::size_t n);
  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  TeleopServer& server_;
  int id_;
};

/// One simulation thread owns the session; the network thread only parses
/// frames and exchanges immutable messages with it.
class TeleopServer {
 public:
  TeleopServer(const AppConfig& cfg, std::optional<LookupTable> lookup = std::nullopt)
      : cfg_(cfg), lookup_(std::move(lookup)), time_scale_(cfg.teleop.time_scale), acceptor_(ioc_) {
    if (!(time_scale_ > 0.0)) throw std::invalid_argument("teleop: time scale must be positive");
  }

  ~TeleopServer() { stop(); }

  /// Bind and start serving; returns the bound port (useful with port 0).
  unsigned short start() {
    const auto addr = net::ip::make_address(cfg_.teleop.bind);
    tcp::endpoint ep(addr, static_cast<unsigned short>(cfg_.teleop.port));
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen(net::socket_base::max_listen_connections);
    port_ = acceptor_.local_endpoint().port();
    do_accept();
    running_ = true;
    net_thread_ = std::thread([this] { ioc_.run(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    inbox_cv_.notify_all();
    if (sim_thread_.joinable()) sim_thread_.join();
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      std::lock_guard<std::mutex> lock(sessions_mu_);
      for (auto& [id, w] : sessions_)
        if (auto s = w.lock()) s->close();
    });
    ioc_.stop();
    if (net_thread_.joinable()) net_thread_.join();
  }

  bool fell() const { return fell_; }
  double sim_time() const { return sim_time_; }
  unsigned short port() const { return port_; }

  // Called from the network thread.
  void on_open(const std::shared_ptr<WsSession>& s) {
    {
      std::lock_guard<std::mutex> lock(sessions_mu_);
      sessions_[s->id()] = s;
    }
    nlohmann::json hello{{"v", kProtocolVersion},
                         {"type", "hello"},
                         {"session", s->id()},
                         {"telemetry_hz", cfg_.teleop.telemetry_hz},
                         {"command_hz", cfg_.teleop.command_hz},
                         {"lookup", lookup_.has_value()},
                         {"limits",
                          {{"max_vx", cfg_.teleop.max_vx},
                           {"max_vy", cfg_.teleop.max_vy},
                           {"max_yaw_rate", cfg_.teleop.max_yaw_rate}}},
                         {"param_bounds",
                          {{"swing_time", {study_bounds::swing_time.min, study_bounds::swing_time.max}},
                           {"step_height", {study_bounds::step_height.min, study_bounds::step_height.max}},
                           {"robot_height", {study_bounds::robot_height.min, study_bounds::robot_height.max}},
                           {"ellipse_rx", {study_bounds::ellipse_axis.min, study_bounds::ellipse_axis.max}},
                           {"ellipse_ry", {study_bounds::ellipse_axis.min, study_bounds::ellipse_axis.max}}}}};
    s->send(std::make_shared<const std::string>(hello.dump()));
  }

  void on_message(const std::shared_ptr<WsSession>& s, const std::string& text) {
    try {
      CommandMessage m = parse_command(text, cfg_.teleop);
      if (m.gait && *m.gait == "auto" && !lookup_) throw ProtocolError("gait 'auto' needs a lookup table");
      post(Inbox{s->id(), std::move(m), false});
    } catch (const ProtocolError& e) {
      s->send(std::make_shared<const std::string>(error_json(e.what())));
    }
  }

  void on_close(int id) {
    {
      std::lock_guard<std::mutex> lock(sessions_mu_);
      sessions_.erase(id);
    }
    post(Inbox{id, {}, true});
  }

  int next_session_id() { return ++session_counter_; }

 private:
  struct Inbox {
    int session;
    CommandMessage msg;
    bool closed;
  };

  void post(Inbox in) {
    std::lock_guard<std::mutex> lock(inbox_mu_);
    inbox_.push_back(std::move(in));
  }

  void do_accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<WsSession>(std::move(socket), *this, next_session_id())->run();
      do_accept();
    });
  }

  void send_to(int id, const std::string& text) {
    std::lock_guard<std::mutex> lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return;
    if (auto s = it->second.lock()) s->send(std::make_shared<const std::string>(text));
  }

  void broadcast(const std::string& text) {
    auto msg = std::make_shared<const std::string>(text);
    std::lock_guard<std::mutex> lock(sessions_mu_);
    for (auto& [id, w] : sessions_)
      if (auto s = w.lock()) s->send(msg);
  }

  void sim_loop() {
    TeleopSession session(cfg_, lookup_);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const double batch = cfg_.teleop.batch;
    const auto tele_period = std::chrono::duration<double>(1.0 / cfg_.teleop.telemetry_hz);
    auto next_tele = t0;
    int commander = 0;
    while (running_) {
      std::deque<Inbox> in;
      {
        std::lock_guard<std::mutex> lock(inbox_mu_);
        in.swap(inbox_);
      }
      for (auto& m : in) {
        if (m.closed) {
          if (m.session == commander) {
            commander = 0;
            session.disconnect();
          }
          continue;
        }
        if (commander != 0 && commander != m.session && !m.msg.takeover) {
          send_to(m.session, error_json("another client is commanding; send \"takeover\": true to take control"));
          continue;
        }
        commander = m.session;
        try {
          session.submit(m.msg);
        } catch (const ProtocolError& e) {
          send_to(m.session, error_json(e.what()));
        }
      }

      if (!session.fell()) session.advance(batch);
      sim_time_ = session.time();
      fell_ = session.fell();

      const auto now = clock::now();
      if (now >= next_tele) {
        broadcast(session.telemetry().dump());
        next_tele += std::chrono::duration_cast<clock::duration>(tele_period);
        if (next_tele < now) next_tele = now;
      }
      // Pace simulated time against the wall clock.
      const auto due = t0 + std::chrono::duration_cast<clock::duration>(
                                std::chrono::duration<double>(session.time() / time_scale_));
      std::unique_lock<std::mutex> lock(inbox_mu_);
      inbox_cv_.wait_until(lock, std::min(due, next_tele), [this] { return !running_; });
    }
  }

  AppConfig cfg_;
  std::optional<LookupTable> lookup_;
  double time_scale_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::thread net_thread_, sim_thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> fell_{false};
  std::atomic<double> sim_time_{0.0};
  std::atomic<int> session_counter_{0};
  std::mutex sessions_mu_;
  std::map<int, std::weak_ptr<WsSession>> sessions_;
  std::mutex inbox_mu_;
  std::condition_variable inbox_cv_;
  std::deque<Inbox> inbox_;
};

inline void WsSession::on_run() {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
}

inline void WsSession::on_accept(beast::error_code ec) {
  if (ec) return;
  server_.on_open(shared_from_this());
  do_read();
}

inline void WsSession::on_read(beast::error_code ec, std::size_t n) {
  if (ec) {
    server_.on_close(id_);
    return;
  }
  if (!ws_.got_text()) {
    buffer_.consume(n);
    queue_.push_back(std::make_shared<const std::string>(error_json("binary frames are not supported")));
    if (queue_.size() == 1) write_next();
    do_read();
    return;
  }
  const std::string text = beast::buffers_to_string(buffer_.data());
  buffer_.consume(n);
  server_.on_message(shared_from_this(), text);
  do_read();
}

// ---------------------------------------------------------------------------
// Client

/// Minimal blocking client, used by tests and scripted drivers.
class TeleopClient {
 public:
  TeleopClient(const std::string& host, unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    auto results = resolver.resolve(host, std::to_string(port));
    beast::get_lowest_layer(ws_).connect(results);
    ws_.handshake(host + ":" + std::to_string(port), "/");
  }

  ~TeleopClient() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

  void send(const std::string& text) {
    ws_.text(true);
    ws_.write(net::buffer(text));
  }

  /// Next frame, or nothing if none arrives within the timeout.
  std::optional<std::string> read(std::chrono::milliseconds timeout) {
    beast::flat_buffer buf;
    bool done = false;
    beast::error_code result;
    beast::get_lowest_layer(ws_).expires_after(timeout);
    ws_.async_read(buf, [&](beast::error_code ec, std::size_t) {
      done = true;
      result = ec;
    });
    ioc_.restart();
    ioc_.run();
    beast::get_lowest_layer(ws_).expires_never();
    if (!done || result) return std::nullopt;
    return beast::buffers_to_string(buf.data());
  }

  /// Next frame of the given type, skipping others.
  std::optional<nlohmann::json> read_type(const std::string& type, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      auto frame = read(left);
      if (!frame) return std::nullopt;
      auto j = nlohmann::json::parse(*frame, nullptr, false);
      if (!j.is_discarded() && j.value("type", std::string()) == type) return j;
    }
  }

 private:
  net::io_context ioc_;
  websocket::stream<beast::tcp_stream> ws_;
};

}  // namespace eemp
