#pragma once

// Application configuration: one JSON document with robot, sim, planner,
// control, run, study and teleop sections. Every section is optional and
// falls back to the built-in defaults; unknown keys are rejected with their
// JSON-pointer location.

#include "eemp/study.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace eemp {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& pointer, const std::string& what)
      : std::runtime_error("config " + (pointer.empty() ? std::string("/") : pointer) + ": " + what),
        pointer(pointer) {}
  std::string pointer;
};

struct RunSection {
  double duration = 10.0;
  VelocityCommand velocity{0.5, 0.0, 0.0};
  double initial_noise = 0.0;
};

struct StudySection {
  SweepGrid grid;
  ScoringWeights weights;
  double bucket_width = 0.05;
  int workers = 1;
  double initial_noise = 0.0;
};

struct TeleopSection {
  std::string bind = "127.0.0.1";
  int port = 8765;
  double telemetry_hz = 30.0;
  double command_hz = 10.0;
  double batch = 0.01;        // s of simulation per real-time batch
  double decay_time = 1.0;    // s to ramp the command to zero after a disconnect
  double max_vx = 1.0;
  double max_vy = 0.5;
  double max_yaw_rate = 1.0;
  double push_force = 60.0;   // N, default disturbance magnitude
  double push_duration = 0.1; // s
  double time_scale = 1.0;    // simulated seconds per wall second
  std::string lookup_file;    // optional lookup table for gait selection
};

struct AppConfig {
  RobotDescription robot;
  SimConfig sim;
  GaitKind gait = GaitKind::Trot;
  PlannerParams params = baseline_params();
  ControllerConfig control;
  RunSection run;
  StudySection study;
  TeleopSection teleop;

  void validate() const;
};

namespace detail {

inline std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

// Reads known keys from one JSON object and remembers which were consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) throw ConfigError(ptr_, "expected an object");
  }

  std::string at(const std::string& key) const { return ptr_ + "/" + escape_pointer(key); }

  const nlohmann::json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const auto* v = find(key)) out = as_number(*v, at(key));
  }

  void integer(const std::string& key, int& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(at(key), "expected an integer");
      out = v->get<int>();
    }
  }

  void unsigned64(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        throw ConfigError(at(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) throw ConfigError(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  template <std::size_t N>
  void numbers(const std::string& key, std::array<double, N>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array() || v->size() != N)
        throw ConfigError(at(key), "expected an array of " + std::to_string(N) + " numbers");
      for (std::size_t k = 0; k < N; ++k) out[k] = as_number((*v)[k], at(key) + "/" + std::to_string(k));
    }
  }

  void numbers(const std::string& key, std::vector<double>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) throw ConfigError(at(key), "expected an array of numbers");
      out.clear();
      for (std::size_t k = 0; k < v->size(); ++k) out.push_back(as_number((*v)[k], at(key) + "/" + std::to_string(k)));
    }
  }

  void vec3(const std::string& key, Vec3& out) {
    std::array<double, 3> a{out.x(), out.y(), out.z()};
    numbers(key, a);
    out = Vec3(a[0], a[1], a[2]);
  }

  // Optional nested object; calls fn(reader) if present.
  template <class Fn>
  void object(const std::string& key, Fn&& fn) {
    if (const auto* v = find(key)) {
      ObjectReader sub(*v, at(key));
      fn(sub);
      sub.finish();
    }
  }

  template <class Fn>
  void array_of_objects(const std::string& key, Fn&& fn) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) throw ConfigError(at(key), "expected an array");
      for (std::size_t k = 0; k < v->size(); ++k) {
        ObjectReader sub((*v)[k], at(key) + "/" + std::to_string(k));
        fn(sub);
        sub.finish();
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
  }

 private:
  static double as_number(const nlohmann::json& v, const std::string& ptr) {
    if (!v.is_number()) throw ConfigError(ptr, "expected a number");
    return v.get<double>();
  }

  const nlohmann::json& j_;
  std::string ptr_;
  std::set<std::string> seen_;
};

inline GaitKind gait_at(const std::string& s, const std::string& ptr) {
  try {
    return parse_gait(s);
  } catch (const std::invalid_argument&) {
    throw ConfigError(ptr, "unknown gait '" + s + "'");
  }
}

inline void read_params(ObjectReader& r, PlannerParams& p) {
  r.number("swing_time", p.swing_time);
  r.number("step_height", p.step_height);
  r.number("robot_height", p.robot_height);
  r.number("ellipse_rx", p.ellipse_rx);
  r.number("ellipse_ry", p.ellipse_ry);
}

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace detail

inline AppConfig config_from_json(const nlohmann::json& j) {
  using detail::ObjectReader;
  AppConfig c;
  ObjectReader root(j, "");

  root.object("robot", [&](ObjectReader& r) {
    auto& d = c.robot;
    r.number("trunk_mass", d.trunk_mass);
    if (const auto* v = r.find("trunk_inertia")) {
      const std::string ptr = r.at("trunk_inertia");
      if (!v->is_array() || v->size() != 3) throw ConfigError(ptr, "expected a 3x3 array");
      for (int i = 0; i < 3; ++i) {
        const auto& row = (*v)[i];
        if (!row.is_array() || row.size() != 3) throw ConfigError(ptr + "/" + std::to_string(i), "expected 3 numbers");
        for (int k = 0; k < 3; ++k) {
          if (!row[k].is_number()) throw ConfigError(ptr + "/" + std::to_string(i) + "/" + std::to_string(k), "expected a number");
          d.trunk_inertia(i, k) = row[k].get<double>();
        }
      }
    }
    if (const auto* v = r.find("hip_offsets")) {
      const std::string ptr = r.at("hip_offsets");
      if (!v->is_array() || v->size() != kNumLegs) throw ConfigError(ptr, "expected 4 offsets (FR, FL, RR, RL)");
      for (int i = 0; i < kNumLegs; ++i) {
        const auto& e = (*v)[i];
        if (!e.is_array() || e.size() != 3) throw ConfigError(ptr + "/" + std::to_string(i), "expected 3 numbers");
        for (int k = 0; k < 3; ++k) {
          if (!e[k].is_number()) throw ConfigError(ptr + "/" + std::to_string(i) + "/" + std::to_string(k), "expected a number");
          d.hip_offsets[i][k] = e[k].get<double>();
        }
      }
    }
    r.number("abduction_offset", d.abduction_offset);
    r.number("thigh_length", d.thigh_length);
    r.number("calf_length", d.calf_length);
    r.numbers("link_masses", d.link_masses);
    if (const auto* v = r.find("joint_limits")) {
      const std::string ptr = r.at("joint_limits");
      if (!v->is_array() || v->size() != 3) throw ConfigError(ptr, "expected 3 [min, max] pairs");
      for (int i = 0; i < 3; ++i) {
        const auto& e = (*v)[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
          throw ConfigError(ptr + "/" + std::to_string(i), "expected [min, max]");
        d.joint_limits[i] = JointLimit{e[0].get<double>(), e[1].get<double>()};
      }
    }
    r.number("torque_limit", d.torque_limit);
    r.number("default_height", d.default_height);
    r.number("foot_radius", d.foot_radius);
  });

  root.object("sim", [&](ObjectReader& r) {
    auto& s = c.sim;
    r.number("dt", s.dt);
    r.number("gravity", s.gravity);
    r.number("contact_stiffness", s.contact_stiffness);
    r.number("contact_damping", s.contact_damping);
    r.number("tangential_damping", s.tangential_damping);
    r.number("default_mu", s.default_mu);
    r.array_of_objects("friction_patches", [&](ObjectReader& p) {
      FrictionPatch fp;
      p.number("x_min", fp.x_min);
      p.number("x_max", fp.x_max);
      p.number("mu", fp.mu);
      s.friction_patches.push_back(fp);
    });
    std::string fid;
    r.string("fidelity", fid);
    if (fid == "articulated")
      s.fidelity = Fidelity::Articulated;
    else if (fid == "kinematic_legs")
      s.fidelity = Fidelity::KinematicLegs;
    else if (!fid.empty())
      throw ConfigError(r.at("fidelity"), "expected \"articulated\" or \"kinematic_legs\"");
    r.unsigned64("seed", s.seed);
    r.array_of_objects("disturbances", [&](ObjectReader& p) {
      Disturbance d;
      p.number("time", d.time);
      p.number("duration", d.duration);
      p.vec3("force", d.force);
      s.disturbances.push_back(d);
    });
    r.number("fall_height", s.fall_height);
    r.number("fall_angle", s.fall_angle);
    r.number("blowup_limit", s.blowup_limit);
  });

  root.object("planner", [&](ObjectReader& r) {
    std::string g;
    r.string("gait", g);
    if (!g.empty()) c.gait = detail::gait_at(g, r.at("gait"));
    r.object("params", [&](ObjectReader& p) { detail::read_params(p, c.params); });
    r.number("stance_fraction", c.control.stance_fraction);
    r.number("walk_stance_fraction", c.control.walk_stance_fraction);
    r.boolean("retarget", c.control.retarget);
  });

  root.object("control", [&](ObjectReader& r) {
    auto& k = c.control;
    r.integer("control_every", k.control_every);
    r.integer("mpc_every", k.mpc_every);
    r.number("stance_kd", k.stance_kd);
    r.number("anchor_limit", k.anchor_limit);
    r.number("max_accel", k.max_accel);
    r.number("max_yaw_accel", k.max_yaw_accel);
    r.number("support_shift_lateral", k.support_shift_lateral);
    r.number("support_shift_forward", k.support_shift_forward);
    r.object("swing", [&](ObjectReader& s) {
      std::array<double, 3> kp{k.swing.kp(0, 0), k.swing.kp(1, 1), k.swing.kp(2, 2)};
      std::array<double, 3> kd{k.swing.kd(0, 0), k.swing.kd(1, 1), k.swing.kd(2, 2)};
      s.numbers("kp", kp);
      s.numbers("kd", kd);
      k.swing.kp = Vec3(kp[0], kp[1], kp[2]).asDiagonal();
      k.swing.kd = Vec3(kd[0], kd[1], kd[2]).asDiagonal();
    });
    r.object("mpc", [&](ObjectReader& m) {
      m.integer("horizon", k.mpc.horizon);
      m.number("dt", k.mpc.dt);
      m.numbers("q_weights", k.mpc.q_weights);
      m.number("r_weight", k.mpc.r_weight);
      m.number("mu", k.mpc.mu);
      m.number("f_min", k.mpc.f_min);
      m.number("f_max", k.mpc.f_max);
      m.integer("max_iterations", k.mpc.max_iterations);
    });
  });

  root.object("run", [&](ObjectReader& r) {
    r.number("duration", c.run.duration);
    std::array<double, 3> v{c.run.velocity.vx, c.run.velocity.vy, c.run.velocity.yaw_rate};
    r.numbers("velocity", v);
    c.run.velocity = VelocityCommand{v[0], v[1], v[2]};
    r.number("initial_noise", c.run.initial_noise);
  });

  root.object("study", [&](ObjectReader& r) {
    auto& s = c.study;
    r.numbers("velocities", s.grid.velocities);
    if (const auto* v = r.find("gaits")) {
      const std::string ptr = r.at("gaits");
      if (!v->is_array()) throw ConfigError(ptr, "expected an array of gait names");
      s.grid.gaits.clear();
      for (std::size_t k = 0; k < v->size(); ++k) {
        const std::string p = ptr + "/" + std::to_string(k);
        if (!(*v)[k].is_string()) throw ConfigError(p, "expected a gait name");
        s.grid.gaits.push_back(detail::gait_at((*v)[k].get<std::string>(), p));
      }
    }
    r.numbers("swing_times", s.grid.swing_times);
    r.numbers("step_heights", s.grid.step_heights);
    r.numbers("robot_heights", s.grid.robot_heights);
    r.numbers("ellipse_rx", s.grid.ellipse_rx);
    r.numbers("ellipse_ry", s.grid.ellipse_ry);
    r.number("duration", s.grid.duration);
    r.object("weights", [&](ObjectReader& w) {
      w.number("cot", s.weights.cot);
      w.number("manipulability", s.weights.manipulability);
    });
    r.number("bucket_width", s.bucket_width);
    r.integer("workers", s.workers);
    r.number("initial_noise", s.initial_noise);
  });

  root.object("teleop", [&](ObjectReader& r) {
    auto& t = c.teleop;
    r.string("bind", t.bind);
    r.integer("port", t.port);
    r.number("telemetry_hz", t.telemetry_hz);
    r.number("command_hz", t.command_hz);
    r.number("batch", t.batch);
    r.number("decay_time", t.decay_time);
    r.number("max_vx", t.max_vx);
    r.number("max_vy", t.max_vy);
    r.number("max_yaw_rate", t.max_yaw_rate);
    r.number("push_force", t.push_force);
    r.number("push_duration", t.push_duration);
    r.number("time_scale", t.time_scale);
    r.string("lookup_file", t.lookup_file);
  });

  root.finish();
  c.validate();
  return c;
}

inline void AppConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(section, e.what());
    }
  };
  wrap("/robot", [&] { robot.validate(); });
  wrap("/sim", [&] { sim.validate(); });
  wrap("/control/mpc", [&] { control.mpc.validate(); });
  wrap("/study", [&] { study.grid.validate(); });
  if (!within_study_bounds(params)) throw ConfigError("/planner/params", "parameters outside the study ranges");
  if (control.control_every < 1) throw ConfigError("/control/control_every", "must be >= 1");
  if (control.mpc_every < 1) throw ConfigError("/control/mpc_every", "must be >= 1");
  if (!(control.max_accel > 0.0)) throw ConfigError("/control/max_accel", "must be positive");
  if (!(control.max_yaw_accel > 0.0)) throw ConfigError("/control/max_yaw_accel", "must be positive");
  if (!(run.duration > 0.0)) throw ConfigError("/run/duration", "must be positive");
  if (run.initial_noise < 0.0) throw ConfigError("/run/initial_noise", "must be non-negative");
  if (study.workers < 1) throw ConfigError("/study/workers", "must be >= 1");
  if (!(study.bucket_width > 0.0)) throw ConfigError("/study/bucket_width", "must be positive");
  if (study.weights.cot < 0.0 || study.weights.manipulability < 0.0)
    throw ConfigError("/study/weights", "weights must be non-negative");
  if (teleop.port < 0 || teleop.port > 65535) throw ConfigError("/teleop/port", "must lie in [0, 65535]");
  if (!(teleop.telemetry_hz > 0.0)) throw ConfigError("/teleop/telemetry_hz", "must be positive");
  if (!(teleop.command_hz > 0.0)) throw ConfigError("/teleop/command_hz", "must be positive");
  if (!(teleop.batch > 0.0)) throw ConfigError("/teleop/batch", "must be positive");
  if (!(teleop.time_scale > 0.0)) throw ConfigError("/teleop/time_scale", "must be positive");
  if (teleop.decay_time < 0.0) throw ConfigError("/teleop/decay_time", "must be non-negative");
  if (teleop.max_vx < 0.0 || teleop.max_vy < 0.0 || teleop.max_yaw_rate < 0.0)
    throw ConfigError("/teleop", "velocity limits must be non-negative");
}

inline nlohmann::json config_to_json(const AppConfig& c) {
  using detail::vec_json;
  nlohmann::json j;
  const auto& d = c.robot;
  nlohmann::json inertia = nlohmann::json::array(), hips = nlohmann::json::array(), limits = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) inertia.push_back(vec_json(d.trunk_inertia.row(i).transpose()));
  for (const auto& h : d.hip_offsets) hips.push_back(vec_json(h));
  for (const auto& l : d.joint_limits) limits.push_back({l.min, l.max});
  j["robot"] = {{"trunk_mass", d.trunk_mass},
                {"trunk_inertia", inertia},
                {"hip_offsets", hips},
                {"abduction_offset", d.abduction_offset},
                {"thigh_length", d.thigh_length},
                {"calf_length", d.calf_length},
                {"link_masses", d.link_masses},
                {"joint_limits", limits},
                {"torque_limit", d.torque_limit},
                {"default_height", d.default_height},
                {"foot_radius", d.foot_radius}};
  const auto& s = c.sim;
  nlohmann::json patches = nlohmann::json::array(), dist = nlohmann::json::array();
  for (const auto& p : s.friction_patches) patches.push_back({{"x_min", p.x_min}, {"x_max", p.x_max}, {"mu", p.mu}});
  for (const auto& x : s.disturbances)
    dist.push_back({{"time", x.time}, {"duration", x.duration}, {"force", vec_json(x.force)}});
  j["sim"] = {{"dt", s.dt},
              {"gravity", s.gravity},
              {"contact_stiffness", s.contact_stiffness},
              {"contact_damping", s.contact_damping},
              {"tangential_damping", s.tangential_damping},
              {"default_mu", s.default_mu},
              {"friction_patches", patches},
              {"fidelity", s.fidelity == Fidelity::Articulated ? "articulated" : "kinematic_legs"},
              {"seed", s.seed},
              {"disturbances", dist},
              {"fall_height", s.fall_height},
              {"fall_angle", s.fall_angle},
              {"blowup_limit", s.blowup_limit}};
  const auto& k = c.control;
  j["planner"] = {{"gait", gait_name(c.gait)},
                  {"params", params_json(c.params)},
                  {"stance_fraction", k.stance_fraction},
                  {"walk_stance_fraction", k.walk_stance_fraction},
                  {"retarget", k.retarget}};
  j["control"] = {{"control_every", k.control_every},
                  {"mpc_every", k.mpc_every},
                  {"stance_kd", k.stance_kd},
                  {"anchor_limit", k.anchor_limit},
                  {"max_accel", k.max_accel},
                  {"max_yaw_accel", k.max_yaw_accel},
                  {"support_shift_lateral", k.support_shift_lateral},
                  {"support_shift_forward", k.support_shift_forward},
                  {"swing", {{"kp", vec_json(k.swing.kp.diagonal())}, {"kd", vec_json(k.swing.kd.diagonal())}}},
                  {"mpc",
                   {{"horizon", k.mpc.horizon},
                    {"dt", k.mpc.dt},
                    {"q_weights", k.mpc.q_weights},
                    {"r_weight", k.mpc.r_weight},
                    {"mu", k.mpc.mu},
                    {"f_min", k.mpc.f_min},
                    {"f_max", k.mpc.f_max},
                    {"max_iterations", k.mpc.max_iterations}}}};
  j["run"] = {{"duration", c.run.duration},
              {"velocity", {c.run.velocity.vx, c.run.velocity.vy, c.run.velocity.yaw_rate}},
              {"initial_noise", c.run.initial_noise}};
  nlohmann::json gaits = nlohmann::json::array();
  for (auto g : c.study.grid.gaits) gaits.push_back(gait_name(g));
  const auto& g = c.study.grid;
  j["study"] = {{"velocities", g.velocities},
                {"gaits", gaits},
                {"swing_times", g.swing_times},
                {"step_heights", g.step_heights},
                {"robot_heights", g.robot_heights},
                {"ellipse_rx", g.ellipse_rx},
                {"ellipse_ry", g.ellipse_ry},
                {"duration", g.duration},
                {"weights", {{"cot", c.study.weights.cot}, {"manipulability", c.study.weights.manipulability}}},
                {"bucket_width", c.study.bucket_width},
                {"workers", c.study.workers},
                {"initial_noise", c.study.initial_noise}};
  const auto& t = c.teleop;
  j["teleop"] = {{"bind", t.bind},
                 {"port", t.port},
                 {"telemetry_hz", t.telemetry_hz},
                 {"command_hz", t.command_hz},
                 {"batch", t.batch},
                 {"decay_time", t.decay_time},
                 {"max_vx", t.max_vx},
                 {"max_vy", t.max_vy},
                 {"max_yaw_rate", t.max_yaw_rate},
                 {"push_force", t.push_force},
                 {"push_duration", t.push_duration},
                 {"time_scale", t.time_scale},
                 {"lookup_file", t.lookup_file}};
  return j;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("parse error: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace eemp
