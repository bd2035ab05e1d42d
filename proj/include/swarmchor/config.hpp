#ifndef SWARMCHOR_CONFIG_HPP
#define SWARMCHOR_CONFIG_HPP

#include "swarmchor/backend.hpp"
#include "swarmchor/preprocessing.hpp"
#include "swarmchor/swarm_sim.hpp"

#include <filesystem>
#include <fstream>

namespace swarmchor {

struct SongEntry {
  std::string id;
  std::string title;
  std::string mood;
  std::string genre;
  /// WAV file (analyzed) or JSON beat file (loaded).
  std::filesystem::path path;
};

/// Everything the CLI and the service read from the JSON config file.
struct AppConfig {
  FlightVolume volume;
  DroneLimits limits;
  EllipsoidEnvelope envelope;
  HorizonConfig horizon;
  SimConfig sim;
  SeparationPolicy separation;
  PromptConfig prompt;
  BeatAnalysisConfig beats;
  GenBackendConfig backend;
  std::size_t max_drones = 16;
  std::vector<SongEntry> songs;
  std::filesystem::path sessions_dir = "sessions";

  void validate() const {
    volume.validate();
    limits.validate();
    envelope.validate();
    horizon.validate();
    sim.validate();
    separation.validate();
    backend.validate();
    if (max_drones < 1) fail(ErrorCode::InvalidArgument, "max_drones must be at least 1");
  }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::ParseError, std::string("config field '") + key + "' has the wrong type");
  }
}

inline void read_vec3(const nlohmann::json& obj, const char* key, Vec3& out) {
  if (!obj.contains(key)) return;
  std::vector<double> v;
  read_field(obj, key, v);
  if (v.size() != 3) fail(ErrorCode::ParseError, std::string("config field '") + key + "' needs three numbers");
  out = Vec3(v[0], v[1], v[2]);
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) fail(ErrorCode::ParseError, std::string("config section '") + key + "' must be an object");
  return j[key];
}

inline std::vector<SongEntry> parse_catalog(const nlohmann::json& arr, const std::filesystem::path& base) {
  if (!arr.is_array()) fail(ErrorCode::ParseError, "song catalog must be an array");
  std::vector<SongEntry> out;
  for (const auto& s : arr) {
    if (!s.is_object()) fail(ErrorCode::ParseError, "song entries must be objects");
    SongEntry e;
    read_field(s, "id", e.id);
    read_field(s, "title", e.title);
    read_field(s, "mood", e.mood);
    read_field(s, "genre", e.genre);
    std::string path;
    read_field(s, "path", path);
    if (e.id.empty() || path.empty()) fail(ErrorCode::ParseError, "song entries need an id and a path");
    e.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base / path;
    out.push_back(std::move(e));
  }
  return out;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Missing fields keep their defaults; relative paths resolve against base.
inline AppConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base = ".") {
  using detail::read_field;
  using detail::read_vec3;
  using detail::section;
  if (!j.is_object()) fail(ErrorCode::ParseError, "config must be a JSON object");
  AppConfig c;

  const auto& vol = section(j, "volume");
  read_vec3(vol, "lower", c.volume.lower);
  read_vec3(vol, "upper", c.volume.upper);

  const auto& lim = section(j, "limits");
  read_field(lim, "max_speed", c.limits.max_speed);
  read_field(lim, "min_thrust", c.limits.min_thrust);
  read_field(lim, "max_thrust", c.limits.max_thrust);

  read_vec3(section(j, "envelope"), "semi_axes", c.envelope.semi_axes);

  const auto& hz = section(j, "horizon");
  auto& h = c.horizon;
  read_field(hz, "dt", h.dt);
  read_field(hz, "kappa_frac", h.kappa_frac);
  read_field(hz, "w_goal", h.w_goal);
  read_field(hz, "w_smooth", h.w_smooth);
  read_field(hz, "q_smooth", h.q_smooth);
  read_field(hz, "gamma", h.gamma);
  read_field(hz, "max_sweeps", h.max_sweeps);
  read_field(hz, "tol", h.tol);
  read_field(hz, "rho0", h.rho0);
  read_field(hz, "rho_growth", h.rho_growth);
  read_field(hz, "rho_max", h.rho_max);
  read_field(hz, "inner_iterations", h.inner_iterations);
  read_field(hz, "max_dilations", h.max_dilations);
  read_field(hz, "dilation_factor", h.dilation_factor);
  read_field(hz, "box_margin", h.box_margin);
  read_field(hz, "kin_margin", h.kin_margin);
  read_field(hz, "clearance_margin", h.clearance_margin);

  const auto& sim = section(j, "sim");
  read_field(sim, "sim_hz", c.sim.sim_hz);
  read_field(sim, "ctrl_hz", c.sim.ctrl_hz);
  read_field(sim, "kp", c.sim.kp);
  read_field(sim, "kd", c.sim.kd);
  read_field(sim, "drag_coeff", c.sim.drag_coeff);
  read_field(sim, "accel_clamp", c.sim.accel_clamp);
  read_field(sim, "feedforward", c.sim.feedforward);
  read_field(sim, "seed", c.sim.seed);

  const auto& sep = section(j, "separation");
  read_field(sep, "min_distance", c.separation.min_distance);
  read_field(sep, "push_offset", c.separation.push_offset);
  read_field(sep, "max_sweeps", c.separation.max_sweeps);

  const auto& pr = section(j, "prompt");
  read_field(pr, "beat_budget", c.prompt.beat_budget);
  read_field(pr, "max_stride", c.prompt.max_stride);
  read_field(pr, "resend_history", c.prompt.resend_history);

  const auto& bt = section(j, "beats");
  read_field(bt, "frame", c.beats.frame);
  read_field(bt, "hop", c.beats.hop);
  read_field(bt, "min_bpm", c.beats.min_bpm);
  read_field(bt, "max_bpm", c.beats.max_bpm);
  read_field(bt, "prior_bpm", c.beats.prior_bpm);
  read_field(bt, "prior_octaves", c.beats.prior_octaves);
  read_field(bt, "tightness", c.beats.tightness);

  const auto& be = section(j, "backend");
  auto& b = c.backend;
  if (be.contains("kind")) {
    std::string kind;
    read_field(be, "kind", kind);
    b.kind = backend_kind_from_string(kind);
  }
  read_field(be, "base_url", b.base_url);
  read_field(be, "model", b.model_name);
  read_field(be, "api_key_env", b.api_key_env_var);
  read_field(be, "timeout_s", b.timeout_s);
  read_field(be, "temperature", b.temperature);
  read_field(be, "seed", b.seed);
  if (be.contains("style")) {
    std::string style;
    read_field(be, "style", style);
    b.style = procedural_style_from_string(style);
  }
  b.volume = c.volume;
  b.min_separation = c.separation.min_distance;

  read_field(j, "max_drones", c.max_drones);
  std::string sessions;
  read_field(j, "sessions_dir", sessions);
  if (!sessions.empty()) c.sessions_dir = std::filesystem::path(sessions).is_absolute() ? std::filesystem::path(sessions) : base / sessions;

  if (j.contains("songs")) {
    if (j["songs"].is_string()) {
      const std::filesystem::path cat = base / j["songs"].get<std::string>();
      c.songs = detail::parse_catalog(detail::read_json_file(cat), cat.parent_path());
    } else {
      c.songs = detail::parse_catalog(j["songs"], base);
    }
  }
  c.validate();
  return c;
}

inline AppConfig load_config(const std::filesystem::path& path) {
  return config_from_json(detail::read_json_file(path), path.parent_path().empty() ? "." : path.parent_path());
}

}  // namespace swarmchor

#endif  // SWARMCHOR_CONFIG_HPP
