#ifndef SWARMCHOR_SCRIPT_HPP
#define SWARMCHOR_SCRIPT_HPP

#include "swarmchor/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>

namespace swarmchor {

struct Waypoint {
  double t = 0.0;
  Vec3 position = Vec3::Zero();

  bool operator==(const Waypoint& o) const { return t == o.t && position == o.position; }
};

struct DroneWaypoints {
  int id = 0;
  std::vector<Waypoint> waypoints;

  bool operator==(const DroneWaypoints& o) const { return id == o.id && waypoints == o.waypoints; }
};

/// Per-drone timed waypoints, one per beat, plus where each drone starts.
struct WaypointScript {
  std::vector<DroneWaypoints> drones;
  /// Timestamps every drone visits (the beats used).
  std::vector<double> beat_times;
  /// Start position of each drone at t = 0, indexed like `drones`.
  std::vector<Vec3> initial_positions;

  std::size_t size() const { return drones.size(); }
  std::size_t beats() const { return beat_times.size(); }

  bool operator==(const WaypointScript& o) const {
    return drones == o.drones && beat_times == o.beat_times && initial_positions == o.initial_positions;
  }

  /// Position of every drone at beat b.
  std::vector<Vec3> formation(std::size_t b) const {
    std::vector<Vec3> out;
    out.reserve(drones.size());
    for (const auto& d : drones) out.push_back(d.waypoints.at(b).position);
    return out;
  }
};

/// Default start layout: a centred grid at hover height, 0.6 m pitch.
inline std::vector<Vec3> default_initial_positions(std::size_t n, const FlightVolume& vol) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = cols ? (n + cols - 1) / cols : 0;
  const Vec3 centre = 0.5 * (vol.lower + vol.upper);
  const double z = std::clamp(1.0, vol.lower.z() + 0.05, vol.upper.z() - 0.05);
  const double pitch = 0.6;
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = (static_cast<double>(i % cols) - 0.5 * static_cast<double>(cols - 1)) * pitch;
    const double cy = (static_cast<double>(i / cols) - 0.5 * static_cast<double>(rows - 1)) * pitch;
    out.push_back(vol.clamp(Vec3(centre.x() + cx, centre.y() + cy, z)));
  }
  return out;
}

/// Canonical waypoint-script JSON:
/// {"drones":[{"id":0,"waypoints":[{"t":0.5,"x":0.0,"y":0.0,"z":1.0},...]},...]}
/// With `with_initial`, an "initial_positions" array of [x, y, z] is added.
inline nlohmann::json script_to_json(const WaypointScript& s, bool with_initial = false) {
  nlohmann::json drones = nlohmann::json::array();
  for (const auto& d : s.drones) {
    nlohmann::json wps = nlohmann::json::array();
    for (const auto& w : d.waypoints)
      wps.push_back({{"t", w.t}, {"x", w.position.x()}, {"y", w.position.y()}, {"z", w.position.z()}});
    drones.push_back({{"id", d.id}, {"waypoints", std::move(wps)}});
  }
  nlohmann::json out = {{"drones", std::move(drones)}};
  if (with_initial) {
    nlohmann::json init = nlohmann::json::array();
    for (const auto& p : s.initial_positions) init.push_back({p.x(), p.y(), p.z()});
    out["initial_positions"] = std::move(init);
  }
  return out;
}

inline std::string script_to_string(const WaypointScript& s) { return script_to_json(s).dump(); }

namespace detail {

inline double number_field(const nlohmann::json& obj, const char* key) {
  if (!obj.contains(key) || !obj[key].is_number())
    fail(ErrorCode::MalformedResponse, std::string("waypoint field '") + key + "' missing or not a number");
  const double v = obj[key].get<double>();
  if (!std::isfinite(v)) fail(ErrorCode::MalformedResponse, std::string("waypoint field '") + key + "' not finite");
  return v;
}

}  // namespace detail

/// Reads the canonical shape (also accepts a bare array of drone records).
/// Waypoints are sorted by time; no beat-set checks happen here.
inline std::vector<DroneWaypoints> drones_from_json(const nlohmann::json& j) {
  const nlohmann::json* arr = nullptr;
  if (j.is_object() && j.contains("drones") && j["drones"].is_array())
    arr = &j["drones"];
  else if (j.is_array())
    arr = &j;
  else
    fail(ErrorCode::MalformedResponse, "expected an object with a 'drones' array");

  std::vector<DroneWaypoints> out;
  std::set<int> ids;
  for (const auto& d : *arr) {
    if (!d.is_object() || !d.contains("id") || !d["id"].is_number_integer() || !d.contains("waypoints") ||
        !d["waypoints"].is_array())
      fail(ErrorCode::MalformedResponse, "drone record needs an integer 'id' and a 'waypoints' array");
    DroneWaypoints dw;
    dw.id = d["id"].get<int>();
    if (!ids.insert(dw.id).second) fail(ErrorCode::MalformedResponse, "duplicate drone id " + std::to_string(dw.id));
    for (const auto& w : d["waypoints"]) {
      if (!w.is_object()) fail(ErrorCode::MalformedResponse, "waypoint must be an object");
      Waypoint wp;
      wp.t = detail::number_field(w, "t");
      if (wp.t < 0.0) fail(ErrorCode::MalformedResponse, "waypoint time must be non-negative");
      wp.position = Vec3(detail::number_field(w, "x"), detail::number_field(w, "y"), detail::number_field(w, "z"));
      dw.waypoints.push_back(wp);
    }
    std::stable_sort(dw.waypoints.begin(), dw.waypoints.end(),
                     [](const Waypoint& a, const Waypoint& b) { return a.t < b.t; });
    out.push_back(std::move(dw));
  }
  return out;
}

/// Loads a script file's drones; beat times come from the first drone.
/// Initial positions come from the argument, then the file's
/// "initial_positions", then each drone's first waypoint.
inline WaypointScript script_from_json(const nlohmann::json& j, const std::vector<Vec3>& initial = {}) {
  WaypointScript s;
  s.drones = drones_from_json(j);
  if (s.drones.empty()) fail(ErrorCode::MalformedResponse, "script has no drones");
  for (const auto& w : s.drones.front().waypoints) s.beat_times.push_back(w.t);
  if (initial.size() == s.drones.size()) {
    s.initial_positions = initial;
  } else if (j.is_object() && j.contains("initial_positions")) {
    const auto& arr = j["initial_positions"];
    if (!arr.is_array() || arr.size() != s.drones.size())
      fail(ErrorCode::MalformedResponse, "initial_positions needs one entry per drone");
    for (const auto& p : arr) {
      if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() || !p[2].is_number())
        fail(ErrorCode::MalformedResponse, "initial position must be [x, y, z]");
      s.initial_positions.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
    }
  } else {
    for (const auto& d : s.drones)
      s.initial_positions.push_back(d.waypoints.empty() ? Vec3::Zero() : d.waypoints.front().position);
  }
  return s;
}

}  // namespace swarmchor

#endif  // SWARMCHOR_SCRIPT_HPP
