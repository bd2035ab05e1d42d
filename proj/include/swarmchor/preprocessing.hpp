#ifndef SWARMCHOR_PREPROCESSING_HPP
#define SWARMCHOR_PREPROCESSING_HPP

#include "swarmchor/script.hpp"

#include <limits>
#include <optional>

namespace swarmchor {

struct SeparationPolicy {
  double min_distance = 0.5;
  double push_offset = 0.5;
  int max_sweeps = 50;

  void validate() const {
    if (!(min_distance > 0.0) || !(push_offset >= min_distance / 2.0))
      fail(ErrorCode::InvalidArgument, "separation policy needs push_offset >= min_distance / 2 > 0");
    if (max_sweeps < 1) fail(ErrorCode::InvalidArgument, "max_sweeps must be positive");
  }
};

/// Margin kept from the walls when rescaling an axis.
inline constexpr double kNormalizeMargin = 0.05;

/// Rescales each axis with a waypoint outside the volume so that the script's
/// extent on that axis maps affinely onto the volume shrunk by the margin.
/// Axes without violations are left alone. An axis with zero extent cannot be
/// rescaled and is clamped to the shrunk volume instead.
inline WaypointScript normalize_to_volume(const WaypointScript& script, const FlightVolume& vol,
                                          double margin = kNormalizeMargin) {
  WaypointScript out = script;
  for (int ax = 0; ax < 3; ++ax) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    bool violated = false;
    for (const auto& d : script.drones)
      for (const auto& w : d.waypoints) {
        const double v = w.position[ax];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        violated |= v < vol.lower[ax] || v > vol.upper[ax];
      }
    if (!violated) continue;
    const double dst_lo = vol.lower[ax] + margin, dst_hi = vol.upper[ax] - margin;
    const double extent = hi - lo;
    for (auto& d : out.drones)
      for (auto& w : d.waypoints) {
        double& v = w.position[ax];
        if (extent > 0.0)
          v = std::clamp(dst_lo + (v - lo) * (dst_hi - dst_lo) / extent, dst_lo, dst_hi);
        else
          v = std::clamp(v, dst_lo, dst_hi);
      }
  }
  return out;
}

/// Pushes apart simultaneous waypoints closer than the policy distance. The
/// closest offending pair moves apart by push_offset along the line joining
/// them (exactly coincident pairs split along x, lower index towards -x),
/// then both points are clamped back into the volume.
inline WaypointScript separate_coincident_waypoints(const WaypointScript& script, const SeparationPolicy& policy,
                                                    const FlightVolume& vol = {}) {
  policy.validate();
  WaypointScript out = script;
  const std::size_t n = out.drones.size();
  const std::size_t beats = n ? out.drones.front().waypoints.size() : 0;
  for (std::size_t b = 0; b < beats; ++b) {
    auto at = [&](std::size_t i) -> Vec3& { return out.drones[i].waypoints.at(b).position; };
    bool clean = false;
    for (int sweep = 0; sweep < policy.max_sweeps && !clean; ++sweep) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t bi = 0, bj = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          const double d = (at(i) - at(j)).norm();
          if (d < best) best = d, bi = i, bj = j;
        }
      if (!(best < policy.min_distance)) {
        clean = true;
        break;
      }
      const Vec3 dir = best > 0.0 ? Vec3((at(bj) - at(bi)) / best) : Vec3::UnitX();
      at(bi) = vol.clamp(at(bi) - 0.5 * policy.push_offset * dir);
      at(bj) = vol.clamp(at(bj) + 0.5 * policy.push_offset * dir);
    }
    if (!clean) {
      // The last sweep may have fixed the final pair.
      bool ok = true;
      for (std::size_t i = 0; i < n && ok; ++i)
        for (std::size_t j = i + 1; j < n && ok; ++j) ok = !((at(i) - at(j)).norm() < policy.min_distance);
      if (!ok)
        fail(ErrorCode::SeparationFailed, "could not separate waypoints at t=" +
                                              std::to_string(out.drones.front().waypoints[b].t) + " within " +
                                              std::to_string(policy.max_sweeps) + " sweeps");
    }
  }
  return out;
}

enum class ViolationType { out_of_volume, coincident, non_monotonic_time, missing_beat };

inline std::string_view to_string(ViolationType v) {
  switch (v) {
    case ViolationType::out_of_volume: return "out_of_volume";
    case ViolationType::coincident: return "coincident";
    case ViolationType::non_monotonic_time: return "non_monotonic_time";
    case ViolationType::missing_beat: return "missing_beat";
  }
  return "";
}

struct Violation {
  ViolationType type;
  std::vector<int> drone_ids;
  double t = 0.0;
};

using ValidationReport = std::vector<Violation>;

inline nlohmann::json report_to_json(const ValidationReport& r) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : r) out.push_back({{"type", to_string(v.type)}, {"drones", v.drone_ids}, {"t", v.t}});
  return out;
}

inline constexpr double kBeatTolerance = 1e-3;

/// Everything that would stop the script from entering the filter.
inline ValidationReport validate_script(const WaypointScript& script, const FlightVolume& vol,
                                        const SeparationPolicy& policy) {
  ValidationReport report;
  for (const auto& d : script.drones) {
    for (std::size_t k = 0; k < d.waypoints.size(); ++k) {
      const auto& w = d.waypoints[k];
      if (!vol.contains(w.position)) report.push_back({ViolationType::out_of_volume, {d.id}, w.t});
      if (k > 0 && !(w.t > d.waypoints[k - 1].t)) report.push_back({ViolationType::non_monotonic_time, {d.id}, w.t});
    }
    // Each beat must be matched by a waypoint of this drone.
    for (double bt : script.beat_times) {
      const bool hit = std::any_of(d.waypoints.begin(), d.waypoints.end(),
                                   [&](const Waypoint& w) { return std::abs(w.t - bt) <= kBeatTolerance; });
      if (!hit) report.push_back({ViolationType::missing_beat, {d.id}, bt});
    }
    if (d.waypoints.size() > script.beat_times.size())
      for (const auto& w : d.waypoints) {
        const bool on_beat = std::any_of(script.beat_times.begin(), script.beat_times.end(),
                                         [&](double bt) { return std::abs(w.t - bt) <= kBeatTolerance; });
        if (!on_beat) report.push_back({ViolationType::missing_beat, {d.id}, w.t});
      }
  }
  // Simultaneous pairs, matched by beat index when every drone has all beats.
  const std::size_t n = script.drones.size();
  for (std::size_t b = 0; b < script.beat_times.size(); ++b) {
    std::vector<std::optional<Vec3>> pos(n);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& w : script.drones[i].waypoints)
        if (std::abs(w.t - script.beat_times[b]) <= kBeatTolerance) {
          pos[i] = w.position;
          break;
        }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (pos[i] && pos[j] && (*pos[i] - *pos[j]).norm() < policy.min_distance)
          report.push_back({ViolationType::coincident, {script.drones[i].id, script.drones[j].id},
                            script.beat_times[b]});
  }
  return report;
}

/// Normalization followed by separation; the input of the filter.
inline WaypointScript preprocess(const WaypointScript& script, const FlightVolume& vol,
                                 const SeparationPolicy& policy) {
  return separate_coincident_waypoints(normalize_to_volume(script, vol), policy, vol);
}

}  // namespace swarmchor

#endif  // SWARMCHOR_PREPROCESSING_HPP
