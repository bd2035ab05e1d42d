#ifndef SWARMCHOR_SWARM_SIM_HPP
#define SWARMCHOR_SWARM_SIM_HPP

#include "swarmchor/safety_filter.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>

namespace swarmchor {

struct DroneState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double t = 0.0;
};

struct SimConfig {
  double sim_hz = 240.0;
  double ctrl_hz = 48.0;
  double kp = 16.0;
  double kd = 8.0;
  /// Linear drag coefficient, 1/s.
  double drag_coeff = 0.1;
  /// Per-component limit on the commanded acceleration, m/s^2.
  double accel_clamp = 10.0;
  /// Feed the reference velocity and acceleration forward.
  bool feedforward = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ctrl_hz > 0.0 && sim_hz >= ctrl_hz)) fail(ErrorCode::InvalidArgument, "need sim_hz >= ctrl_hz > 0");
    if (!(kp > 0.0 && kd > 0.0)) fail(ErrorCode::InvalidArgument, "controller gains must be positive");
    if (!(drag_coeff >= 0.0 && accel_clamp > 0.0)) fail(ErrorCode::InvalidArgument, "drag and clamp out of range");
  }
};

/// Position reference with optional feedforward terms.
struct Reference {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
};

/// a = kp (ref_p - p) + kd (ref_v - v) + ref_a, clamped per component. With a
/// plain position reference (zero feedforward) this is kp (ref - p) - kd v.
inline Vec3 controller_step(const DroneState& s, const Reference& ref, const SimConfig& cfg) {
  const Vec3 a = cfg.kp * (ref.p - s.p) + cfg.kd * (ref.v - s.v) + ref.a;
  return a.cwiseMax(-cfg.accel_clamp).cwiseMin(cfg.accel_clamp);
}

inline Vec3 controller_step(const DroneState& s, const Vec3& ref_p, const SimConfig& cfg) {
  return controller_step(s, Reference{ref_p, Vec3::Zero(), Vec3::Zero()}, cfg);
}

/// Semi-implicit Euler with linear drag.
inline DroneState sim_step(const DroneState& s, const Vec3& a_cmd, double dt, double drag_coeff) {
  DroneState out;
  out.v = (s.v + a_cmd * dt) * (1.0 - drag_coeff * dt);
  out.p = s.p + out.v * dt;
  out.t = s.t + dt;
  return out;
}

struct SimLog {
  double sim_hz = 0.0;
  double ctrl_hz = 0.0;
  std::vector<int> ids;
  /// Per drone, one state per simulation step including t = 0.
  std::vector<std::vector<DroneState>> states;
  /// Reference held at each simulation step.
  SwarmTracks refs;

  std::size_t drones() const { return states.size(); }
  std::size_t samples() const { return states.empty() ? 0 : states.front().size(); }

  SwarmTracks positions() const {
    SwarmTracks out(drones());
    for (std::size_t i = 0; i < drones(); ++i)
      for (const auto& s : states[i]) out[i].push_back(s.p);
    return out;
  }

  /// Simulated positions at the control instants.
  SwarmTracks positions_at_ctrl() const {
    SwarmTracks out(drones());
    const double ratio = sim_hz / ctrl_hz;
    for (std::size_t i = 0; i < drones(); ++i)
      for (std::size_t n = 0;; ++n) {
        const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratio));
        if (k >= states[i].size()) break;
        out[i].push_back(states[i][k].p);
      }
    return out;
  }
};

namespace detail {

/// Reference at control tick n with forward-difference velocity and central
/// acceleration taken from the command sequence.
inline Reference reference_at(const Track& c, std::size_t n, double hz, bool feedforward) {
  Reference r;
  r.p = c[n];
  if (!feedforward || c.size() < 2) return r;
  if (n + 1 < c.size()) r.v = (c[n + 1] - c[n]) * hz;
  if (n >= 1 && n + 1 < c.size()) r.a = (c[n + 1] - 2.0 * c[n] + c[n - 1]) * hz * hz;
  return r;
}

}  // namespace detail

/// Runs the swarm at sim_hz, holding each control-rate reference across the
/// substeps until the next control tick.
inline SimLog run_simulation(const CommandTrack& ctrl, const SimConfig& cfg, const std::vector<DroneState>& initial,
                             const std::vector<int>& ids = {}) {
  cfg.validate();
  if (ctrl.positions.size() != initial.size())
    fail(ErrorCode::LengthMismatch, "one command track per drone required");
  if (!ids.empty() && ids.size() != initial.size()) fail(ErrorCode::LengthMismatch, "one id per drone required");
  if (std::abs(ctrl.hz - cfg.ctrl_hz) > 1e-9) fail(ErrorCode::InconsistentInputs, "command rate differs from ctrl_hz");
  const std::size_t n = initial.size();
  const std::size_t ticks = ctrl.samples();
  for (const auto& tr : ctrl.positions)
    if (tr.size() != ticks) fail(ErrorCode::LengthMismatch, "command tracks differ in length");

  SimLog log;
  log.sim_hz = cfg.sim_hz;
  log.ctrl_hz = cfg.ctrl_hz;
  for (std::size_t i = 0; i < n; ++i) log.ids.push_back(ids.empty() ? static_cast<int>(i) : ids[i]);
  log.states.assign(n, {});
  log.refs.assign(n, {});
  if (ticks == 0) return log;

  const double duration = static_cast<double>(ticks - 1) / cfg.ctrl_hz;
  const auto steps = static_cast<std::size_t>(std::floor(duration * cfg.sim_hz + 1e-9));
  const double dt = 1.0 / cfg.sim_hz;
  for (std::size_t i = 0; i < n; ++i) {
    DroneState s = initial[i];
    s.t = 0.0;
    auto& out = log.states[i];
    out.reserve(steps + 1);
    Reference ref;
    std::size_t held = static_cast<std::size_t>(-1);
    for (std::size_t k = 0; k <= steps; ++k) {
      const auto tick = std::min(ticks - 1, static_cast<std::size_t>(std::floor(static_cast<double>(k) * cfg.ctrl_hz /
                                                                                 cfg.sim_hz + 1e-9)));
      if (tick != held) {
        ref = detail::reference_at(ctrl.positions[i], tick, cfg.ctrl_hz, cfg.feedforward);
        if (cfg.feedforward) ref.a += cfg.drag_coeff * ref.v;
        held = tick;
      }
      s.t = static_cast<double>(k) * dt;
      out.push_back(s);
      log.refs[i].push_back(ref.p);
      if (k < steps) s = sim_step(s, controller_step(s, ref, cfg), dt, cfg.drag_coeff);
    }
  }
  return log;
}

inline std::vector<DroneState> states_at_rest(const std::vector<Vec3>& positions) {
  std::vector<DroneState> out;
  for (const auto& p : positions) out.push_back({p, Vec3::Zero(), 0.0});
  return out;
}

inline std::string simlog_to_csv(const SimLog& log) {
  std::string out = "drone_id,t,x,y,z,vx,vy,vz,ref_x,ref_y,ref_z\n";
  for (std::size_t i = 0; i < log.drones(); ++i)
    for (std::size_t k = 0; k < log.samples(); ++k) {
      const auto& s = log.states[i][k];
      const auto& r = log.refs[i][k];
      out += std::to_string(log.ids[i]) + "," + format_g6(s.t);
      for (double v : {s.p.x(), s.p.y(), s.p.z(), s.v.x(), s.v.y(), s.v.z(), r.x(), r.y(), r.z()})
        out += "," + format_g6(v);
      out += "\n";
    }
  return out;
}

/// Playback form: positions every `stride` simulation steps.
inline nlohmann::json simlog_to_json(const SimLog& log, std::size_t stride = 1) {
  if (stride == 0) fail(ErrorCode::InvalidArgument, "stride must be positive");
  nlohmann::json drones = nlohmann::json::array();
  for (std::size_t i = 0; i < log.drones(); ++i) {
    nlohmann::json p = nlohmann::json::array();
    for (std::size_t k = 0; k < log.samples(); k += stride) {
      const auto& s = log.states[i][k];
      p.push_back({s.p.x(), s.p.y(), s.p.z()});
    }
    drones.push_back({{"id", log.ids[i]}, {"p", p}});
  }
  return {{"hz", log.sim_hz / static_cast<double>(stride)}, {"drones", drones}};
}

}  // namespace swarmchor

#endif  // SWARMCHOR_SWARM_SIM_HPP
