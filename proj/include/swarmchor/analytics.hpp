#ifndef SWARMCHOR_ANALYTICS_HPP
#define SWARMCHOR_ANALYTICS_HPP

#include "swarmchor/choreography.hpp"
#include "swarmchor/swarm_sim.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace swarmchor {

/// h_ij for all pairs; symmetric with +inf on the diagonal.
inline Eigen::MatrixXd pairwise_clearance(const std::vector<Vec3>& positions, const EllipsoidEnvelope& env) {
  const auto n = static_cast<Eigen::Index>(positions.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      h(i, j) = h(j, i) = env.clearance(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(j)]);
  return h;
}

/// Consecutive steps [first, last] during which a pair had h < 0.
struct CollisionEvent {
  std::size_t i = 0, j = 0;
  std::size_t first = 0, last = 0;
};

struct CollisionReport {
  double percent_in_collision = 0.0;
  std::size_t total_steps = 0;
  std::size_t violating_steps = 0;
  std::vector<CollisionEvent> events;
  EllipsoidEnvelope envelope;
};

/// A step is in collision when any pair has h < 0.
inline CollisionReport percent_in_collision(const SwarmTracks& tracks, const EllipsoidEnvelope& env) {
  CollisionReport r;
  r.envelope = env;
  const std::size_t n = tracks.size();
  r.total_steps = n ? tracks.front().size() : 0;
  for (const auto& t : tracks)
    if (t.size() != r.total_steps) fail(ErrorCode::LengthMismatch, "tracks differ in length");
  std::vector<bool> hit(r.total_steps, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      bool open = false;
      for (std::size_t k = 0; k < r.total_steps; ++k) {
        const bool c = env.clearance(tracks[i][k], tracks[j][k]) < 0.0;
        if (c) {
          hit[k] = true;
          if (open) r.events.back().last = k;
          else r.events.push_back({i, j, k, k});
        }
        open = c;
      }
    }
  for (bool h : hit) r.violating_steps += h;
  if (r.total_steps)
    r.percent_in_collision = 100.0 * static_cast<double>(r.violating_steps) / static_cast<double>(r.total_steps);
  return r;
}

inline SwarmTracks resample_tracks(const SwarmTracks& tracks, double dt, double hz) {
  SwarmTracks out;
  for (const auto& t : tracks) out.push_back(resample_track(t, dt, hz));
  return out;
}

inline CollisionReport percent_in_collision(const FilteredTrajectory& traj, const EllipsoidEnvelope& env,
                                            double sample_hz) {
  return percent_in_collision(resample_tracks(traj.p, traj.dt, sample_hz), env);
}

inline CollisionReport percent_in_collision(const SimLog& log, const EllipsoidEnvelope& env, double sample_hz) {
  return percent_in_collision(resample_tracks(log.positions(), 1.0 / log.sim_hz, sample_hz), env);
}

/// Straight-line flight between consecutive waypoints starting from the
/// initial positions at t = 0, sampled at hz: the script as flown without
/// the safety filter.
inline SwarmTracks script_tracks(const WaypointScript& script, double hz) {
  if (!(hz > 0.0)) fail(ErrorCode::InvalidArgument, "sample rate must be positive");
  SwarmTracks out(script.size());
  const double end = script.beat_times.empty() ? 0.0 : script.beat_times.back();
  const auto count = static_cast<std::size_t>(std::floor(end * hz + 1e-9)) + 1;
  for (std::size_t i = 0; i < script.size(); ++i) {
    std::vector<double> t{0.0};
    std::vector<Vec3> p{script.initial_positions.at(i)};
    for (const auto& w : script.drones[i].waypoints)
      if (w.t > t.back()) {
        t.push_back(w.t);
        p.push_back(w.position);
      }
    std::size_t seg = 0;
    for (std::size_t n = 0; n < count; ++n) {
      const double tn = static_cast<double>(n) / hz;
      while (seg + 1 < t.size() && t[seg + 1] < tn) ++seg;
      if (seg + 1 >= t.size()) {
        out[i].push_back(p.back());
        continue;
      }
      const double f = std::clamp((tn - t[seg]) / (t[seg + 1] - t[seg]), 0.0, 1.0);
      out[i].push_back((1.0 - f) * p[seg] + f * p[seg + 1]);
    }
  }
  return out;
}

struct RmseReport {
  Vec3 axis = Vec3::Zero();
  /// sqrt of the mean of the per-axis mean squared errors.
  double overall = 0.0;
};

inline RmseReport trajectory_rmse(const SwarmTracks& a, const SwarmTracks& b) {
  if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "different drone counts");
  Vec3 sum = Vec3::Zero();
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) fail(ErrorCode::LengthMismatch, "series differ in length");
    for (std::size_t k = 0; k < a[i].size(); ++k) sum += (a[i][k] - b[i][k]).cwiseAbs2();
    count += a[i].size();
  }
  RmseReport r;
  if (count == 0) return r;
  const Vec3 mse = sum / static_cast<double>(count);
  r.axis = mse.cwiseSqrt();
  r.overall = std::sqrt(mse.mean());
  return r;
}

inline RmseReport trajectory_rmse(const Track& a, const Track& b) { return trajectory_rmse(SwarmTracks{a}, SwarmTracks{b}); }

/// Mean of ||p[k] - p[k-1]|| / dt over the steps of each drone.
inline std::vector<double> mean_speed_per_drone(const SwarmTracks& tracks, double dt) {
  if (!(dt > 0.0)) fail(ErrorCode::InvalidArgument, "dt must be positive");
  std::vector<double> out;
  for (const auto& t : tracks) {
    if (t.size() < 2) fail(ErrorCode::InvalidArgument, "need at least two samples");
    double s = 0.0;
    for (std::size_t k = 1; k < t.size(); ++k) s += (t[k] - t[k - 1]).norm() / dt;
    out.push_back(s / static_cast<double>(t.size() - 1));
  }
  return out;
}

inline double mean_speed(const SwarmTracks& tracks, double dt) {
  const auto per = mean_speed_per_drone(tracks, dt);
  if (per.empty()) return 0.0;
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

// ---------------------------------------------------------------------------
// Plot series

enum class PlotKind { beat_xy, collision_hist, velocity_bars, rmse_bars };

inline std::string_view to_string(PlotKind k) {
  switch (k) {
    case PlotKind::beat_xy: return "beat_xy";
    case PlotKind::collision_hist: return "collision_hist";
    case PlotKind::velocity_bars: return "velocity_bars";
    case PlotKind::rmse_bars: return "rmse_bars";
  }
  return "";
}

inline PlotKind plot_kind_from_string(const std::string& s) {
  for (auto k : {PlotKind::beat_xy, PlotKind::collision_hist, PlotKind::velocity_bars, PlotKind::rmse_bars})
    if (to_string(k) == s) return k;
  fail(ErrorCode::InvalidArgument, "unknown plot kind '" + s + "'");
}

/// (drone, t, x, y, is_beat) for every sample; is_beat is 1 exactly at the
/// window ends.
inline std::string beat_xy_csv(const FilteredTrajectory& t) {
  for (std::size_t b : t.beat_indices)
    if (b >= t.samples()) fail(ErrorCode::InconsistentInputs, "beat index beyond the trajectory");
  std::ostringstream o;
  o << "drone,t,x,y,is_beat\n";
  for (std::size_t i = 0; i < t.drones(); ++i) {
    std::size_t next = 0;
    for (std::size_t k = 0; k < t.samples(); ++k) {
      bool beat = false;
      while (next < t.beat_indices.size() && t.beat_indices[next] == k) beat = true, ++next;
      o << t.ids[i] << ',' << format_g6(t.dt * static_cast<double>(k)) << ',' << format_g6(t.p[i][k].x()) << ','
        << format_g6(t.p[i][k].y()) << ',' << (beat ? 1 : 0) << '\n';
    }
  }
  return o.str();
}

/// Histogram of per-run collision percentages before and after filtering.
inline std::string collision_hist_csv(const std::vector<double>& before, const std::vector<double>& after,
                                      double bucket = 5.0) {
  if (before.size() != after.size()) fail(ErrorCode::InconsistentInputs, "before and after batches differ in size");
  if (!(bucket > 0.0 && bucket <= 100.0)) fail(ErrorCode::InvalidArgument, "bucket width must be in (0, 100]");
  std::ostringstream o;
  o << "bucket_lo,bucket_hi,count_before,count_after\n";
  if (before.empty()) return o.str();
  const auto buckets = static_cast<std::size_t>(std::ceil(100.0 / bucket - 1e-9));
  auto index = [&](double pct) {
    if (!(pct >= 0.0 && pct <= 100.0)) fail(ErrorCode::InconsistentInputs, "percentage outside [0, 100]");
    return std::min(buckets - 1, static_cast<std::size_t>(std::floor(pct / bucket)));
  };
  std::vector<int> cb(buckets, 0), ca(buckets, 0);
  for (double v : before) ++cb[index(v)];
  for (double v : after) ++ca[index(v)];
  for (std::size_t b = 0; b < buckets; ++b)
    o << format_g6(bucket * static_cast<double>(b)) << ',' << format_g6(std::min(100.0, bucket * static_cast<double>(b + 1)))
      << ',' << cb[b] << ',' << ca[b] << '\n';
  return o.str();
}

struct VelocityBar {
  std::string choreo;
  double before = 0.0, after = 0.0;
};

/// Speeds in m/s with three decimals (millimetre per second resolution).
inline std::string velocity_bars_csv(const std::vector<VelocityBar>& rows) {
  std::ostringstream o;
  o << "choreo,before,after\n";
  for (const auto& r : rows) o << r.choreo << ',' << format_fixed(r.before, 3) << ',' << format_fixed(r.after, 3) << '\n';
  return o.str();
}

struct RmseBar {
  std::string choreo;
  double rmse = 0.0, lo = 0.0, hi = 0.0;
};

inline std::string rmse_bars_csv(const std::vector<RmseBar>& rows) {
  std::ostringstream o;
  o << "choreo,rmse,lo,hi\n";
  for (const auto& r : rows) {
    if (!(r.lo <= r.rmse && r.rmse <= r.hi)) fail(ErrorCode::InconsistentInputs, "rmse outside its range");
    o << r.choreo << ',' << format_g6(r.rmse) << ',' << format_g6(r.lo) << ',' << format_g6(r.hi) << '\n';
  }
  return o.str();
}

/// Overall RMSE with the per-drone spread for one choreography.
inline RmseBar rmse_bar(const std::string& name, const SwarmTracks& a, const SwarmTracks& b) {
  RmseBar bar{name, trajectory_rmse(a, b).overall, std::numeric_limits<double>::infinity(), 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = trajectory_rmse(a[i], b[i]).overall;
    bar.lo = std::min(bar.lo, r);
    bar.hi = std::max(bar.hi, r);
  }
  if (a.empty()) bar.lo = 0.0;
  return bar;
}

}  // namespace swarmchor

#endif  // SWARMCHOR_ANALYTICS_HPP
