#ifndef SWARMCHOR_TESTS_ORACLE_HPP
#define SWARMCHOR_TESTS_ORACLE_HPP

// Brute-force checks written without the library's helpers: plain loops over
// samples and pairs, differences taken here rather than read from the
// trajectory.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

using P = Eigen::Vector3d;
using Tracks = std::vector<std::vector<P>>;

struct Limits {
  double v_max = 1.0, f_min = 4.9, f_max = 14.7;
  P lo{-1.5, -1.5, 0.3}, hi{1.5, 1.5, 2.0};
  P semi{0.25, 0.25, 0.6};
};

struct Report {
  long box = 0, speed = 0, thrust = 0, clearance = 0;
  double min_h = std::numeric_limits<double>::infinity();
  long total() const { return box + speed + thrust + clearance; }
};

inline double h_of(const P& a, const P& b, const P& semi) {
  double s = 0.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double r = (a[ax] - b[ax]) / semi[ax];
    s += r * r;
  }
  return s - 1.0;
}

/// Box exact; speed and thrust from backward differences with slack tol;
/// pairwise h >= -h_tol at every sample.
inline Report scan(const Tracks& p, double dt, const Limits& lim, double tol = 1e-4, double h_tol = 1e-4) {
  Report r;
  for (const auto& tr : p)
    for (std::size_t k = 0; k < tr.size(); ++k) {
      for (int ax = 0; ax < 3; ++ax)
        if (tr[k][ax] < lim.lo[ax] || tr[k][ax] > lim.hi[ax]) {
          ++r.box;
          break;
        }
      if (k >= 1) {
        const P v = (tr[k] - tr[k - 1]) / dt;
        if (v.norm() > lim.v_max + tol) ++r.speed;
      }
      if (k >= 2) {
        const P a = (tr[k] - 2.0 * tr[k - 1] + tr[k - 2]) / (dt * dt);
        const double f = std::sqrt(a.x() * a.x() + a.y() * a.y() + (a.z() + 9.81) * (a.z() + 9.81));
        if (f > lim.f_max + tol || f < lim.f_min - tol) ++r.thrust;
      }
    }
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      for (std::size_t k = 0; k < p[i].size(); ++k) {
        const double h = h_of(p[i][k], p[j][k], lim.semi);
        r.min_h = std::min(r.min_h, h);
        if (h < -h_tol) ++r.clearance;
      }
  return r;
}

/// Linear interpolation of dt-sampled tracks at rate hz.
inline Tracks upsample(const Tracks& p, double dt, double hz) {
  Tracks out;
  for (const auto& tr : p) {
    std::vector<P> o;
    if (tr.size() < 2) {
      out.push_back(tr);
      continue;
    }
    const double dur = dt * static_cast<double>(tr.size() - 1);
    for (long n = 0; static_cast<double>(n) / hz <= dur + 1e-9; ++n) {
      const double u = std::min(static_cast<double>(n) / hz / dt, static_cast<double>(tr.size() - 1));
      const auto k = std::min(static_cast<std::size_t>(u), tr.size() - 2);
      const double f = u - static_cast<double>(k);
      o.push_back((1.0 - f) * tr[k] + f * tr[k + 1]);
    }
    out.push_back(o);
  }
  return out;
}

/// Percentage of samples at which any pair has h < threshold.
inline double percent_colliding(const Tracks& p, const P& semi, double threshold = 0.0) {
  if (p.empty() || p.front().empty()) return 0.0;
  long bad = 0;
  const std::size_t n = p.front().size();
  for (std::size_t k = 0; k < n; ++k) {
    bool hit = false;
    for (std::size_t i = 0; i < p.size() && !hit; ++i)
      for (std::size_t j = i + 1; j < p.size() && !hit; ++j) hit = h_of(p[i][k], p[j][k], semi) < threshold;
    bad += hit;
  }
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

}  // namespace oracle

#endif  // SWARMCHOR_TESTS_ORACLE_HPP
