#ifndef SWARMCHOR_SAFETY_FILTER_HPP
#define SWARMCHOR_SAFETY_FILTER_HPP

#include "swarmchor/script.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

namespace swarmchor {

struct HorizonConfig {
  double dt = 0.1;
  /// Fraction of the window tail whose samples are pulled to the goal.
  double kappa_frac = 0.1;
  double w_goal = 10.0;
  double w_smooth = 1.0;
  /// Order of the finite difference penalized by the smoothness cost (1..3).
  int q_smooth = 2;
  /// Barrier parameter; 1 disables the rate condition beyond h >= 0.
  double gamma = 1.0;
  int max_sweeps = 200;
  double tol = 1e-4;
  double rho0 = 10.0;
  double rho_growth = 1.1;
  double rho_max = 1e4;

  // Projection targets sit this far inside the real limits.
  double box_margin = 1e-3;
  /// Relative margin on the speed and thrust limits.
  double kin_margin = 0.01;
  /// Extra clearance added to h on top of the inter-sample chord allowance.
  double clearance_margin = 0.02;

  int max_dilations = 2;
  double dilation_factor = 1.5;
  /// Quadratic solves per drone between multiplier updates.
  int inner_iterations = 2;

  void validate() const {
    if (!(dt > 0.0)) fail(ErrorCode::InvalidArgument, "dt must be positive");
    if (!(kappa_frac > 0.0 && kappa_frac <= 1.0)) fail(ErrorCode::InvalidArgument, "kappa_frac must be in (0, 1]");
    if (!(w_goal > 0.0 && w_smooth > 0.0)) fail(ErrorCode::InvalidArgument, "cost weights must be positive");
    if (q_smooth < 1 || q_smooth > 3) fail(ErrorCode::InvalidArgument, "q_smooth must be 1, 2 or 3");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorCode::InvalidArgument, "gamma must be in [0, 1]");
    if (!(tol > 0.0)) fail(ErrorCode::InvalidArgument, "tol must be positive");
    if (max_sweeps < 1) fail(ErrorCode::InvalidArgument, "max_sweeps must be positive");
    if (!(rho0 > 0.0 && rho_growth >= 1.0 && rho_max >= rho0))
      fail(ErrorCode::InvalidArgument, "penalty schedule must satisfy rho0 > 0, growth >= 1, rho_max >= rho0");
    if (!(box_margin >= 0.0 && kin_margin >= 0.0 && kin_margin < 0.5 && clearance_margin >= 0.0))
      fail(ErrorCode::InvalidArgument, "planning margins out of range");
    if (inner_iterations < 1) fail(ErrorCode::InvalidArgument, "inner_iterations must be positive");
    if (max_dilations < 0 || !(dilation_factor > 1.0))
      fail(ErrorCode::InvalidArgument, "dilation needs max_dilations >= 0 and factor > 1");
  }
};

struct Horizon {
  std::size_t K = 0;
  /// t_a + k dt for k = 0..K.
  std::vector<double> times;
};

inline std::size_t horizon_steps(double duration, double dt) {
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::max(0.0, std::round(duration / dt))));
}

inline Horizon build_horizon(double t_a, double t_b, double dt) {
  if (!(t_b > t_a)) fail(ErrorCode::InvalidArgument, "window end must follow its start");
  if (!(dt > 0.0)) fail(ErrorCode::InvalidArgument, "dt must be positive");
  Horizon h;
  h.K = horizon_steps(t_b - t_a, dt);
  for (std::size_t k = 0; k <= h.K; ++k) h.times.push_back(t_a + static_cast<double>(k) * dt);
  return h;
}

// ---------------------------------------------------------------------------
// Quadratic step

/// One weighted residual w * ||sum_k c_k X[k] + offset - target||^2 of the
/// quadratic step. The same coefficients apply to all three axes.
struct QuadraticRow {
  std::vector<std::pair<std::size_t, double>> terms;
  Vec3 offset = Vec3::Zero();
  Vec3 target = Vec3::Zero();
  double weight = 1.0;
};

/// Unconstrained quadratic in the K x 3 position block of one drone.
class QuadraticStep {
 public:
  explicit QuadraticStep(std::size_t K) : K_(K), H_(Eigen::MatrixXd::Zero(K, K)), B_(Eigen::MatrixX3d::Zero(K, 3)) {}

  std::size_t size() const { return K_; }

  void add(QuadraticRow row) {
    const Eigen::RowVector3d rhs = (row.target - row.offset).transpose();
    for (const auto& [a, ca] : row.terms) {
      for (const auto& [b, cb] : row.terms) H_(a, b) += row.weight * ca * cb;
      B_.row(a) += row.weight * ca * rhs;
    }
    rows_.push_back(std::move(row));
  }

  /// Objective evaluated residual by residual.
  double value(const Eigen::MatrixX3d& X) const {
    double v = 0.0;
    for (const auto& r : rows_) {
      Vec3 res = r.offset - r.target;
      for (const auto& [k, c] : r.terms) res += c * X.row(static_cast<Eigen::Index>(k)).transpose();
      v += r.weight * res.squaredNorm();
    }
    return v;
  }

  /// 2 (H X - B) from the assembled normal equations.
  Eigen::MatrixX3d gradient(const Eigen::MatrixX3d& X) const { return 2.0 * (H_ * X - B_); }

  Eigen::MatrixX3d solve() const {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H_);
    if (ldlt.info() != Eigen::Success) fail(ErrorCode::InfeasibleWindow, "quadratic step is singular");
    return ldlt.solve(B_);
  }

  const Eigen::MatrixXd& hessian() const { return H_; }
  std::size_t rows() const { return rows_.size(); }

 private:
  std::size_t K_;
  Eigen::MatrixXd H_;
  Eigen::MatrixX3d B_;
  std::vector<QuadraticRow> rows_;
};

// ---------------------------------------------------------------------------
// Window planning

/// Positions at and just before the window start: p[c], p[c-1], p[c-2].
struct WindowStart {
  std::array<Vec3, 3> history{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};

  static WindowStart at_rest(const Vec3& p) { return {{p, p, p}}; }

  /// Rebuilds the history from backward-difference velocity and acceleration.
  static WindowStart from_state(const Vec3& p, const Vec3& v, const Vec3& a, double dt) {
    const Vec3 p1 = p - v * dt;
    const Vec3 p2 = p1 - (v - a * dt) * dt;
    return {{p, p1, p2}};
  }

  const Vec3& position() const { return history[0]; }
  Vec3 velocity(double dt) const { return (history[0] - history[1]) / dt; }
  Vec3 acceleration(double dt) const { return (history[0] - 2.0 * history[1] + history[2]) / (dt * dt); }
};

namespace detail {

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Closest point to the origin on the segment a -> b, squared norm.
inline double segment_min_sq_norm(const Vec3& a, const Vec3& b) {
  const Vec3 d = b - a;
  const double dd = d.squaredNorm();
  double s = dd > 0.0 ? -a.dot(d) / dd : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return (a + s * d).squaredNorm();
}

inline Vec3 project_ball(const Vec3& y, double radius) {
  const double n = y.norm();
  return n <= radius ? y : Vec3(y * (radius / n));
}

inline Vec3 project_annulus(const Vec3& y, double lo, double hi) {
  const double n = y.norm();
  if (n >= lo && n <= hi) return y;
  const Vec3 dir = n > 0.0 ? Vec3(y / n) : Vec3::UnitZ();
  return dir * std::clamp(n, lo, hi);
}

}  // namespace detail

/// Normalized clearance h = ||Theta^{-1}(pi - pj)||^2 - 1 is kept at least this
/// large at every sample so that straight segments between samples stay clear.
inline double chord_clearance_allowance(const HorizonConfig& cfg, const DroneLimits& limits,
                                        const EllipsoidEnvelope& env) {
  const double half_chord = limits.max_speed * cfg.dt / env.semi_axes.minCoeff();
  return half_chord * half_chord;
}

/// Result of checking a window iterate against the real limits.
struct WindowCheck {
  bool ok = true;
  /// Largest violation of box, speed or thrust limits (0 when none).
  double max_bound_violation = 0.0;
  double min_h = std::numeric_limits<double>::infinity();
  double min_h_continuous = std::numeric_limits<double>::infinity();
  /// Largest violation of the barrier rate condition (0 when none).
  double max_bf_violation = 0.0;
};

/// Alternating-minimization solver for one window of the swarm. Each sweep
/// visits the drones in id order. For a drone it first projects the current
/// iterate (shifted by the scaled multipliers) onto the constraint sets: the
/// shrunk box, the speed ball, the thrust annulus and, for every neighbour at
/// its latest iterate, the polar form of the ellipsoid constraint
/// p_i - xi_j = Theta d omega with d >= r. It then solves the quadratic that
/// trades the choreography cost against the distance to those projections and
/// finally updates the multipliers.
class WindowSolver {
 public:
  WindowSolver(std::vector<WindowStart> starts, std::vector<Vec3> goals, std::size_t K, const HorizonConfig& cfg,
               const DroneLimits& limits, const EllipsoidEnvelope& env, const FlightVolume& vol)
      : starts_(std::move(starts)), goals_(std::move(goals)), K_(K), cfg_(cfg), limits_(limits), env_(env),
        vol_(vol) {
    if (starts_.size() != goals_.size()) fail(ErrorCode::LengthMismatch, "one goal per drone required");
    if (K_ < 2) fail(ErrorCode::InvalidArgument, "window needs at least two steps");
    const std::size_t n = starts_.size();
    X_.assign(n, Eigen::MatrixX3d::Zero(static_cast<Eigen::Index>(K_), 3));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K_; ++k) X_[i].row(static_cast<Eigen::Index>(k)) = starts_[i].position().transpose();
    duals_.assign(n, std::vector<Vec3>(K_ * slot_stride(), Vec3::Zero()));
    box_lo_ = vol_.lower.array() + cfg_.box_margin;
    box_hi_ = vol_.upper.array() - cfg_.box_margin;
    chord_ = chord_clearance_allowance(cfg_, limits_, env_);
    const double dt = cfg_.dt;
    v_cap_ = dt * limits_.max_speed * (1.0 - cfg_.kin_margin);
    f_lo_ = dt * dt * limits_.min_thrust * (1.0 + cfg_.kin_margin);
    f_hi_ = dt * dt * limits_.max_thrust * (1.0 - cfg_.kin_margin);
    g_term_ = -dt * dt * gravity_vector();
  }

  std::size_t drones() const { return starts_.size(); }
  std::size_t steps() const { return K_; }
  const std::vector<Eigen::MatrixX3d>& iterates() const { return X_; }
  void set_iterate(std::size_t i, const Eigen::MatrixX3d& X) { X_.at(i) = X; }

  /// Scaled multiplier of drone i (slot layout: per sample, box, speed,
  /// thrust, then one per neighbour).
  std::vector<Vec3>& duals(std::size_t i) { return duals_.at(i); }

  /// Position of drone i at window sample m (m <= 0 reads the history).
  Vec3 position(std::size_t i, long m) const {
    if (m >= 1) return X_[i].row(m - 1).transpose();
    return starts_[i].history[static_cast<std::size_t>(-m)];
  }

  /// Choreography cost only; every drone independently.
  void initialize() {
    for (std::size_t i = 0; i < drones(); ++i) X_[i] = cost_step(i).solve();
  }

  QuadraticStep cost_step(std::size_t i) const {
    QuadraticStep step(K_);
    const auto kappa = std::min<std::size_t>(
        K_, std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg_.kappa_frac * static_cast<double>(K_)))));
    for (std::size_t m = K_ - kappa + 1; m <= K_; ++m) {
      QuadraticRow r;
      r.terms = {{m - 1, 1.0}};
      r.target = goals_[i];
      r.weight = cfg_.w_goal;
      step.add(std::move(r));
    }
    const int q = cfg_.q_smooth;
    for (std::size_t m = 1; m <= K_; ++m) {
      std::vector<std::pair<long, double>> stencil;
      for (int r = 0; r <= q; ++r)
        stencil.emplace_back(static_cast<long>(m) - r, ((r % 2) ? -1.0 : 1.0) * detail::binomial(q, r));
      step.add(make_row(i, stencil, Vec3::Zero(), Vec3::Zero(), cfg_.w_smooth));
    }
    return step;
  }

  /// Cost plus one penalty row per constraint whose shifted value lies
  /// outside its set; `all_rows` adds every row regardless.
  QuadraticStep quadratic_step(std::size_t i, double rho, bool all_rows = false) const {
    QuadraticStep step = cost_step(i);
    const auto& u = duals_[i];
    for_each_constraint(i, [&](const Constraint& c) {
      if (c.kind == SetKind::rate) {
        const Vec3 sa = value(i, c) + u[c.slot], sb = value_b(i, c) + u[c.slot_b];
        const auto [za, zb] = project_rate(c, sa, sb);
        if (all_rows || za != sa || zb != sb) {
          step.add(make_row(i, c.stencil, c.offset, za - u[c.slot], rho));
          step.add(make_row(i, c.stencil_b, c.offset_b, zb - u[c.slot_b], rho));
        }
        return;
      }
      const Vec3 s = value(i, c) + u[c.slot];
      const Vec3 z = project(c, s);
      if (all_rows || z != s) step.add(make_row(i, c.stencil, c.offset, z - u[c.slot], rho));
    });
    return step;
  }

  /// Minimum h the planner aims for between drones i and j at sample m. At
  /// the first sample the rate condition is folded in, since the previous
  /// sample is fixed history; later samples handle it jointly.
  double required_clearance(std::size_t i, std::size_t j, std::size_t m) const {
    double h = chord_ + cfg_.clearance_margin;
    if (cfg_.gamma < 1.0 && m == 1) {
      const double h_prev = env_.clearance(position(i, 0), position(j, 0));
      h = std::max(h, (1.0 - cfg_.gamma) * h_prev + cfg_.clearance_margin);
    }
    return h;
  }

  void update_duals(std::size_t i) {
    auto& u = duals_[i];
    for_each_constraint(i, [&](const Constraint& c) {
      if (c.kind == SetKind::rate) {
        const Vec3 sa = value(i, c) + u[c.slot], sb = value_b(i, c) + u[c.slot_b];
        const auto [za, zb] = project_rate(c, sa, sb);
        u[c.slot] = sa - za;
        u[c.slot_b] = sb - zb;
        return;
      }
      const Vec3 s = value(i, c) + u[c.slot];
      u[c.slot] = s - project(c, s);
    });
  }

  /// Keeps the unscaled multipliers fixed when rho changes.
  void rescale_duals(double factor) {
    for (auto& u : duals_)
      for (auto& v : u) v *= factor;
  }

  void sweep(double rho) {
    for (std::size_t i = 0; i < drones(); ++i) {
      for (int it = 0; it < cfg_.inner_iterations; ++it) X_[i] = quadratic_step(i, rho).solve();
      update_duals(i);
    }
  }

  WindowCheck check() const {
    WindowCheck c;
    const double dt = cfg_.dt, tol = cfg_.tol;
    for (std::size_t i = 0; i < drones(); ++i) {
      for (std::size_t m = 1; m <= K_; ++m) {
        const long lm = static_cast<long>(m);
        const Vec3 p = position(i, lm);
        const Vec3 box_excess = (p - vol_.upper).cwiseMax(vol_.lower - p).cwiseMax(0.0);
        c.max_bound_violation = std::max(c.max_bound_violation, box_excess.maxCoeff());
        if (box_excess.maxCoeff() > 0.0) c.ok = false;
        const double speed = (p - position(i, lm - 1)).norm() / dt;
        const Vec3 acc = (p - 2.0 * position(i, lm - 1) + position(i, lm - 2)) / (dt * dt);
        const double thrust = DroneLimits::thrust(acc);
        const double excess = std::max({speed - limits_.max_speed, thrust - limits_.max_thrust,
                                        limits_.min_thrust - thrust, 0.0});
        c.max_bound_violation = std::max(c.max_bound_violation, excess);
        if (excess > tol) c.ok = false;
        for (std::size_t j = i + 1; j < drones(); ++j) {
          const Vec3 r1 = env_.normalize(p - position(j, lm));
          const Vec3 r0 = env_.normalize(position(i, lm - 1) - position(j, lm - 1));
          const double h1 = r1.squaredNorm() - 1.0, h0 = r0.squaredNorm() - 1.0;
          const double hc = detail::segment_min_sq_norm(r0, r1) - 1.0;
          c.min_h = std::min(c.min_h, h1);
          c.min_h_continuous = std::min(c.min_h_continuous, hc);
          if (h1 < -tol || hc < -tol) c.ok = false;
          if (cfg_.gamma < 1.0) {
            const double bf = -(h1 - h0 + cfg_.gamma * h0);
            c.max_bf_violation = std::max(c.max_bf_violation, bf);
            if (bf > tol) c.ok = false;
          }
        }
      }
    }
    return c;
  }

 private:
  enum class SetKind { box, ball, annulus, ellipsoid, rate };

  /// Linear image stencil . p + offset constrained to a set.
  struct Constraint {
    SetKind kind;
    std::size_t slot;
    std::vector<std::pair<long, double>> stencil;
    Vec3 offset = Vec3::Zero();
    double radius = 0.0;
    /// Ellipsoid constraints: +1 when drone i has the lower id.
    double side = 1.0;
    /// Rate constraints: the pair offset one sample earlier.
    std::size_t slot_b = 0;
    std::vector<std::pair<long, double>> stencil_b;
    Vec3 offset_b = Vec3::Zero();
  };

  /// Per sample: box, speed, thrust, one clearance slot per neighbour and,
  /// when gamma < 1, two rate slots per neighbour.
  std::size_t slot_stride() const { return 3 + (cfg_.gamma < 1.0 ? 3 : 1) * drones(); }

  template <class F>
  void for_each_constraint(std::size_t i, F&& f) const {
    const std::size_t stride = slot_stride();
    for (std::size_t m = 1; m <= K_; ++m) {
      const long lm = static_cast<long>(m);
      const std::size_t base = (m - 1) * stride;
      f(Constraint{SetKind::box, base, {{lm, 1.0}}});
      f(Constraint{SetKind::ball, base + 1, {{lm, 1.0}, {lm - 1, -1.0}}});
      f(Constraint{SetKind::annulus, base + 2, {{lm, 1.0}, {lm - 1, -2.0}, {lm - 2, 1.0}}, g_term_});
      for (std::size_t j = 0; j < drones(); ++j) {
        if (j == i) continue;
        f(Constraint{SetKind::ellipsoid, base + 3 + j, {{lm, 1.0}}, -position(j, lm),
                     std::sqrt(1.0 + required_clearance(i, j, m)), i < j ? 1.0 : -1.0});
        if (cfg_.gamma < 1.0 && m >= 2) {
          Constraint c{SetKind::rate, base + 3 + drones() + j, {{lm, 1.0}}, -position(j, lm), 0.0, i < j ? 1.0 : -1.0};
          c.slot_b = base + 3 + 2 * drones() + j;
          c.stencil_b = {{lm - 1, 1.0}};
          c.offset_b = -position(j, lm - 1);
          f(c);
        }
      }
    }
  }

  Vec3 value(std::size_t i, const Constraint& c) const {
    Vec3 y = c.offset;
    for (const auto& [m, coef] : c.stencil) y += coef * position(i, m);
    return y;
  }

  Vec3 value_b(std::size_t i, const Constraint& c) const {
    Vec3 y = c.offset_b;
    for (const auto& [m, coef] : c.stencil_b) y += coef * position(i, m);
    return y;
  }

  /// Joint projection of the offsets a (sample m) and b (sample m - 1) onto
  /// ||a||^2 - (1 - gamma) ||b||^2 >= gamma + margin in normalized
  /// coordinates, i.e. h[m] >= (1 - gamma) h[m-1] + margin.
  std::pair<Vec3, Vec3> project_rate(const Constraint& c, const Vec3& sa, const Vec3& sb) const {
    const double shrink = 1.0 - cfg_.gamma;
    const double beta = cfg_.gamma + cfg_.clearance_margin;
    const Vec3 a0 = env_.normalize(sa), b0 = env_.normalize(sb);
    if (a0.squaredNorm() - shrink * b0.squaredNorm() >= beta) return {sa, sb};
    Vec3 a, b;
    if (a0.squaredNorm() == 0.0) {
      b = b0 / (1.0 + shrink);
      a = -c.side * Vec3::UnitY() * std::sqrt(beta + shrink * b.squaredNorm());
    } else {
      // Stationarity gives a = a0 / (1 - l), b = b0 / (1 + shrink l), l in [0, 1).
      auto excess = [&](double l) {
        return a0.squaredNorm() / ((1.0 - l) * (1.0 - l)) - shrink * b0.squaredNorm() / ((1.0 + shrink * l) * (1.0 + shrink * l)) - beta;
      };
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) < 0.0 ? lo : hi) = mid;
      }
      a = a0 / (1.0 - hi);
      b = b0 / (1.0 + shrink * hi);
    }
    return {env_.semi_axes.cwiseProduct(a), env_.semi_axes.cwiseProduct(b)};
  }

  Vec3 project(const Constraint& c, const Vec3& s) const {
    switch (c.kind) {
      case SetKind::box: return s.array().max(box_lo_).min(box_hi_).matrix();
      case SetKind::ball: return detail::project_ball(s, v_cap_);
      case SetKind::annulus: return detail::project_annulus(s, f_lo_, f_hi_);
      case SetKind::ellipsoid: {
        const Vec3 n = env_.normalize(s);
        const double norm = n.norm();
        if (norm >= c.radius) return s;
        // Coincident drones split along y, lower id towards -y.
        const Vec3 omega = norm > 0.0 ? Vec3(n / norm) : Vec3(-c.side * Vec3::UnitY());
        return env_.semi_axes.cwiseProduct(omega * c.radius);
      }
      case SetKind::rate: return s;
    }
    return s;
  }

  QuadraticRow make_row(std::size_t i, const std::vector<std::pair<long, double>>& stencil, const Vec3& offset,
                        const Vec3& target, double weight) const {
    QuadraticRow r;
    r.offset = offset;
    r.target = target;
    r.weight = weight;
    for (const auto& [m, c] : stencil) {
      if (m >= 1) r.terms.emplace_back(static_cast<std::size_t>(m - 1), c);
      else r.offset += c * starts_[i].history[static_cast<std::size_t>(-m)];
    }
    return r;
  }

  std::vector<WindowStart> starts_;
  std::vector<Vec3> goals_;
  std::size_t K_;
  HorizonConfig cfg_;
  DroneLimits limits_;
  EllipsoidEnvelope env_;
  FlightVolume vol_;
  std::vector<Eigen::MatrixX3d> X_;
  std::vector<std::vector<Vec3>> duals_;
  Eigen::Array3d box_lo_, box_hi_;
  double chord_ = 0.0, v_cap_ = 0.0, f_lo_ = 0.0, f_hi_ = 0.0;
  Vec3 g_term_ = Vec3::Zero();
};

struct WindowPlan {
  /// K x 3 positions per drone for samples 1..K of the window.
  std::vector<Eigen::MatrixX3d> positions;
  int sweeps = 0;
  WindowCheck check;
};

/// Plans one window. Throws InfeasibleWindow when the sweeps run out with a
/// limit still violated beyond tolerance.
inline WindowPlan plan_window(const std::vector<WindowStart>& starts, const std::vector<Vec3>& goals, std::size_t K,
                              const HorizonConfig& cfg, const DroneLimits& limits, const EllipsoidEnvelope& env,
                              const FlightVolume& vol) {
  WindowSolver solver(starts, goals, K, cfg, limits, env, vol);
  solver.initialize();
  WindowPlan plan;
  plan.check = solver.check();
  double rho = cfg.rho0;
  while (!plan.check.ok && plan.sweeps < cfg.max_sweeps) {
    solver.sweep(rho);
    ++plan.sweeps;
    plan.check = solver.check();
    const double next = std::min(cfg.rho_max, rho * cfg.rho_growth);
    solver.rescale_duals(rho / next);
    rho = next;
  }
  if (!plan.check.ok) {
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "window of %zu steps infeasible after %d sweeps (bound violation %.3g, min h %.3g, bf %.3g)", K,
                  plan.sweeps, plan.check.max_bound_violation, std::min(plan.check.min_h, plan.check.min_h_continuous),
                  plan.check.max_bf_violation);
    fail(ErrorCode::InfeasibleWindow, buf);
  }
  plan.positions = solver.iterates();
  return plan;
}

// ---------------------------------------------------------------------------
// Whole-song filtering

struct FilterCertificate {
  double max_bound_violation = 0.0;
  double min_clearance = std::numeric_limits<double>::infinity();
  double min_clearance_continuous = std::numeric_limits<double>::infinity();
  double max_bf_violation = 0.0;
  std::vector<int> sweeps_per_window;
  std::vector<int> dilations_per_window;
};

struct FilteredTrajectory {
  double dt = 0.1;
  double gamma = 1.0;
  std::vector<int> ids;
  SwarmTracks p, v, a;
  /// Sample index at which each window ends (one per beat).
  std::vector<std::size_t> beat_indices;
  FilterCertificate certificate;

  std::size_t drones() const { return p.size(); }
  std::size_t samples() const { return p.empty() ? 0 : p.front().size(); }
  double duration() const { return samples() ? dt * static_cast<double>(samples() - 1) : 0.0; }
};

/// Backward differences of a position track (zero before the first sample).
inline void derive_kinematics(const Track& p, double dt, Track& v, Track& a) {
  v.assign(p.size(), Vec3::Zero());
  a.assign(p.size(), Vec3::Zero());
  for (std::size_t k = 1; k < p.size(); ++k) {
    v[k] = (p[k] - p[k - 1]) / dt;
    a[k] = (v[k] - v[k - 1]) / dt;
  }
}

/// Full-trajectory scan of limits and clearance.
inline FilterCertificate certify(const FilteredTrajectory& traj, const DroneLimits& limits,
                                 const EllipsoidEnvelope& env, const FlightVolume& vol) {
  FilterCertificate c;
  for (std::size_t i = 0; i < traj.drones(); ++i)
    for (std::size_t k = 0; k < traj.samples(); ++k) {
      const Vec3& p = traj.p[i][k];
      c.max_bound_violation = std::max(c.max_bound_violation, (p - vol.upper).cwiseMax(vol.lower - p).maxCoeff());
      const double thrust = DroneLimits::thrust(traj.a[i][k]);
      c.max_bound_violation = std::max({c.max_bound_violation, traj.v[i][k].norm() - limits.max_speed,
                                        thrust - limits.max_thrust, limits.min_thrust - thrust});
    }
  c.max_bound_violation = std::max(c.max_bound_violation, 0.0);
  for (std::size_t i = 0; i < traj.drones(); ++i)
    for (std::size_t j = i + 1; j < traj.drones(); ++j)
      for (std::size_t k = 0; k < traj.samples(); ++k) {
        const Vec3 r1 = env.normalize(traj.p[i][k] - traj.p[j][k]);
        c.min_clearance = std::min(c.min_clearance, r1.squaredNorm() - 1.0);
        if (k == 0) continue;
        const Vec3 r0 = env.normalize(traj.p[i][k - 1] - traj.p[j][k - 1]);
        c.min_clearance_continuous = std::min(c.min_clearance_continuous, detail::segment_min_sq_norm(r0, r1) - 1.0);
        const double h0 = r0.squaredNorm() - 1.0, h1 = r1.squaredNorm() - 1.0;
        if (traj.gamma < 1.0) c.max_bf_violation = std::max(c.max_bf_violation, -(h1 - h0 + traj.gamma * h0));
      }
  c.min_clearance_continuous = std::min(c.min_clearance_continuous, c.min_clearance);
  return c;
}

/// Chains plan_window over the beat windows of a preprocessed script. A window
/// that cannot be made feasible is stretched (time dilation) and the rest of
/// the song shifted; after max_dilations stretches the run fails with the
/// window index.
inline FilteredTrajectory filter_swarm(const WaypointScript& script, const HorizonConfig& cfg,
                                       const DroneLimits& limits, const EllipsoidEnvelope& env,
                                       const FlightVolume& vol) {
  cfg.validate();
  limits.validate();
  env.validate();
  vol.validate();
  const std::size_t n = script.size();
  if (n == 0) fail(ErrorCode::InvalidArgument, "script has no drones");
  if (script.initial_positions.size() != n) fail(ErrorCode::LengthMismatch, "one initial position per drone required");
  for (const auto& d : script.drones)
    if (d.waypoints.size() != script.beats()) fail(ErrorCode::MissingBeats, "drone waypoints do not match the beats");

  FilteredTrajectory out;
  out.dt = cfg.dt;
  out.gamma = cfg.gamma;
  out.p.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    out.ids.push_back(script.drones[i].id);
    if (!vol.contains(script.initial_positions[i]))
      throw FilteringError(0, "initial position of drone " + std::to_string(script.drones[i].id) + " outside volume");
    out.p[i].push_back(script.initial_positions[i]);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (env.clearance(script.initial_positions[i], script.initial_positions[j]) < 0.0)
        throw FilteringError(0, "initial positions of drones " + std::to_string(i) + " and " + std::to_string(j) +
                                    " overlap");

  auto history = [&](std::size_t i) {
    const auto& tr = out.p[i];
    const std::size_t c = tr.size() - 1;
    return WindowStart{{tr[c], tr[c >= 1 ? c - 1 : 0], tr[c >= 2 ? c - 2 : 0]}};
  };

  double shift = 0.0;
  for (std::size_t b = 0; b < script.beats(); ++b) {
    const std::size_t cursor = out.p.front().size() - 1;
    const double t_a = static_cast<double>(cursor) * cfg.dt;
    std::size_t K = horizon_steps(script.beat_times[b] + shift - t_a, cfg.dt);

    std::vector<WindowStart> starts;
    std::vector<Vec3> goals;
    for (std::size_t i = 0; i < n; ++i) {
      starts.push_back(history(i));
      goals.push_back(script.drones[i].waypoints[b].position);
    }

    std::optional<WindowPlan> plan;
    int dilations = 0;
    for (;;) {
      try {
        plan = plan_window(starts, goals, K, cfg, limits, env, vol);
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InfeasibleWindow) throw;
        if (dilations >= cfg.max_dilations)
          throw FilteringError(b, "window " + std::to_string(b) + " infeasible after " + std::to_string(dilations) +
                                      " time dilations: " + e.what());
        const auto stretched = std::max<std::size_t>(
            K + 1, static_cast<std::size_t>(std::lround(cfg.dilation_factor * static_cast<double>(K))));
        shift += static_cast<double>(stretched - K) * cfg.dt;
        K = stretched;
        ++dilations;
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k)
        out.p[i].push_back(plan->positions[i].row(static_cast<Eigen::Index>(k)).transpose());
    out.beat_indices.push_back(out.p.front().size() - 1);
    out.certificate.sweeps_per_window.push_back(plan->sweeps);
    out.certificate.dilations_per_window.push_back(dilations);
  }

  out.v.resize(n);
  out.a.resize(n);
  for (std::size_t i = 0; i < n; ++i) derive_kinematics(out.p[i], cfg.dt, out.v[i], out.a[i]);
  const auto sweeps = out.certificate.sweeps_per_window;
  const auto dil = out.certificate.dilations_per_window;
  out.certificate = certify(out, limits, env, vol);
  out.certificate.sweeps_per_window = sweeps;
  out.certificate.dilations_per_window = dil;
  return out;
}

// ---------------------------------------------------------------------------
// Barrier condition

struct BfCheck {
  bool pass = true;
  std::optional<std::size_t> first_violation;
};

/// h[k] - h[k-1] >= -gamma h[k-1] - tol for every k >= 1.
inline BfCheck check_bf_condition(const std::vector<double>& h, double gamma, double tol = 1e-4) {
  if (h.empty()) fail(ErrorCode::InvalidArgument, "empty clearance series");
  for (std::size_t k = 1; k < h.size(); ++k)
    if (h[k] - h[k - 1] < -gamma * h[k - 1] - tol) return {false, k};
  return {};
}

/// h_ij over all samples of the trajectory.
inline std::vector<double> pair_clearance_series(const FilteredTrajectory& traj, std::size_t i, std::size_t j,
                                                 const EllipsoidEnvelope& env) {
  std::vector<double> h;
  h.reserve(traj.samples());
  for (std::size_t k = 0; k < traj.samples(); ++k) h.push_back(env.clearance(traj.p[i][k], traj.p[j][k]));
  return h;
}

// ---------------------------------------------------------------------------
// Command resampling

struct CommandTrack {
  double hz = 0.0;
  SwarmTracks positions;

  std::size_t samples() const { return positions.empty() ? 0 : positions.front().size(); }
};

struct Commands {
  CommandTrack sim, ctrl;
};

/// Linear interpolation of a uniformly sampled track onto a rate hz; the
/// output has floor(duration * hz) + 1 samples.
inline Track resample_track(const Track& p, double dt, double hz) {
  if (!(hz > 0.0)) fail(ErrorCode::InvalidArgument, "resampling rate must be positive");
  if (p.empty()) return {};
  const double duration = dt * static_cast<double>(p.size() - 1);
  const auto count = static_cast<std::size_t>(std::floor(duration * hz + 1e-9)) + 1;
  Track out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    double u = static_cast<double>(n) / hz / dt;
    if (std::abs(u - std::round(u)) < 1e-9) u = std::round(u);
    const auto k = static_cast<std::size_t>(std::floor(u));
    if (k + 1 >= p.size()) {
      out.push_back(p.back());
      continue;
    }
    const double f = u - static_cast<double>(k);
    out.push_back(f == 0.0 ? p[k] : Vec3((1.0 - f) * p[k] + f * p[k + 1]));
  }
  return out;
}

inline Commands resample_commands(const FilteredTrajectory& traj, double sim_hz, double ctrl_hz) {
  Commands c;
  c.sim.hz = sim_hz;
  c.ctrl.hz = ctrl_hz;
  for (const auto& tr : traj.p) {
    c.sim.positions.push_back(resample_track(tr, traj.dt, sim_hz));
    c.ctrl.positions.push_back(resample_track(tr, traj.dt, ctrl_hz));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Export

inline std::string format_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline nlohmann::json certificate_to_json(const FilterCertificate& c) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"max_bound_violation", c.max_bound_violation},
          {"min_h", finite_or_null(c.min_clearance)},
          {"min_h_continuous", finite_or_null(c.min_clearance_continuous)},
          {"max_bf_violation", c.max_bf_violation},
          {"sweeps_per_window", c.sweeps_per_window},
          {"dilations_per_window", c.dilations_per_window}};
}

inline nlohmann::json filtered_to_json(const FilteredTrajectory& t) {
  auto rows = [](const Track& tr) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : tr) a.push_back({p.x(), p.y(), p.z()});
    return a;
  };
  nlohmann::json drones = nlohmann::json::array();
  for (std::size_t i = 0; i < t.drones(); ++i)
    drones.push_back({{"id", t.ids[i]}, {"p", rows(t.p[i])}, {"v", rows(t.v[i])}, {"a", rows(t.a[i])}});
  return {{"dt", t.dt},
          {"gamma", t.gamma},
          {"beat_indices", t.beat_indices},
          {"drones", std::move(drones)},
          {"certificate", certificate_to_json(t.certificate)}};
}

inline FilteredTrajectory filtered_from_json(const nlohmann::json& j) {
  try {
    FilteredTrajectory t;
    t.dt = j.at("dt").get<double>();
    if (!(t.dt > 0.0)) fail(ErrorCode::ParseError, "filtered trajectory dt must be positive");
    t.gamma = j.value("gamma", 1.0);
    t.beat_indices = j.value("beat_indices", std::vector<std::size_t>{});
    auto track = [](const nlohmann::json& a) {
      Track tr;
      for (const auto& r : a) tr.emplace_back(r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>());
      return tr;
    };
    for (const auto& d : j.at("drones")) {
      t.ids.push_back(d.at("id").get<int>());
      t.p.push_back(track(d.at("p")));
      if (d.contains("v") && d.contains("a")) {
        t.v.push_back(track(d["v"]));
        t.a.push_back(track(d["a"]));
      } else {
        Track v, a;
        derive_kinematics(t.p.back(), t.dt, v, a);
        t.v.push_back(v);
        t.a.push_back(a);
      }
      if (t.p.back().size() != t.p.front().size())
        fail(ErrorCode::LengthMismatch, "filtered tracks differ in length");
    }
    if (j.contains("certificate")) {
      const auto& c = j["certificate"];
      t.certificate.max_bound_violation = c.value("max_bound_violation", 0.0);
      if (c.contains("min_h") && c["min_h"].is_number()) t.certificate.min_clearance = c["min_h"].get<double>();
      if (c.contains("min_h_continuous") && c["min_h_continuous"].is_number())
        t.certificate.min_clearance_continuous = c["min_h_continuous"].get<double>();
      t.certificate.max_bf_violation = c.value("max_bf_violation", 0.0);
      t.certificate.sweeps_per_window = c.value("sweeps_per_window", std::vector<int>{});
      t.certificate.dilations_per_window = c.value("dilations_per_window", std::vector<int>{});
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("bad filtered trajectory: ") + e.what());
  }
}

/// One row per (drone, sample).
inline std::string filtered_to_csv(const FilteredTrajectory& t) {
  std::ostringstream o;
  o << "drone_id,k,t,x,y,z,vx,vy,vz,ax,ay,az\n";
  for (std::size_t i = 0; i < t.drones(); ++i)
    for (std::size_t k = 0; k < t.samples(); ++k) {
      o << t.ids[i] << ',' << k << ',' << format_g6(t.dt * static_cast<double>(k));
      for (const Vec3* v : {&t.p[i][k], &t.v[i][k], &t.a[i][k]})
        for (int ax = 0; ax < 3; ++ax) o << ',' << format_g6((*v)[ax]);
      o << '\n';
    }
  return o.str();
}

/// Human-readable certificate summary printed by the CLI.
inline std::string certificate_summary(const FilterCertificate& c) {
  std::ostringstream o;
  o << "min h (samples): " << format_g6(c.min_clearance) << "\n"
    << "min h (continuous): " << format_g6(c.min_clearance_continuous) << "\n"
    << "max bound violation: " << format_g6(c.max_bound_violation) << "\n"
    << "sweeps per window:";
  for (int s : c.sweeps_per_window) o << ' ' << s;
  o << "\ndilations:";
  for (int d : c.dilations_per_window) o << ' ' << d;
  o << '\n';
  return o.str();
}

}  // namespace swarmchor

#endif  // SWARMCHOR_SAFETY_FILTER_HPP
