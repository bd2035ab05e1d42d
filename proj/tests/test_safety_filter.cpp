#include "swarmchor/choreography.hpp"
#include "swarmchor/preprocessing.hpp"
#include "swarmchor/safety_filter.hpp"
#include "support/oracle.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace swarmchor;

namespace {

oracle::Tracks tracks_of(const FilteredTrajectory& t) { return {t.p.begin(), t.p.end()}; }

WaypointScript single_drone(const Vec3& start, const std::vector<std::pair<double, Vec3>>& goals) {
  WaypointScript s;
  s.initial_positions = {start};
  DroneWaypoints d;
  for (const auto& [t, p] : goals) {
    s.beat_times.push_back(t);
    d.waypoints.push_back({t, p});
  }
  s.drones = {d};
  return s;
}

WaypointScript adversarial_script(std::uint64_t seed, std::size_t n, std::size_t beats) {
  std::vector<double> t;
  for (std::size_t b = 1; b <= beats; ++b) t.push_back(0.5 * static_cast<double>(b));
  ProceduralOptions opt;
  opt.style = ProceduralStyle::adversarial;
  return preprocess(procedural_generate(t, n, seed, opt), opt.volume, {});
}

}  // namespace

TEST(Horizon, Examples) {
  EXPECT_EQ(build_horizon(0.0, 1.0, 0.1).K, 10u);
  EXPECT_EQ(build_horizon(0.0, 0.05, 0.1).K, 2u);
  EXPECT_EQ(build_horizon(9.58, 11.24, 0.1).K, 17u);
  const auto h = build_horizon(0.0, 1.0, 0.1);
  ASSERT_EQ(h.times.size(), 11u);
  EXPECT_DOUBLE_EQ(h.times.front(), 0.0);
  EXPECT_NEAR(h.times.back(), 1.0, 1e-12);
  EXPECT_THROW(build_horizon(1.0, 1.0, 0.1), Error);
}

TEST(PlanWindow, SingleDroneReachesGoal) {
  const HorizonConfig cfg;
  const auto plan = plan_window({WindowStart::at_rest(Vec3(0, 0, 1))}, {Vec3(1, 0, 1)}, 20, cfg, {}, {}, {});
  const Eigen::MatrixX3d& X = plan.positions[0];
  EXPECT_LE((X.row(19).transpose() - Vec3(1, 0, 1)).norm(), 0.05);
  oracle::Tracks tr(1);
  tr[0] = {Vec3(0, 0, 1), Vec3(0, 0, 1), Vec3(0, 0, 1)};
  for (Eigen::Index k = 0; k < X.rows(); ++k) tr[0].push_back(X.row(k).transpose());
  EXPECT_EQ(oracle::scan(tr, cfg.dt, {}).total(), 0);
}

TEST(PlanWindow, StartEqualsGoalStaysPut) {
  const Vec3 p(0.3, -0.2, 1.2);
  const auto plan = plan_window({WindowStart::at_rest(p)}, {p}, 10, {}, {}, {}, {});
  for (Eigen::Index k = 0; k < 10; ++k) EXPECT_LT((plan.positions[0].row(k).transpose() - p).norm(), 1e-3);
}

TEST(PlanWindow, HeadOnSwapDodges) {
  const Vec3 a(-0.8, 0, 1.2), b(0.8, 0, 1.2);
  const HorizonConfig cfg;
  const auto plan = plan_window({WindowStart::at_rest(a), WindowStart::at_rest(b)}, {b, a}, 30, cfg, {}, {}, {});
  oracle::Tracks tr(2);
  tr[0] = {a, a, a};
  tr[1] = {b, b, b};
  for (Eigen::Index k = 0; k < 30; ++k)
    for (std::size_t i = 0; i < 2; ++i) tr[i].push_back(plan.positions[i].row(k).transpose());
  const auto r = oracle::scan(tr, cfg.dt, {});
  EXPECT_EQ(r.total(), 0) << "min h " << r.min_h;
  EXPECT_GE(r.min_h, -1e-4);
  // They must actually have passed each other.
  EXPECT_GT(tr[0].back().x(), 0.0);
  EXPECT_LT(tr[1].back().x(), 0.0);
}

TEST(PlanWindow, SmoothnessWeightTradesGoalError) {
  // Unconstrained cost only: lighter smoothing lands closer to the goal.
  double prev = std::numeric_limits<double>::infinity();
  for (double ws : {1.0, 0.1, 0.01}) {
    HorizonConfig cfg;
    cfg.w_smooth = ws;
    WindowSolver s({WindowStart::at_rest(Vec3(0, 0, 1))}, {Vec3(1, 0.5, 1.5)}, 10, cfg, {}, {}, {});
    s.initialize();
    const double err = (s.position(0, 10) - Vec3(1, 0.5, 1.5)).norm();
    EXPECT_LT(err, prev) << ws;
    prev = err;
  }
}

TEST(PlanWindow, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<WindowStart> starts;
    std::vector<Vec3> goals;
    for (int i = 0; i < 2; ++i) {
      starts.push_back(WindowStart::from_state(Vec3(u(rng), u(rng), 1.0 + 0.5 * u(rng)),
                                               0.5 * Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)), 0.1));
      goals.push_back(Vec3(u(rng), u(rng), 1.0 + 0.5 * u(rng)));
    }
    HorizonConfig cfg;
    cfg.gamma = trial % 2 ? 0.5 : 1.0;
    WindowSolver s(starts, goals, 8, cfg, {}, {}, {});
    for (std::size_t i = 0; i < 2; ++i) {
      Eigen::MatrixX3d X(8, 3);
      for (Eigen::Index k = 0; k < 8; ++k) X.row(k) = Eigen::RowVector3d(u(rng), u(rng), 1.0 + 0.5 * u(rng));
      s.set_iterate(i, X);
      for (auto& d : s.duals(i)) d = 0.05 * Vec3(u(rng), u(rng), u(rng));
    }
    const auto step = s.quadratic_step(0, 37.0, true);
    Eigen::MatrixX3d X(8, 3);
    for (Eigen::Index k = 0; k < 8; ++k) X.row(k) = Eigen::RowVector3d(u(rng), u(rng), u(rng));
    const Eigen::MatrixX3d g = step.gradient(X);
    Eigen::MatrixX3d fd(8, 3);
    const double eps = 1e-5;
    for (Eigen::Index k = 0; k < 8; ++k)
      for (Eigen::Index ax = 0; ax < 3; ++ax) {
        Eigen::MatrixX3d Xp = X, Xm = X;
        Xp(k, ax) += eps;
        Xm(k, ax) -= eps;
        fd(k, ax) = (step.value(Xp) - step.value(Xm)) / (2.0 * eps);
      }
    EXPECT_LE((g - fd).norm() / std::max(1.0, g.norm()), 1e-5) << "trial " << trial;
  }
}

TEST(FilterSwarm, SingleDroneVisitsWaypoints) {
  const auto s = single_drone(Vec3(0, 0, 1), {{2.0, Vec3(1, 0, 1)}, {4.0, Vec3(1, 1, 1.5)}, {5.5, Vec3(0.2, 0.8, 1.2)}});
  const auto t = filter_swarm(s, {}, {}, {}, {});
  ASSERT_EQ(t.beat_indices.size(), 3u);
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_NEAR(static_cast<double>(t.beat_indices[b]) * t.dt, s.beat_times[b], 1e-9);
    EXPECT_LE((t.p[0][t.beat_indices[b]] - s.drones[0].waypoints[b].position).norm(), 0.05) << b;
  }
  EXPECT_EQ(oracle::scan(tracks_of(t), t.dt, {}).total(), 0);
}

TEST(FilterSwarm, CircleScriptCertified) {
  ProceduralOptions opt;
  opt.only = Formation::circle;
  std::vector<double> beats;
  for (int b = 1; b <= 10; ++b) beats.push_back(0.5 * b);
  const auto s = preprocess(procedural_generate(beats, 6, 5, opt), opt.volume, {});
  const auto t = filter_swarm(s, {}, {}, {}, {});
  const auto r = oracle::scan(tracks_of(t), t.dt, {});
  EXPECT_EQ(r.total(), 0) << "min h " << r.min_h;
  EXPECT_GE(t.certificate.min_clearance, -1e-4);
  EXPECT_LE(t.certificate.max_bound_violation, 1e-4);
}

TEST(FilterSwarm, AdversarialScriptsCollisionFreeAtControlRate) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = filter_swarm(adversarial_script(seed, 9, 16), {}, {}, {}, {});
    const auto dense = oracle::upsample(tracks_of(t), t.dt, 48.0);
    EXPECT_EQ(oracle::percent_colliding(dense, oracle::Limits{}.semi, -1e-4), 0.0) << seed;
    EXPECT_EQ(oracle::scan(tracks_of(t), t.dt, {}).total(), 0) << seed;
  }
}

TEST(FilterSwarm, KinematicsAreConsistentAcrossWindows) {
  const auto t = filter_swarm(adversarial_script(3, 4, 8), {}, {}, {}, {});
  for (std::size_t i = 0; i < t.drones(); ++i)
    for (std::size_t k = 1; k < t.samples(); ++k) {
      EXPECT_LE((t.v[i][k] - (t.p[i][k] - t.p[i][k - 1]) / t.dt).norm(), 1e-9);
      EXPECT_LE((t.a[i][k] - (t.v[i][k] - t.v[i][k - 1]) / t.dt).norm(), 1e-9);
    }
  // At every window boundary the velocity changes by no more than the thrust
  // limit allows over one step, so the windows join without a jump.
  for (std::size_t b : t.beat_indices)
    for (std::size_t i = 0; i < t.drones() && b + 1 < t.samples(); ++i)
      EXPECT_LE((t.v[i][b + 1] - t.v[i][b]).norm(), (14.7 + 9.81) * t.dt + 1e-9);
}

TEST(FilterSwarm, Deterministic) {
  const auto s = adversarial_script(11, 5, 6);
  const auto a = filter_swarm(s, {}, {}, {}, {});
  const auto b = filter_swarm(s, {}, {}, {}, {});
  EXPECT_EQ(filtered_to_json(a).dump(), filtered_to_json(b).dump());
}

TEST(FilterSwarm, RejectsBadStarts) {
  auto s = single_drone(Vec3(0, 0, 1), {{1.0, Vec3(0.5, 0, 1)}});
  s.initial_positions[0] = Vec3(5, 0, 1);
  try {
    filter_swarm(s, {}, {}, {}, {});
    FAIL();
  } catch (const FilteringError& e) {
    EXPECT_EQ(e.window(), 0u);
  }
}

TEST(FilterSwarm, RateConditionHoldsForSmallGamma) {
  const EllipsoidEnvelope env;
  for (double gamma : {0.2, 0.5}) {
    HorizonConfig cfg;
    cfg.gamma = gamma;
    const auto t = filter_swarm(adversarial_script(1, 9, 8), cfg, {}, env, {});
    for (std::size_t i = 0; i < t.drones(); ++i)
      for (std::size_t j = i + 1; j < t.drones(); ++j) {
        const auto bf = check_bf_condition(pair_clearance_series(t, i, j, env), gamma);
        EXPECT_TRUE(bf.pass) << gamma << " pair " << i << "," << j;
      }
    EXPECT_LE(t.certificate.max_bf_violation, 1e-4);
  }
}

TEST(BarrierCondition, Examples) {
  EXPECT_TRUE(check_bf_condition({1.0, 0.6, 0.36}, 0.4).pass);
  const auto r = check_bf_condition({1.0, 0.5}, 0.4);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.first_violation, 1u);
  EXPECT_TRUE(check_bf_condition({0.0, 0.3, 0.3, 2.0}, 1.0).pass);
  EXPECT_FALSE(check_bf_condition({0.5, -0.1}, 1.0).pass);
  EXPECT_THROW(check_bf_condition({}, 1.0), Error);
}

TEST(BarrierCondition, MonotoneInGamma) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  const std::vector<double> gammas{0.0, 0.1, 0.2, 0.5, 0.8, 1.0};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> h(6);
    for (auto& x : h) x = u(rng);
    bool passed = false;
    for (double g : gammas) {
      const bool p = check_bf_condition(h, g).pass;
      if (passed) EXPECT_TRUE(p) << trial << " gamma " << g;
      passed |= p;
    }
  }
}

TEST(Resample, Examples) {
  const Track two{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const auto r = resample_track(two, 0.1, 50.0);
  ASSERT_EQ(r.size(), 6u);
  for (std::size_t n = 0; n < 6; ++n) EXPECT_NEAR(r[n].x(), 0.2 * static_cast<double>(n), 1e-12);
  EXPECT_EQ(r.front(), two.front());
  EXPECT_EQ(r.back(), two.back());

  Track ten(101);
  for (std::size_t k = 0; k < ten.size(); ++k) ten[k] = Vec3(std::sin(0.1 * k), 0, 1);
  EXPECT_EQ(resample_track(ten, 0.1, 240.0).size(), 2401u);
  EXPECT_EQ(resample_track(ten, 0.1, 10.0), ten);
}

TEST(Export, JsonRoundTripAndCsv) {
  const auto t = filter_swarm(adversarial_script(2, 3, 4), {}, {}, {}, {});
  const auto j = filtered_to_json(t);
  EXPECT_EQ(j["dt"].get<double>(), 0.1);
  ASSERT_EQ(j["drones"].size(), 3u);
  const auto back = filtered_from_json(j);
  EXPECT_EQ(filtered_to_json(back).dump(), j.dump());
  const auto csv = filtered_to_csv(t);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 1 + t.drones() * t.samples());
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "drone_id,k,t,x,y,z,vx,vy,vz,ax,ay,az");
}
