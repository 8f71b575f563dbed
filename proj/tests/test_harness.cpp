// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "shapectl/errors.hpp"
#include "shapectl/network.hpp"
#include "shapectl/report.hpp"

using namespace shapectl;

namespace {

const RobotGeometry& geo() {
  static const RobotGeometry g = RobotGeometry::make_default();
  return g;
}

std::shared_ptr<const DisplacementModel> untrained_model() {
  static const auto m = std::make_shared<NetworkModel>(
      std::make_shared<const NetworkParams>(init_params(5, geo())));
  return m;
}

std::vector<JointVector> constant_q(std::size_t len) {
  return std::vector<JointVector>(len, uniform_joints(geo(), 80.0));
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("shapectl_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Independent oracle: apply the first difference three times.
std::vector<Eigen::VectorXd> diff(const std::vector<Eigen::VectorXd>& v) {
  std::vector<Eigen::VectorXd> d;
  for (std::size_t i = 1; i < v.size(); ++i) d.push_back(v[i] - v[i - 1]);
  return d;
}

}  // namespace

TEST(Metrics, ConstantSeriesHasNoChatterOrCost) {
  const RunMetrics m = compute_metrics(std::vector<double>(10, 1.0), constant_q(10));
  EXPECT_EQ(m.chatter, 0.0);
  EXPECT_EQ(m.cost, 0.0);
}

TEST(Metrics, CubicSeriesChatterIsSix) {
  std::vector<JointVector> q;
  for (int t = 0; t < 30; ++t) {
    JointVector v = JointVector::Zero(10);
    v(0) = static_cast<double>(t) * t * t;
    q.push_back(v);
  }
  const RunMetrics m = compute_metrics(std::vector<double>(30, 0.0), q);
  EXPECT_EQ(m.chatter, 6.0);
  for (std::size_t t = 3; t < 30; ++t) EXPECT_EQ(m.chatter_series[t], 6.0);
}

TEST(Metrics, StepErrorSettlesAtStepIndex) {
  for (int k : {1, 5, 17, 40}) {
    std::vector<double> e(50, 0.0);
    for (int t = 0; t < k; ++t) e[t] = 3.0;
    EXPECT_EQ(compute_metrics(e, constant_q(50)).t95, k);
  }
}

TEST(Metrics, ChatterMatchesTripleDifferenceOracle) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 4 + trial % 40;
    std::vector<JointVector> q(len, JointVector(10));
    for (auto& v : q)
      for (int i = 0; i < 10; ++i) v(i) = n(rng);
    std::vector<Eigen::VectorXd> qq(q.begin(), q.end());
    const auto d3 = diff(diff(diff(qq)));
    double oracle = 0.0;
    for (const auto& v : d3) oracle += v.norm();
    oracle /= static_cast<double>(d3.size());
    EXPECT_NEAR(compute_metrics(std::vector<double>(len, 1.0), q).chatter, oracle, 1e-12);
  }
}

TEST(Metrics, CostIsSumOfL1Increments) {
  std::vector<JointVector> q = constant_q(5);
  q[2](3) += 2.0;
  q[4](0) -= 1.5;
  // 2 up, 2 down, 1.5 down.
  EXPECT_DOUBLE_EQ(compute_metrics(std::vector<double>(5, 0.0), q).cost, 5.5);
}

TEST(Metrics, SteadyStateIsFinalFifth) {
  std::vector<double> e(100);
  for (int t = 0; t < 100; ++t) e[t] = t < 80 ? 10.0 : 2.0;
  EXPECT_DOUBLE_EQ(compute_metrics(e, constant_q(100)).e_mean, 2.0);
}

TEST(Metrics, DeterministicAndTruncationStable) {
  std::vector<double> e;
  for (int t = 0; t < 200; ++t) e.push_back(20.0 * std::exp(-0.1 * t) + 0.5);
  const RunMetrics a = compute_metrics(e, constant_q(200));
  const RunMetrics b = compute_metrics(e, constant_q(200));
  EXPECT_EQ(a.t95, b.t95);
  EXPECT_EQ(a.e_mean, b.e_mean);
  EXPECT_LE(a.t95, 200);
  EXPECT_GE(a.e_mean, 0.0);
  // Truncating after convergence leaves t95 unchanged (steady tail identical).
  std::vector<double> flat(150, 0.5);
  for (int t = 0; t < 60; ++t) flat[t] = t < 30 ? 8.0 - 0.25 * t : 0.5;
  std::vector<double> cut(flat.begin(), flat.begin() + 100);
  EXPECT_EQ(compute_metrics(flat, constant_q(150)).t95, compute_metrics(cut, constant_q(100)).t95);
}

TEST(Metrics, RejectsShortOrMismatchedLogs) {
  EXPECT_THROW(compute_metrics(std::vector<double>(3, 0.0), constant_q(3)), InvalidInput);
  EXPECT_THROW(compute_metrics(std::vector<double>(6, 0.0), constant_q(5)), InvalidInput);
}

TEST(Targets, DifficultyShapes) {
  const auto profile = DisturbanceProfile::full();
  const double limit = bend_limit(geo(), 80.0);
  for (Difficulty d : {Difficulty::easy, Difficulty::medium, Difficulty::extreme}) {
    const TrackingTarget t = make_target(d, profile, geo());
    EXPECT_TRUE(within_bounds(t.q_target, geo()));
    int near_bound = 0;
    for (int i = 0; i < geo().n_segments; ++i) {
      const SegmentArc a = segment_arc(t.q_target(2 * i), t.q_target(2 * i + 1), geo().width[i]);
      if (std::abs(a.theta) >= 0.9 * limit) ++near_bound;
    }
    if (d == Difficulty::extreme) {
      EXPECT_GE(near_bound, 3);
    } else {
      EXPECT_EQ(near_bound, 0);
    }
  }
  EXPECT_EQ(difficulty_from_string("EXTREME"), Difficulty::extreme);
  EXPECT_THROW(difficulty_from_string("hard"), InvalidInput);
}

TEST(Episode, PhyIsExactOnIdealPlant) {
  const auto zero = DisturbanceProfile::zero();
  const TrackingTarget target = make_target(Difficulty::easy, zero, geo());
  ShapeController phy(ControllerKind::phy, geo(), ControllerConfig{});
  EpisodeConfig cfg;
  cfg.steps = 200;
  const EpisodeLog log = run_episode(phy, target, zero, geo(), cfg);
  EXPECT_EQ(log.error.size(), 201u);
  EXPECT_EQ(log.beta.size(), 200u);
  EXPECT_LT(compute_metrics(log).e_mean, 0.5);
  for (const auto& q : log.q) EXPECT_TRUE(within_bounds(q, geo()));
}

TEST(Episode, GateOverridesReproduceBaselines) {
  const auto profile = DisturbanceProfile::full();
  const TrackingTarget target = make_target(Difficulty::medium, profile, geo(), 2);
  EpisodeConfig cfg;
  cfg.steps = 60;
  auto run = [&](ControllerKind k, GateOverride g) {
    ShapeController c(k, geo(), ControllerConfig{}, untrained_model(), g);
    return run_episode(c, target, profile, geo(), cfg);
  };
  const EpisodeLog phy = run(ControllerKind::phy, GateOverride::none);
  const EpisodeLog hyb1 = run(ControllerKind::hybrid, GateOverride::physics);
  const EpisodeLog nn = run(ControllerKind::pure_nn, GateOverride::none);
  const EpisodeLog hyb0 = run(ControllerKind::hybrid, GateOverride::network);
  for (std::size_t t = 0; t < phy.q.size(); ++t) {
    ASSERT_EQ(phy.q[t], hyb1.q[t]) << "step " << t;
    ASSERT_EQ(nn.q[t], hyb0.q[t]) << "step " << t;
  }
  EXPECT_NE(phy.q.back(), nn.q.back());
}

TEST(Episode, SingleLegScheduleMatchesEpisode) {
  const auto profile = DisturbanceProfile::full();
  const TrackingTarget target = make_target(Difficulty::easy, profile, geo(), 1);
  EpisodeConfig cfg;
  cfg.steps = 30;
  ShapeController a(ControllerKind::phy, geo(), ControllerConfig{});
  ShapeController b(ControllerKind::phy, geo(), ControllerConfig{});
  const EpisodeLog ea = run_episode(a, target, profile, geo(), cfg);
  const EpisodeLog eb = run_schedule(b, {{target, 30}}, profile, geo(), cfg);
  EXPECT_EQ(ea.error, eb.error);
  EXPECT_THROW(run_schedule(b, {}, profile, geo(), cfg), InvalidInput);
}

TEST(Gating, ScheduleAlternatesNeutralAndSmoothLegs) {
  const auto profile = DisturbanceProfile::full();
  const auto legs = gating_schedule(profile, geo(), 4, 50);
  ASSERT_EQ(legs.size(), 4u);
  const double limit = bend_limit(geo(), 80.0);
  for (std::size_t l = 0; l < legs.size(); ++l)
    for (int i = 0; i < geo().n_segments; ++i) {
      const JointVector& q = legs[l].target.q_target;
      const double th = std::abs(segment_arc(q(2 * i), q(2 * i + 1), geo().width[i]).theta);
      if (l % 2 == 0) {
        EXPECT_LT(th, profile.neutral_width);
      } else {
        EXPECT_GE(th, 2.0 * profile.neutral_width);
        EXPECT_LE(th, 0.75 * limit);
      }
    }
}

TEST(Gating, PhaseStatsClassifyByBend) {
  EpisodeLog log;
  const double nw = 0.15;
  const double limit = bend_limit(geo(), 80.0);
  // Step 0: straight (neutral). Step 1: bent to 0.5 limit (smooth). Step 2:
  // bent between the bands (ignored).
  for (double th : {0.0, 0.5 * limit, 1.5 * nw}) {
    std::vector<double> bends(geo().n_segments, th);
    log.q.push_back(joints_from_curvature(geo(), bends, 80.0));
  }
  log.beta = {Eigen::MatrixXd::Constant(3, 5, 0.2), Eigen::MatrixXd::Constant(3, 5, 0.9),
              Eigen::MatrixXd::Constant(3, 5, 0.5)};
  const GatePhaseStats s = gate_phase_stats(log, geo(), nw);
  EXPECT_EQ(s.neutral_cells, 5);
  EXPECT_EQ(s.smooth_cells, 5);
  EXPECT_NEAR(s.neutral_beta, 0.2, 1e-12);
  EXPECT_NEAR(s.smooth_beta, 0.9, 1e-12);
}

TEST(Heatmap, ShapeUniformityAndRoundTrip) {
  const auto dir = scratch_dir("heatmap");
  std::vector<Eigen::MatrixXd> ones(37, Eigen::MatrixXd::Ones(3, 5));
  const auto files = export_gate_heatmap(ones, (dir / "ones").string());
  ASSERT_EQ(files.size(), 3u);
  const Eigen::MatrixXd bx = read_matrix_csv(files[0]);
  EXPECT_EQ(bx.rows(), 5);
  EXPECT_EQ(bx.cols(), 37);
  EXPECT_TRUE((bx.array() == 1.0).all());
  EXPECT_TRUE(std::filesystem::exists(files[2]));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::MatrixXd> rnd(23, Eigen::MatrixXd(3, 5));
  for (auto& m : rnd)
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  const auto f2 = export_gate_heatmap(rnd, (dir / "rnd").string());
  EXPECT_LT((read_matrix_csv(f2[0]) - gate_matrix(rnd, 0)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((read_matrix_csv(f2[1]) - gate_matrix(rnd, 1)).cwiseAbs().maxCoeff(), 1e-6);
  std::filesystem::remove_all(dir);
}

TEST(Heatmap, ForcedPhysicsGateIsUniformOne) {
  const auto profile = DisturbanceProfile::full();
  const TrackingTarget target = make_target(Difficulty::easy, profile, geo());
  ShapeController c(ControllerKind::hybrid, geo(), ControllerConfig{}, untrained_model(),
                    GateOverride::physics);
  EpisodeConfig cfg;
  cfg.steps = 10;
  const EpisodeLog log = run_episode(c, target, profile, geo(), cfg);
  EXPECT_TRUE((gate_matrix(log.beta, 0).array() == 1.0).all());
  EXPECT_TRUE((gate_matrix(log.beta, 1).array() == 1.0).all());
}

TEST(Benchmark, GridCsvHasNineRows) {
  BenchmarkConfig cfg;
  cfg.seeds = {1};
  cfg.episode.steps = 8;
  const BenchmarkReport r =
      run_benchmark(untrained_model(), DisturbanceProfile::full(), geo(), ControllerConfig{}, cfg);
  ASSERT_EQ(r.cells.size(), 9u);
  const auto dir = scratch_dir("bench");
  write_benchmark_csv(r, (dir / "report.csv").string());
  std::ifstream in(dir / "report.csv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 9);
  EXPECT_EQ(write_benchmark_plots(r, dir.string()).size(), 6u);
  EXPECT_NE(benchmark_summary(r).find("Extreme"), std::string::npos);
  std::filesystem::remove_all(dir);

  BenchmarkConfig serial = cfg;
  serial.max_threads = 1;
  const BenchmarkReport r1 =
      run_benchmark(untrained_model(), DisturbanceProfile::full(), geo(), ControllerConfig{}, serial);
  for (std::size_t i = 0; i < r.cells.size(); ++i) EXPECT_EQ(r.cells[i].e_mean, r1.cells[i].e_mean);
}

TEST(Benchmark, NeuralControllersNeedModel) {
  EXPECT_THROW(run_benchmark(nullptr, DisturbanceProfile::full(), geo(), ControllerConfig{},
                             BenchmarkConfig{}),
               ConfigError);
}
