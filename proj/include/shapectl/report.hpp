// SPDX-License-Identifier: Apache-2.0
//
// Benchmark grid over controllers and difficulties, plus the report files it
// produces: a metrics CSV, a text summary, SVG line plots and gate heatmaps.
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "shapectl/harness.hpp"

namespace shapectl {

struct BenchmarkConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  EpisodeConfig episode;
  std::vector<ControllerKind> controllers{ControllerKind::phy, ControllerKind::pure_nn,
                                          ControllerKind::hybrid};
  std::vector<Difficulty> difficulties{Difficulty::easy, Difficulty::medium, Difficulty::extreme};
  unsigned max_threads = 0;  // 0: hardware concurrency
};

struct BenchmarkCell {
  ControllerKind controller = ControllerKind::phy;
  Difficulty difficulty = Difficulty::easy;
  std::vector<RunMetrics> runs;  // one per seed, in seed order
  std::vector<EpisodeLog> logs;
  double e_mean = 0.0;      // seed averages
  double e_mean_std = 0.0;
  double t95 = 0.0;
  double chatter = 0.0;
  double cost = 0.0;
  int faults = 0;
};

struct BenchmarkReport {
  std::vector<BenchmarkCell> cells;  // controller-major within each difficulty
  const BenchmarkCell& at(ControllerKind c, Difficulty d) const;
};

/// Seed s perturbs the target with jitter seed s and offsets the profile's
/// noise seed by s. Throws ConfigError when a neural controller is requested
/// without a model.
BenchmarkReport run_benchmark(std::shared_ptr<const DisplacementModel> model,
                              const DisturbanceProfile& base, const RobotGeometry& geo,
                              const ControllerConfig& ctrl, const BenchmarkConfig& cfg);

void write_benchmark_csv(const BenchmarkReport& report, const std::string& path);
std::string benchmark_summary(const BenchmarkReport& report);

/// Error-vs-step and chatter-vs-step plots per difficulty (first seed), named
/// error_<difficulty>.svg and chatter_<difficulty>.svg. Returns the paths.
std::vector<std::string> write_benchmark_plots(const BenchmarkReport& report, const std::string& dir);

using Series = std::pair<std::string, std::vector<double>>;
void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& y_label, const std::vector<Series>& series);

/// Segments x steps matrix of one gate dimension (0 = x, 1 = y, 2 = theta).
Eigen::MatrixXd gate_matrix(const std::vector<Eigen::MatrixXd>& beta, int dim);

/// Writes <prefix>_beta_x.csv, <prefix>_beta_y.csv and <prefix>_gates.svg.
std::vector<std::string> export_gate_heatmap(const std::vector<Eigen::MatrixXd>& beta,
                                             const std::string& prefix);

void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path);
Eigen::MatrixXd read_matrix_csv(const std::string& path);

}  // namespace shapectl
