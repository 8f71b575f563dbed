// SPDX-License-Identifier: Apache-2.0
//
// Tracking protocol: procedural targets at three difficulty levels, closed-loop
// episodes against the simulated plant, and the four tracking metrics.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shapectl/controller.hpp"
#include "shapectl/plant.hpp"

namespace shapectl {

enum class Difficulty { easy, medium, extreme };

const char* to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& name);

/// Fraction of the per-segment bend limit used by each difficulty.
double curvature_fraction(Difficulty d);
/// Multiplier applied to the mechanical disturbance terms per difficulty.
double disturbance_scale(Difficulty d);
DisturbanceProfile scaled_profile(const DisturbanceProfile& base, Difficulty d);

struct TrackingTarget {
  Difficulty difficulty = Difficulty::easy;
  JointVector q_target;
  ShapeState shape;           // settled true plant shape at q_target
  Eigen::VectorXd positions;  // stacked node positions of `shape`
};

/// Procedural target. `jitter_seed` = 0 gives the nominal target; other
/// values perturb each bend angle by up to 0.03 rad (kept inside the bounds).
TrackingTarget make_target(Difficulty d, const DisturbanceProfile& profile,
                           const RobotGeometry& geo, std::uint64_t jitter_seed = 0);

struct EpisodeConfig {
  int steps = 400;
  double q_init = 70.0;
  int observation_delay = 1;  // control cycles between capture and use
};

struct EpisodeLog {
  std::vector<JointVector> q;                  // steps + 1 entries
  std::vector<double> error;                   // true mean node error (mm), steps + 1
  std::vector<Eigen::VectorXd> node_error;     // true per-node error, steps + 1
  std::vector<Eigen::MatrixXd> beta;           // 3 x N per cycle, steps
  std::vector<double> dq_norm;                 // steps
  std::vector<int> peak_node;                  // steps
  std::vector<ShapeState> shape;               // true shape, steps + 1
  std::vector<bool> fault;                     // controller fell back this cycle, steps
  int faults = 0;
};

/// Runs one closed-loop episode from uniform q_init. The profile's seed drives
/// the observation noise stream.
EpisodeLog run_episode(ShapeController& controller, const TrackingTarget& target,
                       const DisturbanceProfile& profile, const RobotGeometry& geo,
                       const EpisodeConfig& cfg);

/// Piecewise-constant target sequence driven in one continuous episode.
struct ScheduleLeg {
  TrackingTarget target;
  int steps = 0;
};

EpisodeLog run_schedule(ShapeController& controller, const std::vector<ScheduleLeg>& legs,
                        const DisturbanceProfile& profile, const RobotGeometry& geo,
                        const EpisodeConfig& cfg);

/// Target with explicit per-segment bend angles at the common target length.
TrackingTarget make_bend_target(const std::vector<double>& bends, const DisturbanceProfile& profile,
                                const RobotGeometry& geo);

/// Alternating near-neutral and smoothly bent legs; the seed varies the bend
/// signs and magnitudes.
std::vector<ScheduleLeg> gating_schedule(const DisturbanceProfile& profile, const RobotGeometry& geo,
                                         std::uint64_t seed, int steps_per_leg = 100);

/// Mean gate over (step, segment) cells whose commanded bend is near neutral
/// (|theta| < neutral_width) versus smoothly bent (2 * neutral_width <= |theta|
/// <= 0.75 * limit).
struct GatePhaseStats {
  double neutral_beta = 0.0;
  double smooth_beta = 0.0;
  int neutral_cells = 0;
  int smooth_cells = 0;
};

GatePhaseStats gate_phase_stats(const EpisodeLog& log, const RobotGeometry& geo,
                                double neutral_width);

/// One row per recorded state: step, error, joints, node poses, and the
/// command that produced it (blank on row 0).
void write_episode_csv(const EpisodeLog& log, const std::string& path);

double mean_node_error(const ShapeState& shape, const Eigen::VectorXd& target_positions);

struct RunMetrics {
  double e_mean = 0.0;
  int t95 = 0;
  double chatter = 0.0;
  double cost = 0.0;
  std::vector<double> error;          // per step
  std::vector<double> chatter_series; // per step, zero for the first three
};

/// Metrics of an error series and the matching joint series (same length,
/// at least 4 entries).
RunMetrics compute_metrics(const std::vector<double>& error, const std::vector<JointVector>& q);
RunMetrics compute_metrics(const EpisodeLog& log);

/// First index after which the series stays within 5% of the gap between its
/// first value and `steady`.
int settle_index(const std::vector<double>& error, double steady);

}  // namespace shapectl
