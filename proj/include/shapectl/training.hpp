// SPDX-License-Identifier: Apache-2.0
//
// Data generation from the simulated plant, the physics-constrained loss
// (local Huber term plus a global term through differentiable forward
// kinematics) and the optimization loop.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shapectl/network.hpp"
#include "shapectl/plant.hpp"

namespace shapectl {

struct LossWeights {
  double w_x = 1.0;
  double w_y = 1.0;
  double w_theta = 10.0;
  double lambda_local = 0.5;
  double delta_xy = 1.0;      // mm
  double delta_theta = 0.02;  // rad

  Eigen::Vector3d weights() const { return {w_x, w_y, w_theta}; }
  Eigen::Vector3d deltas() const { return {delta_xy, delta_xy, delta_theta}; }
  void validate() const;
};

/// One transition; every matrix has one column per segment.
struct TrainingSample {
  Mat states;          // 15 x N raw state vectors
  Mat dx_nom_local;    // 3 x N
  Mat dx_gt_local;     // 3 x N
  Mat x_gt_global_t;   // 3 x N
  Mat x_gt_global_t1;  // 3 x N
};

struct Dataset {
  int n_segments = 0;
  std::vector<TrainingSample> samples;
};

struct DataGenConfig {
  double frac_near_bound = 0.4;
  double frac_near_neutral = 0.3;
  int episode_length = 40;
  double command_std = 1.0;  // mm per joint per step
  double dq_max = 2.0;
  double anchor_pull = 0.05;  // mean reversion toward the episode anchor
  double sparse_fraction = 0.25;  // steps that move a single joint
  double length_min = 50.0;   // mm, anchor arc-length range
  double length_max = 110.0;

  void validate() const;
};

Dataset generate_dataset(const DisturbanceProfile& profile, const RobotGeometry& geo,
                         int n_samples, std::uint64_t seed, const DataGenConfig& cfg = {});

/// Largest |theta_i| / limit over segments, from the commanded rack state.
double max_bend_fraction(const TrainingSample& s, const RobotGeometry& geo);

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);
std::vector<std::string> dataset_columns(int n_segments);

/// Samples regrouped per segment for a batched pass.
struct Batch {
  std::vector<Mat> states;  // 15 x B each
  std::vector<Mat> dx_nom;  // 3 x B each
  std::vector<Mat> dx_gt;
  std::vector<Mat> x_t;
  std::vector<Mat> x_t1;
  Eigen::Index size() const { return states.empty() ? 0 : states.front().cols(); }
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);
Batch make_batch(const Dataset& data);

/// Composes predicted local increments onto the ground-truth frame chain at t.
/// Inputs and outputs are per-segment (3 x B) rows (x, y, theta).
std::vector<ad::Var> differentiable_fk(ad::Tape& tape, const std::vector<Mat>& x_gt_global_t,
                                       const std::vector<ad::Var>& dx_local);
Mat differentiable_fk(const Mat& x_gt_global_t, const Mat& dx_local);

struct LossVars {
  ad::Var total;
  ad::Var global;
  ad::Var local;
};

/// Batch-mean loss terms on the pass's tape.
LossVars build_loss(NetworkPass& pass, const Batch& batch, const LossWeights& w);

struct LossValue {
  double total = 0.0;
  double global = 0.0;
  double local = 0.0;
  Eigen::Vector3d mean_beta = Eigen::Vector3d::Zero();
};

/// Loss of `params` on `batch`; adds gradients into `grads` when non-null.
/// Throws NumericFault (carrying `batch_index`) on a non-finite loss.
LossValue evaluate_loss(const NetworkParams& params, const Batch& batch, const LossWeights& w,
                        NetworkParams* grads = nullptr, int batch_index = 0);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double learning_rate_min = 1e-5;
  double clip_norm = 1.0;
  double val_fraction = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  Eigen::Vector3d mean_beta = Eigen::Vector3d::Zero();
};

struct TrainResult {
  NetworkParams params;  // best validation epoch
  std::vector<EpochLog> log;
  int best_epoch = -1;
  bool diverged = false;
  std::vector<double> step_losses;
};

/// Input mean/std and output scale from the samples' statistics.
void fit_normalization(NetworkParams& params, const Dataset& data,
                       const std::vector<std::size_t>& indices);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const Dataset& data, NetworkParams params, const LossWeights& weights,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr);

void write_training_log(const TrainResult& result, const TrainConfig& cfg,
                        const LossWeights& weights, const std::string& path);

}  // namespace shapectl
