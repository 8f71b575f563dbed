// SPDX-License-Identifier: Apache-2.0
#include "shapectl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>
#include <random>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

constexpr const char* kDatasetMagic = "SHAPECTL-DATASET";
constexpr int kDatasetFormatVersion = 1;
constexpr int kColumnsPerSegment = kStateWidth + 4 * 3;

Mat poses_to_mat(const std::vector<SegmentPose>& poses) {
  Mat m(3, static_cast<Eigen::Index>(poses.size()));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    m(0, i) = poses[i].x;
    m(1, i) = poses[i].y;
    m(2, i) = poses[i].theta;
  }
  return m;
}

std::vector<SegmentPose> mat_to_poses(const Mat& m) {
  std::vector<SegmentPose> p(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) p[i] = {m(0, i), m(1, i), m(2, i)};
  return p;
}

enum class Stratum { near_bound, near_neutral, uniform };

}  // namespace

void LossWeights::validate() const {
  if (!(w_x > 0.0 && w_y > 0.0 && w_theta > 0.0 && lambda_local >= 0.0))
    throw InvalidInput("loss weights must be positive");
  if (!(w_theta > w_x && w_theta > w_y))
    throw InvalidInput("loss weights: the orientation weight must exceed both position weights");
  if (!(delta_xy > 0.0 && delta_theta > 0.0))
    throw InvalidInput("loss weights: Huber thresholds must be positive");
}

void DataGenConfig::validate() const {
  if (frac_near_bound < 0.0 || frac_near_neutral < 0.0 || frac_near_bound + frac_near_neutral > 1.0)
    throw InvalidInput("data generation: stratum fractions must be non-negative and sum to <= 1");
  if (episode_length < 1) throw InvalidInput("data generation: episode_length must be >= 1");
  if (!(command_std > 0.0) || !(dq_max > 0.0))
    throw InvalidInput("data generation: command scale must be positive");
  if (!(length_min > 0.0 && length_max >= length_min))
    throw InvalidInput("data generation: invalid arc-length range");
  if (sparse_fraction < 0.0 || sparse_fraction > 1.0)
    throw InvalidInput("data generation: sparse_fraction must be in [0, 1]");
}

Dataset generate_dataset(const DisturbanceProfile& profile, const RobotGeometry& geo,
                         int n_samples, std::uint64_t seed, const DataGenConfig& cfg) {
  profile.validate();
  geo.validate();
  cfg.validate();
  if (n_samples < 1) throw InvalidInput("data generation: n_samples must be >= 1");
  const int n = geo.n_segments;
  const int nj = geo.n_joints();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset data;
  data.n_segments = n;
  data.samples.reserve(static_cast<std::size_t>(n_samples));
  for (std::uint64_t episode = 0; static_cast<int>(data.samples.size()) < n_samples; ++episode) {
    const double pick = u01(rng);
    const Stratum stratum = pick < cfg.frac_near_bound ? Stratum::near_bound
                            : pick < cfg.frac_near_bound + cfg.frac_near_neutral
                                ? Stratum::near_neutral
                                : Stratum::uniform;
    const double length = cfg.length_min + (cfg.length_max - cfg.length_min) * u01(rng);
    const double limit = std::max(0.0, bend_limit(geo, length));
    std::vector<double> bends(n);
    for (double& b : bends) {
      const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
      switch (stratum) {
        case Stratum::near_bound: b = sign * limit * (0.8 + 0.2 * u01(rng)); break;
        case Stratum::near_neutral: b = sign * 0.8 * profile.neutral_width * u01(rng); break;
        case Stratum::uniform: b = sign * 0.75 * limit * u01(rng); break;
      }
    }
    const JointVector anchor = clamp_to_bounds(joints_from_curvature(geo, bends, length), geo);

    DisturbanceProfile ep = profile;
    ep.seed = profile.seed ^ (seed * 0x9E3779B97F4A7C15ULL + episode);
    PlantState plant = plant_reset(anchor, ep, geo);
    Eigen::VectorXd dq_hist = Eigen::VectorXd::Zero(nj);
    for (int k = 0; k < cfg.episode_length && static_cast<int>(data.samples.size()) < n_samples;
         ++k) {
      Eigen::VectorXd dq(nj);
      if (u01(rng) < cfg.sparse_fraction) {
        dq.setZero();
        dq(static_cast<int>(u01(rng) * nj) % nj) = cfg.command_std * gauss(rng);
      } else {
        for (int j = 0; j < nj; ++j) dq(j) = cfg.command_std * gauss(rng);
        dq += cfg.anchor_pull * (anchor - plant.q);
      }
      dq = dq.cwiseMax(-cfg.dq_max).cwiseMin(cfg.dq_max);
      dq = clamp_to_bounds(plant.q + dq, geo) - plant.q;

      const ShapeState seen = observe(plant, ep);
      const PhysicalJacobian jac = physical_jacobian(plant.q, geo);
      TrainingSample s;
      s.states = encode_state(plant.q, dq_hist, dq, seen, jac);
      s.dx_nom_local.resize(3, n);
      for (int i = 0; i < n; ++i) s.dx_nom_local.col(i) = jac.local_blocks[i] * dq.segment<2>(2 * i);
      s.x_gt_global_t = poses_to_mat(plant.shape.global);
      const Mat local_t = poses_to_mat(plant.shape.local);

      PlantState next = plant_step(plant, dq, ep, geo);
      s.x_gt_global_t1 = poses_to_mat(next.shape.global);
      s.dx_gt_local = poses_to_mat(next.shape.local) - local_t;
      data.samples.push_back(std::move(s));

      dq_hist = next.q - plant.q;
      plant = std::move(next);
    }
  }
  return data;
}

double max_bend_fraction(const TrainingSample& s, const RobotGeometry& geo) {
  double worst = 0.0;
  for (int i = 0; i < geo.n_segments; ++i) {
    const double ql = s.states(state_field::q, i), qr = s.states(state_field::q + 1, i);
    const SegmentArc arc = segment_arc(ql, qr, geo.width[i]);
    const double limit = bend_limit(geo, arc.length);
    if (limit > 0.0) worst = std::max(worst, std::abs(arc.theta) / limit);
  }
  return worst;
}

std::vector<std::string> dataset_columns(int n_segments) {
  static const char* state_names[kStateWidth] = {
      "q_l",      "q_r",      "dq_hist_l", "dq_hist_r", "x_loc",   "y_loc",   "theta_loc", "dq_cmd_l",
      "dq_cmd_r", "j_phy_00", "j_phy_01",  "j_phy_10",  "j_phy_11", "j_phy_20", "j_phy_21"};
  static const char* groups[4] = {"dx_nom_local", "dx_gt_local", "x_gt_global_t", "x_gt_global_t1"};
  static const char* axes[3] = {"x", "y", "theta"};
  std::vector<std::string> cols;
  for (int i = 0; i < n_segments; ++i) {
    const std::string pre = "seg" + std::to_string(i + 1) + ".";
    for (const char* s : state_names) cols.push_back(pre + s);
    for (const char* g : groups)
      for (const char* a : axes) cols.push_back(pre + g + "." + a);
  }
  return cols;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset '" + path + "'");
  nlohmann::json header;
  header["format_version"] = kDatasetFormatVersion;
  header["n_segments"] = data.n_segments;
  header["n_samples"] = data.samples.size();
  header["dtype"] = "float64-le";
  header["layout"] = "row-major";
  header["columns"] = dataset_columns(data.n_segments);
  out << kDatasetMagic << '\n' << header.dump() << '\n';
  std::vector<double> row(static_cast<std::size_t>(kColumnsPerSegment * data.n_segments));
  for (const auto& s : data.samples) {
    std::size_t k = 0;
    for (int i = 0; i < data.n_segments; ++i) {
      for (int r = 0; r < kStateWidth; ++r) row[k++] = s.states(r, i);
      for (const Mat* m : {&s.dx_nom_local, &s.dx_gt_local, &s.x_gt_global_t, &s.x_gt_global_t1})
        for (int r = 0; r < 3; ++r) row[k++] = (*m)(r, i);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing dataset '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("dataset not found: " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kDatasetMagic) throw ConfigError("'" + path + "' is not a dataset file");
  std::getline(in, header_line);
  Dataset data;
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(header_line);
    if (header.at("format_version").get<int>() != kDatasetFormatVersion)
      throw ConfigError("dataset '" + path + "' has an unsupported format_version");
    data.n_segments = header.at("n_segments").get<int>();
    count = header.at("n_samples").get<std::size_t>();
    if (header.at("columns").get<std::vector<std::string>>() != dataset_columns(data.n_segments))
      throw ConfigError("dataset '" + path + "' has an unexpected column layout");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset '" + path + "' has a malformed header: " + e.what());
  }
  const int n = data.n_segments;
  std::vector<double> row(static_cast<std::size_t>(kColumnsPerSegment * n));
  data.samples.resize(count);
  for (auto& s : data.samples) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw ConfigError("dataset '" + path + "' is truncated");
    s.states.resize(kStateWidth, n);
    for (Mat* m : {&s.dx_nom_local, &s.dx_gt_local, &s.x_gt_global_t, &s.x_gt_global_t1})
      m->resize(3, n);
    std::size_t k = 0;
    for (int i = 0; i < n; ++i) {
      for (int r = 0; r < kStateWidth; ++r) s.states(r, i) = row[k++];
      for (Mat* m : {&s.dx_nom_local, &s.dx_gt_local, &s.x_gt_global_t, &s.x_gt_global_t1})
        for (int r = 0; r < 3; ++r) (*m)(r, i) = row[k++];
    }
  }
  return data;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  const int n = data.n_segments;
  const auto b = static_cast<Eigen::Index>(indices.size());
  Batch batch;
  batch.states.assign(n, Mat(kStateWidth, b));
  for (auto* v : {&batch.dx_nom, &batch.dx_gt, &batch.x_t, &batch.x_t1}) v->assign(n, Mat(3, b));
  for (Eigen::Index c = 0; c < b; ++c) {
    const TrainingSample& s = data.samples.at(indices[c]);
    for (int i = 0; i < n; ++i) {
      batch.states[i].col(c) = s.states.col(i);
      batch.dx_nom[i].col(c) = s.dx_nom_local.col(i);
      batch.dx_gt[i].col(c) = s.dx_gt_local.col(i);
      batch.x_t[i].col(c) = s.x_gt_global_t.col(i);
      batch.x_t1[i].col(c) = s.x_gt_global_t1.col(i);
    }
  }
  return batch;
}

Batch make_batch(const Dataset& data) {
  std::vector<std::size_t> all(data.samples.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(data, all);
}

std::vector<ad::Var> differentiable_fk(ad::Tape& t, const std::vector<Mat>& x_gt_global_t,
                                       const std::vector<ad::Var>& dx_local) {
  const std::size_t n = x_gt_global_t.size();
  if (dx_local.size() != n) throw InvalidInput("differentiable_fk: segment count mismatch");
  const Eigen::Index b = n ? x_gt_global_t.front().cols() : 0;
  std::vector<ad::Var> out(n);
  Mat prev_true = Mat::Zero(3, b);
  ad::Var px = t.constant(Mat::Zero(1, b)), py = px, pth = px;
  for (std::size_t i = 0; i < n; ++i) {
    // Ground-truth local pose of segment i relative to its true parent frame.
    const Mat& g = x_gt_global_t[i];
    Mat local(3, b);
    for (Eigen::Index c = 0; c < b; ++c) {
      const SegmentPose l = relative({prev_true(0, c), prev_true(1, c), prev_true(2, c)},
                                     {g(0, c), g(1, c), g(2, c)});
      local.col(c) << l.x, l.y, l.theta;
    }
    prev_true = g;
    const ad::Var v = t.add(t.constant(local), dx_local[i]);
    const ad::Var lx = t.slice_rows(v, 0, 1), ly = t.slice_rows(v, 1, 1), lth = t.slice_rows(v, 2, 1);
    const ad::Var c = t.cos(pth), s = t.sin(pth);
    const ad::Var gx = t.add(px, t.add(t.mul(c, lx), t.mul(s, ly)));
    const ad::Var gy = t.add(py, t.sub(t.mul(c, ly), t.mul(s, lx)));
    const ad::Var gth = t.add(pth, lth);
    out[i] = t.concat_rows({gx, gy, gth});
    px = gx;
    py = gy;
    pth = gth;
  }
  return out;
}

Mat differentiable_fk(const Mat& x_gt_global_t, const Mat& dx_local) {
  if (x_gt_global_t.rows() != 3 || dx_local.rows() != 3 || dx_local.cols() != x_gt_global_t.cols())
    throw InvalidInput("differentiable_fk: expected matching 3 x N matrices");
  const std::vector<SegmentPose> local = decompose_chain(mat_to_poses(x_gt_global_t));
  return poses_to_mat(compose_chain(mat_to_poses(poses_to_mat(local) + dx_local)));
}

LossVars build_loss(NetworkPass& pass, const Batch& batch, const LossWeights& w) {
  ad::Tape& t = pass.tape();
  const int n = pass.n_segments();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<ad::Var> hybrid(n);
  for (int i = 0; i < n; ++i) hybrid[i] = pass.dx_hybrid(i);
  const std::vector<ad::Var> global = differentiable_fk(t, batch.x_t, hybrid);
  const Eigen::VectorXd unit = Eigen::Vector3d::Ones();
  ad::Var lg, ll;
  for (int i = 0; i < n; ++i) {
    const ad::Var eg =
        t.huber_sum(t.sub(global[i], t.constant(batch.x_t1[i])), unit, w.deltas());
    const ad::Var el =
        t.huber_sum(t.sub(hybrid[i], t.constant(batch.dx_gt[i])), w.weights(), w.deltas());
    lg = lg.valid() ? t.add(lg, eg) : eg;
    ll = ll.valid() ? t.add(ll, el) : el;
  }
  lg = t.scale(lg, inv_b);
  ll = t.scale(ll, inv_b);
  return {t.add(lg, t.scale(ll, w.lambda_local)), lg, ll};
}

LossValue evaluate_loss(const NetworkParams& params, const Batch& batch, const LossWeights& w,
                        NetworkParams* grads, int batch_index) {
  NetworkPass pass(params, batch.states, batch.dx_nom, grads);
  const LossVars l = build_loss(pass, batch, w);
  LossValue v;
  v.total = pass.value(l.total)(0, 0);
  v.global = pass.value(l.global)(0, 0);
  v.local = pass.value(l.local)(0, 0);
  if (!std::isfinite(v.total))
    throw NumericFault("training: non-finite loss in batch " + std::to_string(batch_index),
                       batch_index);
  for (int i = 0; i < pass.n_segments(); ++i)
    v.mean_beta += pass.value(pass.beta(i)).rowwise().mean();
  v.mean_beta /= pass.n_segments();
  if (grads) pass.tape().backward(l.total);
  return v;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw InvalidInput("training: epochs and batch_size must be >= 1");
  if (!(learning_rate > 0.0) || learning_rate_min < 0.0 || learning_rate_min > learning_rate)
    throw InvalidInput("training: invalid learning-rate schedule");
  if (!(clip_norm > 0.0)) throw InvalidInput("training: clip_norm must be positive");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw InvalidInput("training: val_fraction must be in [0, 1)");
}

void fit_normalization(NetworkParams& params, const Dataset& data,
                       const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw InvalidInput("fit_normalization: no samples");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kStateWidth), sq = sum;
  Eigen::Vector3d osq = Eigen::Vector3d::Zero();
  double count = 0.0;
  for (std::size_t idx : indices) {
    const TrainingSample& s = data.samples.at(idx);
    sum += s.states.rowwise().sum();
    sq += s.states.array().square().matrix().rowwise().sum();
    osq += s.dx_gt_local.array().square().matrix().rowwise().sum();
    count += static_cast<double>(s.states.cols());
  }
  params.input_mean = sum / count;
  const Eigen::VectorXd var = (sq / count).array() - params.input_mean.array().square();
  params.input_std = var.cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index r = 0; r < kStateWidth; ++r)
    if (params.input_std(r) < 1e-8) params.input_std(r) = 1.0;
  params.output_scale = (osq / count).cwiseSqrt();
  for (Eigen::Index r = 0; r < 3; ++r)
    if (params.output_scale(r) < 1e-12) params.output_scale(r) = 1.0;
}

TrainResult train(const Dataset& data, NetworkParams params, const LossWeights& weights,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  weights.validate();
  if (data.samples.empty()) throw InvalidInput("training: empty dataset");
  if (data.n_segments != params.dims.n_segments)
    throw InvalidInput("training: dataset and network disagree on the segment count");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * order.size()));
  std::vector<std::size_t> val(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> trn(order.begin() + n_val, order.end());
  if (trn.empty()) throw InvalidInput("training: validation split leaves no training samples");
  fit_normalization(params, data, trn);

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (trn.size() + bs - 1) / bs;
  const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);
  NetworkParams m = params.zeros_like(), v = params.zeros_like();
  TrainResult result;
  result.params = params;
  double best_val = std::numeric_limits<double>::infinity();
  long step = 0;

  auto validation = [&](const std::vector<std::size_t>& idx, LossValue& acc) {
    constexpr std::size_t kChunk = 256;
    double weight_sum = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += kChunk) {
      const std::vector<std::size_t> part(idx.begin() + start,
                                          idx.begin() + std::min(idx.size(), start + kChunk));
      const LossValue lv = evaluate_loss(params, make_batch(data, part), weights);
      const double wgt = static_cast<double>(part.size());
      acc.total += wgt * lv.total;
      acc.mean_beta += wgt * lv.mean_beta;
      weight_sum += wgt;
    }
    acc.total /= weight_sum;
    acc.mean_beta /= weight_sum;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(trn.begin(), trn.end(), rng);
    double train_sum = 0.0;
    try {
      for (std::size_t start = 0; start < trn.size(); start += bs, ++step) {
        const std::vector<std::size_t> part(trn.begin() + start,
                                            trn.begin() + std::min(trn.size(), start + bs));
        NetworkParams g = params.zeros_like();
        const LossValue lv =
            evaluate_loss(params, make_batch(data, part), weights, &g, static_cast<int>(step));
        train_sum += lv.total * static_cast<double>(part.size());
        result.step_losses.push_back(lv.total);

        double sq = 0.0;
        g.for_each([&](const std::string&, const Mat& t) { sq += t.squaredNorm(); });
        const double norm = std::sqrt(sq);
        const double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
        const double lr = cfg.learning_rate_min + 0.5 * (cfg.learning_rate - cfg.learning_rate_min) *
                                                      (1.0 + std::cos(std::numbers::pi * step / total_steps));
        const double t1 = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(cfg.adam_beta1, t1);
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, t1);
        std::vector<Mat*> gp, mp, vp;
        g.for_each([&](const std::string&, Mat& t) { gp.push_back(&t); });
        m.for_each([&](const std::string&, Mat& t) { mp.push_back(&t); });
        v.for_each([&](const std::string&, Mat& t) { vp.push_back(&t); });
        std::size_t k = 0;
        params.for_each([&](const std::string&, Mat& p) {
          const Mat gk = *gp[k] * clip;
          *mp[k] = cfg.adam_beta1 * *mp[k] + (1.0 - cfg.adam_beta1) * gk;
          *vp[k] = cfg.adam_beta2 * *vp[k] + (1.0 - cfg.adam_beta2) * gk.cwiseAbs2();
          p.array() -= lr * (mp[k]->array() / c1) /
                       ((vp[k]->array() / c2).sqrt() + cfg.adam_eps);
          ++k;
        });
      }
    } catch (const NumericFault&) {
      result.diverged = true;
      break;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = train_sum / static_cast<double>(trn.size());
    LossValue val_loss;
    try {
      validation(val.empty() ? trn : val, val_loss);
    } catch (const NumericFault&) {
      val_loss.total = std::numeric_limits<double>::quiet_NaN();
    }
    log.val_loss = val_loss.total;
    log.mean_beta = val_loss.mean_beta;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (!std::isfinite(log.val_loss)) {
      result.diverged = true;
      break;
    }
    if (log.val_loss < best_val) {
      best_val = log.val_loss;
      result.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

void write_training_log(const TrainResult& result, const TrainConfig& cfg,
                        const LossWeights& weights, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write training log '" + path + "'");
  out << "# optimizer=adam beta1=" << cfg.adam_beta1 << " beta2=" << cfg.adam_beta2
      << " eps=" << cfg.adam_eps << " lr=" << cfg.learning_rate << " lr_min=" << cfg.learning_rate_min
      << " schedule=cosine clip_norm=" << cfg.clip_norm << " batch_size=" << cfg.batch_size
      << " epochs=" << cfg.epochs << " val_fraction=" << cfg.val_fraction << " seed=" << cfg.seed
      << "\n# loss w=(" << weights.w_x << "," << weights.w_y << "," << weights.w_theta
      << ") delta=(" << weights.delta_xy << "," << weights.delta_xy << "," << weights.delta_theta
      << ") lambda_local=" << weights.lambda_local << " best_epoch=" << result.best_epoch
      << " diverged=" << (result.diverged ? 1 : 0) << "\n";
  out << "epoch,train_loss,val_loss,mean_beta_x,mean_beta_y,mean_beta_theta\n";
  out << std::setprecision(10);
  for (const auto& e : result.log)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.mean_beta(0) << ','
        << e.mean_beta(1) << ',' << e.mean_beta(2) << '\n';
  if (!out) throw Error("failed writing training log '" + path + "'");
}

}  // namespace shapectl
