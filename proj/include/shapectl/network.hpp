// SPDX-License-Identifier: Apache-2.0
//
// Displacement network: per-segment expert MLPs, a bidirectional GRU over the
// segment sequence, and two heads reading z = [h, H, vec(J_phy)] that predict
// the learned local displacement and a dimension-wise confidence gate.
//
// Batches are column-major: each segment's input is a (15 x B) matrix whose
// columns are independent samples.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "shapectl/autodiff.hpp"
#include "shapectl/controller.hpp"
#include "shapectl/kinematics.hpp"

namespace shapectl {

using ad::Mat;

inline constexpr int kStateWidth = 15;
inline constexpr int kCheckpointFormatVersion = 1;

/// Row offsets of the per-segment state vector.
namespace state_field {
inline constexpr int q = 0;        // q_L, q_R
inline constexpr int dq_hist = 2;  // previous applied increment
inline constexpr int x_loc = 4;    // local pose x, y, theta
inline constexpr int dq_cmd = 7;   // proposed increment
inline constexpr int j_phy = 9;    // row-major 3 x 2 local Jacobian block
}  // namespace state_field

struct NetworkDims {
  int n_segments = 5;
  int expert_width = 128;  // h
  int gru_width = 128;     // per direction; H = 2 * gru_width
  int head_width = 64;

  int z_width() const { return expert_width + 2 * gru_width + 6; }
  void validate() const;
  bool operator==(const NetworkDims&) const = default;
};

struct LinearLayer {
  Mat w;  // out x in
  Mat b;  // out x 1
};

struct NormLayer {
  Mat gamma;
  Mat beta;
};

struct ExpertParams {
  LinearLayer input;
  std::array<LinearLayer, 2> block;
  std::array<NormLayer, 2> norm;
};

/// Gate rows are ordered (reset, update, candidate).
struct GruParams {
  Mat w_ih;  // 3H x in
  Mat w_hh;  // 3H x H
  Mat b_ih;  // 3H x 1
  Mat b_hh;  // 3H x 1
};

struct HeadParams {
  LinearLayer hidden;
  LinearLayer out;
};

struct NetworkParams {
  NetworkDims dims;
  std::vector<ExpertParams> experts;  // one per segment
  GruParams gru_fwd;
  GruParams gru_bwd;
  HeadParams pred_head;
  HeadParams gate_head;
  double gate_bias = 2.0;
  // Frozen affine input normalization and output scale.
  Eigen::VectorXd input_mean = Eigen::VectorXd::Zero(kStateWidth);
  Eigen::VectorXd input_std = Eigen::VectorXd::Ones(kStateWidth);
  Eigen::VectorXd output_scale = Eigen::VectorXd::Ones(3);

  /// Visits every trainable tensor in a fixed order.
  void for_each(const std::function<void(const std::string&, Mat&)>& fn);
  void for_each(const std::function<void(const std::string&, const Mat&)>& fn) const;

  /// Same structure with every trainable tensor zeroed.
  NetworkParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Fan-in scaled uniform initialization; gate_bias = +2.
NetworkParams init_params(std::uint64_t seed, const NetworkDims& dims);
NetworkParams init_params(std::uint64_t seed, const RobotGeometry& geo);

/// Raw per-segment state vectors, one column per segment (15 x N).
Mat encode_state(const JointVector& q, const Eigen::VectorXd& dq_hist,
                 const Eigen::VectorXd& dq_cmd, const ShapeState& shape,
                 const PhysicalJacobian& jac);

struct SegmentStateFields {
  Eigen::Vector2d q;
  Eigen::Vector2d dq_hist;
  Eigen::Vector3d x_loc;
  Eigen::Vector2d dq_cmd;
  Eigen::Matrix<double, 3, 2> j_phy;
};

SegmentStateFields decode_state(const Eigen::VectorXd& column);

Mat normalize_states(const NetworkParams& params, const Mat& raw);
Mat denormalize_states(const NetworkParams& params, const Mat& normalized);

/// One recorded forward pass. `states` holds one raw (15 x B) matrix per
/// segment, `dx_nom` one (3 x B) matrix per segment. When `grads` is given,
/// parameter adjoints are added into it by backward().
class NetworkPass {
 public:
  NetworkPass() = default;
  NetworkPass(const NetworkParams& params, const std::vector<Mat>& states,
              const std::vector<Mat>& dx_nom, NetworkParams* grads = nullptr);

  bool has_forward() const { return static_cast<bool>(tape_); }
  ad::Tape& tape();

  ad::Var dx_hybrid(int seg) const { return dx_hybrid_.at(seg); }
  ad::Var dx_net(int seg) const { return dx_net_.at(seg); }
  ad::Var beta(int seg) const { return beta_.at(seg); }
  ad::Var context(int seg) const { return bigru_.at(seg); }
  ad::Var z(int seg) const { return z_.at(seg); }
  const Mat& value(ad::Var v) const { return tape_->value(v); }
  int n_segments() const { return static_cast<int>(dx_net_.size()); }

  /// Propagates upstream adjoints of the three outputs (empty vectors skip
  /// an output) into the parameter gradients.
  void backward(const std::vector<Mat>& g_hybrid, const std::vector<Mat>& g_net,
                const std::vector<Mat>& g_beta);

 private:
  std::unique_ptr<ad::Tape> tape_;
  std::vector<ad::Var> dx_hybrid_, dx_net_, beta_, bigru_, z_;
};

struct ForwardOutput {
  std::vector<Mat> dx_hybrid;  // per segment, 3 x B
  std::vector<Mat> dx_net;
  std::vector<Mat> beta;
};

ForwardOutput forward(const NetworkParams& params, const std::vector<Mat>& states,
                      const std::vector<Mat>& dx_nom);

/// Displacement model backed by trained parameters.
class NetworkModel : public DisplacementModel {
 public:
  explicit NetworkModel(std::shared_ptr<const NetworkParams> params);
  Output evaluate(const ModelContext& ctx, const Eigen::MatrixXd& dq_cmd) const override;
  const NetworkParams& params() const { return *params_; }

 private:
  std::shared_ptr<const NetworkParams> params_;
};

void save_checkpoint(const NetworkParams& params, const std::string& path);
NetworkParams load_checkpoint(const std::string& path);

}  // namespace shapectl
