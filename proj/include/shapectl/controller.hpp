// SPDX-License-Identifier: Apache-2.0
//
// Closed-loop shape controller: gated fusion of the analytical and neural
// translational Jacobians, first-order latency compensation and a
// Gaussian-weighted damped-least-squares step.
#pragma once

#include <memory>
#include <string>

#include "shapectl/kinematics.hpp"

namespace shapectl {

struct ControllerConfig {
  double lambda_dls = 0.01;   // mm^2
  double perturb_eps = 2.0;   // mm
  double gauss_sigma = 1.5;   // node-index units
  double w_floor = 0.2;
  double step_gain = 0.5;
  double dq_max = 2.0;        // mm per cycle
  double dt_delay = 0.033;    // s
  double control_dt = 0.02;   // s (50 Hz)
  bool central_differences = false;

  void validate() const;
};

/// Everything a displacement model may condition on at one control cycle.
struct ModelContext {
  JointVector q;
  Eigen::VectorXd dq_hist;  // previous applied increment (2N)
  ShapeState shape;         // observed shape
  PhysicalJacobian jac;     // J_phy at q
};

/// Predicts per-segment local pose increments for a batch of candidate
/// commands. Columns of `dq_cmd` (2N x B) are independent candidates.
class DisplacementModel {
 public:
  struct Output {
    Eigen::MatrixXd dx_net;  // 3N x B, rows (x, y, theta) per segment
    Eigen::MatrixXd beta;    // 3N x B
  };
  virtual ~DisplacementModel() = default;
  virtual Output evaluate(const ModelContext& ctx, const Eigen::MatrixXd& dq_cmd) const = 0;
};

struct NeuralJacobian {
  Eigen::MatrixXd translational;  // 2N x 2N
  Eigen::MatrixXd local;          // 3N x 2N, d(dx_net)/d(dq_cmd)
  Eigen::MatrixXd beta;           // 3 x N at the zero command
};

NeuralJacobian neural_jacobian(const DisplacementModel& model, const ModelContext& ctx,
                               const ControllerConfig& cfg);

struct FusedJacobian {
  Eigen::MatrixXd j_phy_p;
  Eigen::MatrixXd j_net_p;
  Eigen::MatrixXd b_beta;  // diagonal, 2N x 2N
  Eigen::MatrixXd j_fused;
};

/// `beta` is 3 x N; rows (beta_x, beta_y, beta_theta).
FusedJacobian fuse_jacobian(const Eigen::MatrixXd& j_phy_p, const Eigen::MatrixXd& j_net_p,
                            const Eigen::MatrixXd& beta);

Eigen::VectorXd compensate_latency(const Eigen::VectorXd& p_vision, const Eigen::MatrixXd& j_fused,
                                   const Eigen::VectorXd& qdot, double dt_delay);

struct DlsStep {
  Eigen::VectorXd dq;
  Eigen::VectorXd weights;  // diagonal of W
  int peak_node = 0;        // k*, zero-based
};

DlsStep dls_step(const Eigen::MatrixXd& j, const Eigen::VectorXd& e_step,
                 const ControllerConfig& cfg, const Eigen::VectorXd& node_errors);

enum class ControllerKind { phy, pure_nn, hybrid };
enum class GateOverride { none, physics, network };

const char* to_string(ControllerKind kind);
ControllerKind controller_kind_from_string(const std::string& name);

struct CycleTelemetry {
  long step = 0;
  Eigen::VectorXd node_errors;  // observed, after latency compensation
  Eigen::MatrixXd beta;         // 3 x N
  double dq_norm = 0.0;
  int peak_node = 0;
  double cond_phy = 0.0;
  double cond_fused = 0.0;
  bool fault = false;
  std::string fault_message;
};

struct ControlCommand {
  Eigen::VectorXd dq;  // already clamped so that q + dq is feasible
  CycleTelemetry telemetry;
};

class ShapeController {
 public:
  ShapeController(ControllerKind kind, RobotGeometry geo, ControllerConfig cfg,
                  std::shared_ptr<const DisplacementModel> model = nullptr,
                  GateOverride gate = GateOverride::none);

  void reset(const JointVector& q0);

  /// One cycle toward `target_positions` (stacked node x, y). `q` is the
  /// measured actuator state, `observation` the (possibly delayed) shape.
  ControlCommand control_cycle(const JointVector& q, const ShapeState& observation,
                               const Eigen::VectorXd& target_positions);

  ControllerKind kind() const { return kind_; }
  const ControllerConfig& config() const { return cfg_; }

 private:
  ControlCommand cycle_impl(const JointVector& q, const ShapeState& observation,
                            const Eigen::VectorXd& target_positions);

  ControllerKind kind_;
  RobotGeometry geo_;
  ControllerConfig cfg_;
  std::shared_ptr<const DisplacementModel> model_;
  GateOverride gate_;
  JointVector q_prev_;
  Eigen::VectorXd dq_hist_;
  long step_ = 0;
};

/// 2-norm condition number.
double condition_number(const Eigen::MatrixXd& m);

}  // namespace shapectl
