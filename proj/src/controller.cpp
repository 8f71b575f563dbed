// SPDX-License-Identifier: Apache-2.0
#include "shapectl/controller.hpp"

#include <cmath>
#include <limits>

#include "shapectl/errors.hpp"

namespace shapectl {

void ControllerConfig::validate() const {
  if (!(lambda_dls > 0.0)) throw InvalidInput("controller: lambda_dls must be > 0");
  if (!(perturb_eps > 0.0)) throw InvalidInput("controller: perturb_eps must be > 0");
  if (!(step_gain > 0.0 && step_gain <= 1.0))
    throw InvalidInput("controller: step_gain must lie in (0, 1]");
  if (!(w_floor > 0.0 && w_floor <= 1.0))
    throw InvalidInput("controller: w_floor must lie in (0, 1]");
  if (!(gauss_sigma > 0.0)) throw InvalidInput("controller: gauss_sigma must be > 0");
  if (!(dq_max > 0.0)) throw InvalidInput("controller: dq_max must be > 0");
  if (!(dt_delay >= 0.0)) throw InvalidInput("controller: dt_delay must be >= 0");
  if (!(control_dt > 0.0)) throw InvalidInput("controller: control_dt must be > 0");
}

double condition_number(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 0.0;
  const double lo = s(s.size() - 1);
  return lo > 0.0 ? s(0) / lo : std::numeric_limits<double>::infinity();
}

NeuralJacobian neural_jacobian(const DisplacementModel& model, const ModelContext& ctx,
                               const ControllerConfig& cfg) {
  const Eigen::Index nj = ctx.q.size();
  const Eigen::Index n = nj / 2;
  const double eps = cfg.perturb_eps;
  const Eigen::Index probes = cfg.central_differences ? 2 * nj : nj;
  Eigen::MatrixXd cmds = Eigen::MatrixXd::Zero(nj, 1 + probes);
  for (Eigen::Index k = 0; k < nj; ++k) {
    cmds(k, 1 + k) = eps;
    if (cfg.central_differences) cmds(k, 1 + nj + k) = -eps;
  }
  const DisplacementModel::Output out = model.evaluate(ctx, cmds);
  if (!out.dx_net.allFinite() || !out.beta.allFinite())
    throw NumericFault("neural_jacobian: non-finite network output", -1);

  NeuralJacobian nj_out;
  nj_out.local.resize(3 * n, nj);
  for (Eigen::Index k = 0; k < nj; ++k) {
    if (cfg.central_differences)
      nj_out.local.col(k) = (out.dx_net.col(1 + k) - out.dx_net.col(1 + nj + k)) / (2.0 * eps);
    else
      nj_out.local.col(k) = (out.dx_net.col(1 + k) - out.dx_net.col(0)) / eps;
  }
  nj_out.translational = lift_local_to_global_positions(ctx.shape.global) * nj_out.local;
  nj_out.beta = out.beta.col(0).reshaped(3, n);
  return nj_out;
}

FusedJacobian fuse_jacobian(const Eigen::MatrixXd& j_phy_p, const Eigen::MatrixXd& j_net_p,
                            const Eigen::MatrixXd& beta) {
  const Eigen::Index n = beta.cols();
  if (j_phy_p.rows() != 2 * n || j_net_p.rows() != 2 * n || j_phy_p.cols() != j_net_p.cols() ||
      beta.rows() != 3)
    throw InvalidInput("fuse_jacobian: non-conformable dimensions");
  FusedJacobian f;
  f.j_phy_p = j_phy_p;
  f.j_net_p = j_net_p;
  f.b_beta = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int d = 0; d < 2; ++d) {
      const double b = beta(d, i);
      if (!(b > 0.0 && b < 1.0) && !(b == 0.0 || b == 1.0))
        throw InvalidInput("fuse_jacobian: beta outside [0, 1]");
      f.b_beta(2 * i + d, 2 * i + d) = b;
    }
  }
  // Row scaling is the diagonal product written out; it keeps the beta = 1 and
  // beta = 0 cases exact.
  f.j_fused.resize(j_phy_p.rows(), j_phy_p.cols());
  for (Eigen::Index r = 0; r < j_phy_p.rows(); ++r) {
    const double b = f.b_beta(r, r);
    f.j_fused.row(r) = b * j_phy_p.row(r) + (1.0 - b) * j_net_p.row(r);
  }
  return f;
}

Eigen::VectorXd compensate_latency(const Eigen::VectorXd& p_vision, const Eigen::MatrixXd& j_fused,
                                   const Eigen::VectorXd& qdot, double dt_delay) {
  return p_vision + j_fused * qdot * dt_delay;
}

DlsStep dls_step(const Eigen::MatrixXd& j, const Eigen::VectorXd& e_step,
                 const ControllerConfig& cfg, const Eigen::VectorXd& node_errors) {
  if (!e_step.allFinite()) throw InvalidInput("dls_step: non-finite error vector");
  const Eigen::Index n = node_errors.size();
  if (j.rows() != 2 * n || e_step.size() != j.rows())
    throw InvalidInput("dls_step: dimension mismatch");
  DlsStep out;
  Eigen::Index peak = 0;
  for (Eigen::Index k = 1; k < n; ++k)
    if (node_errors(k) > node_errors(peak)) peak = k;
  out.peak_node = static_cast<int>(peak);
  out.weights.resize(2 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double d = static_cast<double>(k - peak);
    const double w =
        cfg.w_floor + (1.0 - cfg.w_floor) * std::exp(-d * d / (2.0 * cfg.gauss_sigma * cfg.gauss_sigma));
    out.weights(2 * k) = w;
    out.weights(2 * k + 1) = w;
  }
  const Eigen::MatrixXd jtw = j.transpose() * out.weights.asDiagonal();
  Eigen::MatrixXd a = jtw * j;
  a.diagonal().array() += cfg.lambda_dls;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw InternalFault("dls_step: factorization failed");
  out.dq = llt.solve(jtw * e_step) * cfg.step_gain;
  out.dq = out.dq.cwiseMax(-cfg.dq_max).cwiseMin(cfg.dq_max);
  return out;
}

const char* to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::phy: return "PHY";
    case ControllerKind::pure_nn: return "PURE_NN";
    case ControllerKind::hybrid: return "HYBRID";
  }
  return "?";
}

ControllerKind controller_kind_from_string(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "phy") return ControllerKind::phy;
  if (s == "pure_nn" || s == "nn" || s == "pure-nn") return ControllerKind::pure_nn;
  if (s == "hybrid") return ControllerKind::hybrid;
  throw InvalidInput("unknown controller '" + name + "' (expected phy, pure_nn or hybrid)");
}

ShapeController::ShapeController(ControllerKind kind, RobotGeometry geo, ControllerConfig cfg,
                                 std::shared_ptr<const DisplacementModel> model, GateOverride gate)
    : kind_(kind), geo_(std::move(geo)), cfg_(cfg), model_(std::move(model)), gate_(gate) {
  cfg_.validate();
  if (kind_ != ControllerKind::phy && !model_)
    throw UsageError("neural controllers need a displacement model");
}

void ShapeController::reset(const JointVector& q0) {
  q_prev_ = q0;
  dq_hist_ = Eigen::VectorXd::Zero(q0.size());
  step_ = 0;
}

ControlCommand ShapeController::control_cycle(const JointVector& q, const ShapeState& observation,
                                              const Eigen::VectorXd& target_positions) {
  if (q_prev_.size() != q.size()) reset(q);
  ControlCommand cmd;
  try {
    cmd = cycle_impl(q, observation, target_positions);
  } catch (const Error& e) {
    cmd.dq = Eigen::VectorXd::Zero(q.size());
    cmd.telemetry.step = step_;
    cmd.telemetry.node_errors = Eigen::VectorXd::Zero(geo_.n_segments);
    cmd.telemetry.beta = Eigen::MatrixXd::Ones(3, geo_.n_segments);
    cmd.telemetry.fault = true;
    cmd.telemetry.fault_message = e.what();
  }
  dq_hist_ = q - q_prev_;
  q_prev_ = q;
  ++step_;
  return cmd;
}

ControlCommand ShapeController::cycle_impl(const JointVector& q, const ShapeState& observation,
                                           const Eigen::VectorXd& target_positions) {
  const int n = geo_.n_segments;
  if (target_positions.size() != 2 * n) throw InvalidInput("control_cycle: bad target size");
  ModelContext ctx;
  ctx.q = q;
  ctx.dq_hist = dq_hist_;
  ctx.shape = observation;
  ctx.jac = physical_jacobian(q, geo_);
  const Eigen::MatrixXd j_phy_p = ctx.jac.translational();

  Eigen::MatrixXd j;
  Eigen::MatrixXd beta = Eigen::MatrixXd::Ones(3, n);
  if (kind_ == ControllerKind::phy) {
    j = j_phy_p;
  } else {
    const NeuralJacobian jn = neural_jacobian(*model_, ctx, cfg_);
    if (kind_ == ControllerKind::pure_nn) {
      j = jn.translational;
      beta.setZero();
    } else {
      beta = jn.beta;
      if (gate_ == GateOverride::physics) beta.setOnes();
      if (gate_ == GateOverride::network) beta.setZero();
      j = fuse_jacobian(j_phy_p, jn.translational, beta).j_fused;
    }
  }

  const Eigen::VectorXd qdot = (q - q_prev_) / cfg_.control_dt;
  const Eigen::VectorXd p_current =
      compensate_latency(observation.positions(), j, qdot, cfg_.dt_delay);
  const Eigen::VectorXd e_step = target_positions - p_current;
  Eigen::VectorXd node_errors(n);
  for (int k = 0; k < n; ++k) node_errors(k) = e_step.segment<2>(2 * k).norm();

  const DlsStep step = dls_step(j, e_step, cfg_, node_errors);
  const JointVector q_next = clamp_to_bounds(q + step.dq, geo_);

  ControlCommand cmd;
  cmd.dq = q_next - q;
  cmd.telemetry.step = step_;
  cmd.telemetry.node_errors = node_errors;
  cmd.telemetry.beta = beta;
  cmd.telemetry.dq_norm = cmd.dq.norm();
  cmd.telemetry.peak_node = step.peak_node;
  cmd.telemetry.cond_phy = condition_number(j_phy_p);
  cmd.telemetry.cond_fused = condition_number(j);
  return cmd;
}

}  // namespace shapectl
