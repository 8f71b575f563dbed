// SPDX-License-Identifier: Apache-2.0
#include "shapectl/plant.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "shapectl/errors.hpp"

namespace shapectl {

DisturbanceProfile DisturbanceProfile::full() {
  DisturbanceProfile p;
  p.coupling_gain = 0.25;
  p.coupling_stiffening = 20.0;
  p.friction_scale = 3.0;
  p.hysteresis_decay = 0.5;
  p.neutral_width = 0.15;
  p.noise_std = 0.3;
  p.seed = 7;
  return p;
}

void DisturbanceProfile::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw InvalidInput(std::string("disturbance: ") + name + " must be finite and >= 0");
  };
  nonneg(coupling_gain, "coupling_gain");
  nonneg(coupling_stiffening, "coupling_stiffening");
  nonneg(friction_scale, "friction_scale");
  nonneg(noise_std, "noise_std");
  nonneg(neutral_width, "neutral_width");
  if (!(hysteresis_decay >= 0.0 && hysteresis_decay < 1.0))
    throw InvalidInput("disturbance: hysteresis_decay must lie in [0, 1)");
}

Eigen::VectorXd coupling_offsets(const JointVector& q, const DisturbanceProfile& profile,
                                 const RobotGeometry& geo) {
  const int n = geo.n_segments;
  Eigen::VectorXd load(n);
  for (int j = 0; j < n; ++j) {
    const double t = (q(2 * j) - q(2 * j + 1)) / geo.width[j];
    const double t2 = t * t;
    const double t4 = t2 * t2;
    load(j) = t + profile.coupling_stiffening * t4 * t4 * t / 9.0;
  }
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double w = std::pow(kCouplingDecay, std::abs(i - j));
      acc += (j < i ? w : -w) * load(j);
    }
    offset(i) = profile.coupling_gain * geo.width[i] * acc;
  }
  return offset;
}

JointVector effective_joints(const JointVector& q, const Eigen::VectorXd& hysteresis_memory,
                             const Eigen::VectorXd& friction_offset,
                             const DisturbanceProfile& profile, const RobotGeometry& geo) {
  JointVector q_eff = q;
  if (profile.coupling_gain != 0.0) {
    const Eigen::VectorXd c = coupling_offsets(q, profile, geo);
    for (int i = 0; i < geo.n_segments; ++i) {
      q_eff(2 * i) += 0.5 * c(i);
      q_eff(2 * i + 1) -= 0.5 * c(i);
    }
  }
  if (profile.friction_scale != 0.0 && profile.neutral_width > 0.0) {
    for (int i = 0; i < geo.n_segments; ++i) {
      const double t = (q(2 * i) - q(2 * i + 1)) / geo.width[i];
      const double w = std::max(0.0, 1.0 - std::abs(t) / profile.neutral_width);
      q_eff(2 * i) += 0.5 * w * friction_offset(i);
      q_eff(2 * i + 1) -= 0.5 * w * friction_offset(i);
    }
  }
  if (profile.hysteresis_decay != 0.0) q_eff -= profile.hysteresis_decay * hysteresis_memory;
  return q_eff;
}

PlantState plant_reset(const JointVector& q0, const DisturbanceProfile& profile,
                       const RobotGeometry& geo) {
  PlantState s;
  s.q = clamp_to_bounds(q0, geo);
  s.hysteresis_memory = Eigen::VectorXd::Zero(geo.n_joints());
  s.friction_offset = Eigen::VectorXd::Zero(geo.n_segments);
  s.q_effective = effective_joints(s.q, s.hysteresis_memory, s.friction_offset, profile, geo);
  s.shape = forward_kinematics_unchecked(s.q_effective, geo);
  s.step_index = 0;
  return s;
}

PlantState plant_step(const PlantState& state, const Eigen::VectorXd& dq_cmd,
                      const DisturbanceProfile& profile, const RobotGeometry& geo) {
  if (dq_cmd.size() != geo.n_joints()) throw InvalidInput("plant_step: dimension mismatch");
  if (!dq_cmd.allFinite()) throw InvalidInput("plant_step: non-finite command");
  PlantState next;
  next.q = clamp_to_bounds(state.q + dq_cmd, geo);
  const Eigen::VectorXd applied = next.q - state.q;
  const double h = profile.hysteresis_decay;
  next.hysteresis_memory = h * state.hysteresis_memory + (1.0 - h) * applied;
  next.friction_offset = state.friction_offset;
  if (profile.friction_scale != 0.0) {
    const double b = profile.friction_scale;
    for (int i = 0; i < geo.n_segments; ++i) {
      const double dd = applied(2 * i) - applied(2 * i + 1);
      next.friction_offset(i) = std::clamp(state.friction_offset(i) - dd, -b, b);
    }
  }
  next.q_effective =
      effective_joints(next.q, next.hysteresis_memory, next.friction_offset, profile, geo);
  next.shape = forward_kinematics_unchecked(next.q_effective, geo);
  next.step_index = state.step_index + 1;
  return next;
}

ShapeState observe(const PlantState& state, const DisturbanceProfile& profile) {
  if (profile.noise_std == 0.0) return state.shape;
  std::seed_seq seq{static_cast<std::uint32_t>(profile.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(profile.seed >> 32),
                    static_cast<std::uint32_t>(state.step_index & 0xffffffff),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(state.step_index) >> 32),
                    0x0b5e7e5u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> pos(0.0, profile.noise_std);
  std::normal_distribution<double> ang(0.0, profile.noise_std / 40.0);
  std::vector<SegmentPose> noisy = state.shape.global;
  for (auto& p : noisy) {
    p.x += pos(rng);
    p.y += pos(rng);
    p.theta += ang(rng);
  }
  ShapeState out;
  out.local = decompose_chain(noisy);
  out.global = compose_chain(out.local);
  return out;
}

}  // namespace shapectl
