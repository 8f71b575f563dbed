// SPDX-License-Identifier: Apache-2.0
//
// Simulated plant. The true shape is the PCC shape of an effective joint state
// q_eff = q + coupling(q) + friction(q, play) - hysteresis(memory), so the
// disturbed robot always sits on a PCC-reachable configuration while the
// nominal Jacobian is wrong about how it gets there.
//
//   coupling   bending of segment j loads segment i with weight
//              gain * rho^|i-j| * (1 + stiffening * theta_j^8); distal sources
//              act on proximal segments with opposite sign (reaction), proximal
//              sources drag distal ones along.
//   friction   backlash on each segment's differential extension, active only
//              in the near-neutral band |theta| < neutral_width (slack racks).
//   hysteresis first-order memory of applied increments delays the response.
#pragma once

#include <cstdint>

#include "shapectl/kinematics.hpp"

namespace shapectl {

struct DisturbanceProfile {
  double coupling_gain = 0.0;
  double coupling_stiffening = 0.0;  // 1/rad^8
  double friction_scale = 0.0;       // backlash half-width (mm)
  double hysteresis_decay = 0.0;     // in [0, 1)
  double neutral_width = 0.15;       // rad
  double noise_std = 0.0;            // mm
  std::uint64_t seed = 0;

  static DisturbanceProfile zero() { return {}; }
  /// The profile shipped as "full disturbance".
  static DisturbanceProfile full();

  void validate() const;
  bool is_zero() const {
    return coupling_gain == 0.0 && friction_scale == 0.0 && hysteresis_decay == 0.0 &&
           noise_std == 0.0;
  }
};

inline constexpr double kCouplingDecay = 0.5;

struct PlantState {
  JointVector q;
  ShapeState shape;                   // true (disturbed) shape
  Eigen::VectorXd hysteresis_memory;  // 2N, mm
  Eigen::VectorXd friction_offset;    // N, backlash state of each differential (mm)
  JointVector q_effective;
  long step_index = 0;
};

/// Relaxed plant at q0 (clamped to bounds): empty memory, centered backlash.
PlantState plant_reset(const JointVector& q0, const DisturbanceProfile& profile,
                       const RobotGeometry& geo);

PlantState plant_step(const PlantState& state, const Eigen::VectorXd& dq_cmd,
                      const DisturbanceProfile& profile, const RobotGeometry& geo);

/// Noisy measurement of the true shape. Deterministic in (profile.seed,
/// state.step_index).
ShapeState observe(const PlantState& state, const DisturbanceProfile& profile);

/// Effective joint state for the given actuator state and internal memories.
JointVector effective_joints(const JointVector& q, const Eigen::VectorXd& hysteresis_memory,
                             const Eigen::VectorXd& friction_offset,
                             const DisturbanceProfile& profile, const RobotGeometry& geo);

/// Differential-extension offset (mm) each segment receives from inter-segment
/// coupling at q.
Eigen::VectorXd coupling_offsets(const JointVector& q, const DisturbanceProfile& profile,
                                 const RobotGeometry& geo);

}  // namespace shapectl
