// SPDX-License-Identifier: Apache-2.0
//
// Obstacle-avoiding target generation: joint-space descent on an artificial
// potential (obstacle repulsion plus a spring toward a nominal posture) with
// the tip position held fixed by Newton projection.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "shapectl/controller.hpp"
#include "shapectl/harness.hpp"

namespace shapectl {

struct Obstacle {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 15.0;     // mm
  double influence = 45.0;  // mm, clearance beyond which repulsion vanishes

  void validate() const;
};

struct PlanConfig {
  double k_rep = 5e4;
  double k_rest = 0.1;
  double q_nominal = 100.0;  // mm, uniform restoring posture
  Eigen::Vector2d tip_target = Eigen::Vector2d(0.0, 500.0);
  double tip_tol = 1.0;  // mm
  int iters = 50;
  double influence_factor = 3.0;  // influence = factor * radius for traced obstacles

  void validate() const;
};

/// Backbone points used for distance queries: the base, every node, and the
/// arc midpoint of every segment.
std::vector<Eigen::Vector2d> backbone_samples(const JointVector& q, const RobotGeometry& geo);

/// Smallest distance from the sampled backbone to the obstacle disc (negative
/// when a sample lies inside it).
double min_clearance(const JointVector& q, const Obstacle& obstacle, const RobotGeometry& geo);

double potential(const JointVector& q, const std::optional<Obstacle>& obstacle,
                 const PlanConfig& cfg, const RobotGeometry& geo);

/// Moves q onto the tip constraint with minimum-norm Newton steps, keeping it
/// inside the joint bounds. Returns nullopt when the tolerance is not met.
std::optional<JointVector> project_tip(const JointVector& q, const Eigen::Vector2d& tip_target,
                                       double tip_tol, const RobotGeometry& geo);

struct Plan {
  JointVector q;
  ShapeState shape;
  double potential = 0.0;
  double clearance = 0.0;  // +inf without an obstacle
  int accepted_steps = 0;
  std::vector<double> potential_trace;  // U after each accepted step, starting value first
};

/// Throws InfeasiblePlan when no admissible target satisfies the tip
/// constraint with positive clearance.
Plan plan_shape(const JointVector& q_current, const std::optional<Obstacle>& obstacle,
                const PlanConfig& cfg, const RobotGeometry& geo);

struct ObstacleSample {
  double t = 0.0;  // s
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.0;  // <= 0 marks an absent obstacle
};

std::vector<ObstacleSample> load_obstacle_trace(const std::string& path);
void save_obstacle_trace(const std::vector<ObstacleSample>& trace, const std::string& path);

/// Scripted sweep: the obstacle approaches the nominal backbone from +x,
/// travels along it, withdraws, then disappears.
std::vector<ObstacleSample> scripted_sweep(const PlanConfig& cfg, double dt = 0.02, double radius = 15.0);

struct AvoidanceConfig {
  int control_cycles_per_frame = 1;
  int observation_delay = 1;
  double q_init = 100.0;
};

struct AvoidanceFrame {
  double t = 0.0;
  double tip_error = 0.0;      // true tip distance to the tip target (mm)
  double clearance = 0.0;      // true backbone clearance (+inf without obstacle)
  double target_clearance = 0.0;
  bool infeasible = false;
  Eigen::MatrixXd beta;
  JointVector q;
  JointVector q_target;
  double rest_distance = 0.0;  // ||q - q_nominal||
};

struct AvoidanceLog {
  std::vector<AvoidanceFrame> frames;
  int infeasible_frames = 0;
  double min_clearance() const;
  double mean_tip_error() const;
  double final_tip_error() const;
};

/// One avoidance loop: plan toward the current obstacle, then run the
/// controller toward the planned shape. The planner warm-starts from its
/// previous target; an infeasible plan keeps the previous target.
class AvoidanceRunner {
 public:
  AvoidanceRunner(ShapeController& controller, PlanConfig plan, DisturbanceProfile profile,
                  RobotGeometry geo, AvoidanceConfig cfg = {});

  /// Plant back to uniform q_init, controller and planner to their start.
  void reset();
  AvoidanceFrame step(double t, const std::optional<Obstacle>& obstacle);
  void set_tip_target(const Eigen::Vector2d& tip);

  const PlantState& plant() const { return plant_; }
  const Plan& plan() const { return current_; }
  const PlanConfig& plan_config() const { return plan_cfg_; }
  const RobotGeometry& geometry() const { return geo_; }
  int infeasible_frames() const { return infeasible_; }

 private:
  ShapeController& controller_;
  PlanConfig plan_cfg_;
  DisturbanceProfile profile_;
  RobotGeometry geo_;
  AvoidanceConfig cfg_;
  PlantState plant_;
  std::vector<ShapeState> observations_;
  Plan current_;
  int infeasible_ = 0;
};

/// Obstacle described by a trace sample, or nullopt when it is absent.
std::optional<Obstacle> obstacle_at(const ObstacleSample& sample, const PlanConfig& plan);

AvoidanceLog avoidance_session(ShapeController& controller,
                               const std::vector<ObstacleSample>& trace, const PlanConfig& plan,
                               const DisturbanceProfile& profile, const RobotGeometry& geo,
                               const AvoidanceConfig& cfg = {});

void write_avoidance_csv(const AvoidanceLog& log, const std::string& path);

}  // namespace shapectl
