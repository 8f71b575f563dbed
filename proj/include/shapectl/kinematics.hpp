// SPDX-License-Identifier: Apache-2.0
//
// Piecewise-constant-curvature kinematics of a planar chain of rack-driven
// segments. Segment i is actuated by a left/right rack pair (q_{i,L}, q_{i,R});
// the joint vector is ordered [q_{1,L}, q_{1,R}, ..., q_{N,L}, q_{N,R}] (mm).
//
// Frame convention: the local y axis is the segment's base tangent, headings
// are measured from +y toward +x, and a positive bend angle moves the distal
// end toward +x. Node i is the distal end of segment i; the base sits at the
// origin with heading 0.
#pragma once

#include <Eigen/Dense>
#include <vector>

namespace shapectl {

using JointVector = Eigen::VectorXd;

/// Dense polynomial c0 + c1 r + c2 r^2 + ...
struct Polynomial {
  std::vector<double> coeffs;

  double operator()(double r) const {
    double acc = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * r + *it;
    return acc;
  }
};

struct RobotGeometry {
  int n_segments = 5;
  std::vector<double> width;  // c_i per segment (mm)
  double q_min = 10.0;
  double q_max = 150.0;
  Polynomial bound_min;  // partner-dependent lower bound, before hard clipping
  Polynomial bound_max;

  /// Defaults: N = 5, c = 40 mm, racks in [10, 150] mm, |theta| <= 0.9 rad.
  static RobotGeometry make_default(int n_segments = 5, double width = 40.0,
                                    double kappa = 0.9);

  int n_joints() const { return 2 * n_segments; }

  /// f_min(r) = max(q_min, bound_min(r)).
  double f_min(double partner) const;
  /// f_max(r) = min(q_max, bound_max(r)).
  double f_max(double partner) const;

  /// Throws InvalidInput if any geometry invariant fails (dense sampling of
  /// the bound polynomials over [q_min, q_max]).
  void validate() const;
};

struct SegmentPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

struct ShapeState {
  std::vector<SegmentPose> local;
  std::vector<SegmentPose> global;

  int n_segments() const { return static_cast<int>(global.size()); }
  /// Node positions stacked as [x_1, y_1, ..., x_N, y_N].
  Eigen::VectorXd positions() const;
  const SegmentPose& tip() const { return global.back(); }
};

struct PhysicalJacobian {
  Eigen::MatrixXd full;                       // 3N x 2N, global node poses
  std::vector<Eigen::Matrix<double, 3, 2>> local_blocks;

  /// Rows (x_k, y_k) of every node: 2N x 2N.
  Eigen::MatrixXd translational() const;
};

struct SegmentArc {
  double theta;
  double length;
};

SegmentArc segment_arc(double q_left, double q_right, double width);

SegmentPose segment_pose(double theta, double length);

/// Planar transform composition: pose `child` expressed in the frame `parent`.
SegmentPose compose(const SegmentPose& parent, const SegmentPose& child);

/// Inverse of compose: the pose of `child` relative to `parent`.
SegmentPose relative(const SegmentPose& parent, const SegmentPose& child);

/// Global node poses from local segment poses, base at the origin.
std::vector<SegmentPose> compose_chain(const std::vector<SegmentPose>& local);

/// Local poses recovered from a global chain.
std::vector<SegmentPose> decompose_chain(const std::vector<SegmentPose>& global);

/// Indices of joints outside [q_min, q_max] (empty when all are within).
std::vector<int> out_of_limit_indices(const JointVector& q, const RobotGeometry& geo);

ShapeState forward_kinematics(const JointVector& q, const RobotGeometry& geo);

/// Same as forward_kinematics without the hard-limit check; used by the plant,
/// whose effective joint state may leave the actuator box.
ShapeState forward_kinematics_unchecked(const JointVector& q, const RobotGeometry& geo);

PhysicalJacobian physical_jacobian(const JointVector& q, const RobotGeometry& geo);
PhysicalJacobian physical_jacobian_unchecked(const JointVector& q, const RobotGeometry& geo);

/// Local pose derivative of one segment w.r.t. its rack pair (3 x 2).
Eigen::Matrix<double, 3, 2> segment_local_jacobian(double q_left, double q_right,
                                                   double width);

/// Linear map from stacked local pose increments (3N) to stacked global node
/// position increments (2N) around the chain `global`.
Eigen::MatrixXd lift_local_to_global_positions(const std::vector<SegmentPose>& global);

JointVector clamp_to_bounds(const JointVector& q, const RobotGeometry& geo);

/// True when q satisfies the hard limits and the partner bounds of every
/// segment (to within `tol`).
bool within_bounds(const JointVector& q, const RobotGeometry& geo, double tol = 1e-9);

/// Uniform rack extensions.
JointVector uniform_joints(const RobotGeometry& geo, double value);

/// Largest bend angle (rad) reachable by every segment at the given arc length.
double bend_limit(const RobotGeometry& geo, double length);

/// Joint vector realizing per-segment bend angles with a shared arc length.
JointVector joints_from_curvature(const RobotGeometry& geo, const std::vector<double>& theta,
                                  double length);

}  // namespace shapectl
