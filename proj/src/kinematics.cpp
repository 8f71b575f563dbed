// SPDX-License-Identifier: Apache-2.0
#include "shapectl/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

constexpr double kSeriesThreshold = 1e-6;
constexpr double kDerivSeriesThreshold = 1e-2;

Eigen::Vector2d rotate(double heading, double x, double y) {
  const double c = std::cos(heading), s = std::sin(heading);
  return {x * c + y * s, -x * s + y * c};
}

Eigen::Vector2d perp(const Eigen::Vector2d& w) { return {w.y(), -w.x()}; }

// x = L * shape_x(theta), y = L * shape_y(theta) and their derivatives.
struct ArcShape {
  double ax, ay, dax, day;
};

ArcShape arc_shape(double t) {
  ArcShape s{};
  if (std::abs(t) < kSeriesThreshold) {
    const double t2 = t * t;
    s.ax = t * (0.5 - t2 / 24.0);
    s.ay = 1.0 - t2 / 6.0;
  } else {
    const double h = std::sin(0.5 * t);
    s.ax = 2.0 * h * h / t;
    s.ay = std::sin(t) / t;
  }
  if (std::abs(t) < kDerivSeriesThreshold) {
    const double t2 = t * t;
    s.dax = 0.5 - t2 / 8.0 + t2 * t2 / 144.0;
    s.day = t * (-1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0);
  } else {
    const double h = std::sin(0.5 * t);
    s.dax = (t * std::sin(t) - 2.0 * h * h) / (t * t);
    s.day = (t * std::cos(t) - std::sin(t)) / (t * t);
  }
  return s;
}

void check_dims(const JointVector& q, const RobotGeometry& geo) {
  if (q.size() != geo.n_joints()) {
    std::ostringstream os;
    os << "joint vector has " << q.size() << " entries, geometry expects " << geo.n_joints();
    throw InvalidInput(os.str());
  }
  if (!q.allFinite()) throw InvalidInput("joint vector contains non-finite values");
}

void check_limits(const JointVector& q, const RobotGeometry& geo) {
  check_dims(q, geo);
  auto bad = out_of_limit_indices(q, geo);
  if (!bad.empty()) {
    std::ostringstream os;
    os << "joint vector outside [" << geo.q_min << ", " << geo.q_max << "] at indices";
    for (int i : bad) os << ' ' << i;
    throw BoundViolation(os.str(), std::move(bad));
  }
}

}  // namespace

RobotGeometry RobotGeometry::make_default(int n_segments, double width, double kappa) {
  RobotGeometry g;
  g.n_segments = n_segments;
  g.width.assign(n_segments, width);
  g.q_min = 10.0;
  g.q_max = 150.0;
  g.bound_min.coeffs = {-kappa * width, 1.0};
  g.bound_max.coeffs = {kappa * width, 1.0};
  return g;
}

double RobotGeometry::f_min(double partner) const { return std::max(q_min, bound_min(partner)); }

double RobotGeometry::f_max(double partner) const { return std::min(q_max, bound_max(partner)); }

void RobotGeometry::validate() const {
  if (n_segments < 1) throw InvalidInput("geometry needs at least one segment");
  if (static_cast<int>(width.size()) != n_segments)
    throw InvalidInput("geometry width list does not match n_segments");
  for (double c : width)
    if (!(c > 0.0) || !std::isfinite(c)) throw InvalidInput("segment width must be positive");
  if (!(q_min < q_max)) throw InvalidInput("q_min must be below q_max");
  if (bound_min.coeffs.empty() || bound_max.coeffs.empty())
    throw InvalidInput("bound polynomials must have at least one coefficient");
  constexpr int kSamples = 2001;
  for (int k = 0; k < kSamples; ++k) {
    const double r = q_min + (q_max - q_min) * k / (kSamples - 1);
    if (bound_min(r) > bound_max(r) + 1e-12) {
      std::ostringstream os;
      os << "bound polynomials cross: f_min(" << r << ") > f_max(" << r << ")";
      throw InvalidInput(os.str());
    }
    if (f_min(r) > f_max(r) + 1e-12) {
      std::ostringstream os;
      os << "empty feasible interval for partner extension " << r;
      throw InvalidInput(os.str());
    }
  }
}

Eigen::VectorXd ShapeState::positions() const {
  Eigen::VectorXd p(2 * global.size());
  for (std::size_t k = 0; k < global.size(); ++k) {
    p(2 * k) = global[k].x;
    p(2 * k + 1) = global[k].y;
  }
  return p;
}

Eigen::MatrixXd PhysicalJacobian::translational() const {
  const Eigen::Index n = full.rows() / 3;
  Eigen::MatrixXd out(2 * n, full.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    out.row(2 * k) = full.row(3 * k);
    out.row(2 * k + 1) = full.row(3 * k + 1);
  }
  return out;
}

SegmentArc segment_arc(double q_left, double q_right, double width) {
  if (!std::isfinite(q_left) || !std::isfinite(q_right) || !std::isfinite(width))
    throw InvalidInput("segment_arc: non-finite input");
  if (!(width > 0.0)) throw InvalidInput("segment_arc: width must be positive");
  return {(q_left - q_right) / width, 0.5 * (q_left + q_right)};
}

SegmentPose segment_pose(double theta, double length) {
  if (!std::isfinite(theta) || !std::isfinite(length))
    throw InvalidInput("segment_pose: non-finite input");
  const ArcShape s = arc_shape(theta);
  return {length * s.ax, length * s.ay, theta};
}

SegmentPose compose(const SegmentPose& parent, const SegmentPose& child) {
  const Eigen::Vector2d d = rotate(parent.theta, child.x, child.y);
  return {parent.x + d.x(), parent.y + d.y(), parent.theta + child.theta};
}

SegmentPose relative(const SegmentPose& parent, const SegmentPose& child) {
  const double dx = child.x - parent.x, dy = child.y - parent.y;
  const double c = std::cos(parent.theta), s = std::sin(parent.theta);
  return {dx * c - dy * s, dx * s + dy * c, child.theta - parent.theta};
}

std::vector<SegmentPose> compose_chain(const std::vector<SegmentPose>& local) {
  std::vector<SegmentPose> global;
  global.reserve(local.size());
  SegmentPose frame{};
  for (const auto& p : local) {
    frame = compose(frame, p);
    global.push_back(frame);
  }
  return global;
}

std::vector<SegmentPose> decompose_chain(const std::vector<SegmentPose>& global) {
  std::vector<SegmentPose> local;
  local.reserve(global.size());
  SegmentPose frame{};
  for (const auto& g : global) {
    local.push_back(relative(frame, g));
    frame = g;
  }
  return local;
}

std::vector<int> out_of_limit_indices(const JointVector& q, const RobotGeometry& geo) {
  std::vector<int> bad;
  for (Eigen::Index i = 0; i < q.size(); ++i)
    if (!(q(i) >= geo.q_min && q(i) <= geo.q_max)) bad.push_back(static_cast<int>(i));
  return bad;
}

ShapeState forward_kinematics_unchecked(const JointVector& q, const RobotGeometry& geo) {
  check_dims(q, geo);
  ShapeState s;
  s.local.reserve(geo.n_segments);
  for (int i = 0; i < geo.n_segments; ++i) {
    const SegmentArc a = segment_arc(q(2 * i), q(2 * i + 1), geo.width[i]);
    s.local.push_back(segment_pose(a.theta, a.length));
  }
  s.global = compose_chain(s.local);
  return s;
}

ShapeState forward_kinematics(const JointVector& q, const RobotGeometry& geo) {
  check_limits(q, geo);
  return forward_kinematics_unchecked(q, geo);
}

Eigen::Matrix<double, 3, 2> segment_local_jacobian(double q_left, double q_right, double width) {
  const SegmentArc a = segment_arc(q_left, q_right, width);
  const ArcShape s = arc_shape(a.theta);
  // d(theta)/dq = (1/c, -1/c), d(L)/dq = (1/2, 1/2)
  const double dt_l = 1.0 / width, dt_r = -1.0 / width;
  Eigen::Matrix<double, 3, 2> j;
  j(0, 0) = a.length * s.dax * dt_l + 0.5 * s.ax;
  j(0, 1) = a.length * s.dax * dt_r + 0.5 * s.ax;
  j(1, 0) = a.length * s.day * dt_l + 0.5 * s.ay;
  j(1, 1) = a.length * s.day * dt_r + 0.5 * s.ay;
  j(2, 0) = dt_l;
  j(2, 1) = dt_r;
  return j;
}

PhysicalJacobian physical_jacobian_unchecked(const JointVector& q, const RobotGeometry& geo) {
  const int n = geo.n_segments;
  const ShapeState shape = forward_kinematics_unchecked(q, geo);
  PhysicalJacobian jac;
  jac.full = Eigen::MatrixXd::Zero(3 * n, 2 * n);
  jac.local_blocks.reserve(n);
  for (int j = 0; j < n; ++j)
    jac.local_blocks.push_back(segment_local_jacobian(q(2 * j), q(2 * j + 1), geo.width[j]));

  for (int j = 0; j < n; ++j) {
    const auto& lb = jac.local_blocks[j];
    const double heading = j == 0 ? 0.0 : shape.global[j - 1].theta;
    const Eigen::Vector2d pj{shape.global[j].x, shape.global[j].y};
    for (int col = 0; col < 2; ++col) {
      const Eigen::Vector2d dr = rotate(heading, lb(0, col), lb(1, col));
      const double dtheta = lb(2, col);
      for (int k = j; k < n; ++k) {
        const Eigen::Vector2d pk{shape.global[k].x, shape.global[k].y};
        const Eigen::Vector2d d = dr + perp(pk - pj) * dtheta;
        jac.full(3 * k, 2 * j + col) = d.x();
        jac.full(3 * k + 1, 2 * j + col) = d.y();
        jac.full(3 * k + 2, 2 * j + col) = dtheta;
      }
    }
  }
  return jac;
}

PhysicalJacobian physical_jacobian(const JointVector& q, const RobotGeometry& geo) {
  check_limits(q, geo);
  return physical_jacobian_unchecked(q, geo);
}

Eigen::MatrixXd lift_local_to_global_positions(const std::vector<SegmentPose>& global) {
  const int n = static_cast<int>(global.size());
  Eigen::MatrixXd lift = Eigen::MatrixXd::Zero(2 * n, 3 * n);
  for (int i = 0; i < n; ++i) {
    const double heading = i == 0 ? 0.0 : global[i - 1].theta;
    const Eigen::Vector2d ex = rotate(heading, 1.0, 0.0);
    const Eigen::Vector2d ey = rotate(heading, 0.0, 1.0);
    const Eigen::Vector2d pi{global[i].x, global[i].y};
    for (int k = i; k < n; ++k) {
      const Eigen::Vector2d pk{global[k].x, global[k].y};
      lift.block<2, 1>(2 * k, 3 * i) = ex;
      lift.block<2, 1>(2 * k, 3 * i + 1) = ey;
      lift.block<2, 1>(2 * k, 3 * i + 2) = perp(pk - pi);
    }
  }
  return lift;
}

JointVector clamp_to_bounds(const JointVector& q, const RobotGeometry& geo) {
  if (q.size() != geo.n_joints()) throw InvalidInput("clamp_to_bounds: dimension mismatch");
  JointVector out = q.cwiseMax(geo.q_min).cwiseMin(geo.q_max);
  for (int i = 0; i < geo.n_segments; ++i) {
    double& l = out(2 * i);
    double& r = out(2 * i + 1);
    for (int it = 0; it < 8; ++it) {
      const double l_prev = l, r_prev = r;
      l = std::clamp(l, geo.f_min(r), geo.f_max(r));
      r = std::clamp(r, geo.f_min(l), geo.f_max(l));
      if (l == l_prev && r == r_prev) break;
    }
    // Final projection so the left-rack constraint holds even if the
    // alternating projection did not settle.
    l = std::clamp(l, geo.f_min(r), geo.f_max(r));
  }
  return out;
}

bool within_bounds(const JointVector& q, const RobotGeometry& geo, double tol) {
  if (q.size() != geo.n_joints()) return false;
  for (int i = 0; i < geo.n_segments; ++i) {
    const double l = q(2 * i), r = q(2 * i + 1);
    if (l < geo.q_min - tol || l > geo.q_max + tol) return false;
    if (r < geo.q_min - tol || r > geo.q_max + tol) return false;
    if (l < geo.f_min(r) - tol || l > geo.f_max(r) + tol) return false;
  }
  return true;
}

JointVector uniform_joints(const RobotGeometry& geo, double value) {
  return JointVector::Constant(geo.n_joints(), value);
}

double bend_limit(const RobotGeometry& geo, double length) {
  return (geo.f_max(length) - length) / *std::max_element(geo.width.begin(), geo.width.end());
}

JointVector joints_from_curvature(const RobotGeometry& geo, const std::vector<double>& theta,
                                  double length) {
  if (static_cast<int>(theta.size()) != geo.n_segments)
    throw InvalidInput("joints_from_curvature: one angle per segment required");
  JointVector q(geo.n_joints());
  for (int i = 0; i < geo.n_segments; ++i) {
    const double half = 0.5 * theta[i] * geo.width[i];
    q(2 * i) = length + half;
    q(2 * i + 1) = length - half;
  }
  return q;
}

}  // namespace shapectl
