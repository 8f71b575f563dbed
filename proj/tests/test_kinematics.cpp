// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "shapectl/errors.hpp"
#include "shapectl/kinematics.hpp"
#include "test_util.hpp"

using namespace shapectl;

namespace {

// Midpoint-rule integration of a unit-speed arc whose heading grows linearly
// from 0 to theta; heading measured from +y toward +x.
SegmentPose integrate_arc(double theta, double length, int steps) {
  const double ds = length / steps;
  const double kappa = theta / length;
  double x = 0.0, y = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double phi = kappa * (i + 0.5) * ds;
    x += std::sin(phi) * ds;
    y += std::cos(phi) * ds;
  }
  return {x, y, theta};
}

Eigen::Matrix3d homogeneous(const SegmentPose& p) {
  Eigen::Matrix3d m;
  m << std::cos(p.theta), std::sin(p.theta), p.x,
      -std::sin(p.theta), std::cos(p.theta), p.y,
      0, 0, 1;
  return m;
}

}  // namespace

TEST(SegmentArc, DirectEvaluation) {
  auto a = segment_arc(70, 70, 40);
  EXPECT_EQ(a.theta, 0.0);
  EXPECT_EQ(a.length, 70.0);
  a = segment_arc(80, 60, 40);
  EXPECT_DOUBLE_EQ(a.theta, 0.5);
  EXPECT_DOUBLE_EQ(a.length, 70.0);
  a = segment_arc(60, 80, 40);
  EXPECT_DOUBLE_EQ(a.theta, -0.5);
}

TEST(SegmentArc, RejectsBadInput) {
  EXPECT_THROW(segment_arc(std::nan(""), 70, 40), InvalidInput);
  EXPECT_THROW(segment_arc(70, INFINITY, 40), InvalidInput);
  EXPECT_THROW(segment_arc(70, 70, 0.0), InvalidInput);
}

TEST(SegmentPose, StraightAndQuarterCircle) {
  auto p = segment_pose(0.0, 70.0);
  EXPECT_EQ(p.x, 0.0);
  EXPECT_EQ(p.y, 70.0);
  EXPECT_EQ(p.theta, 0.0);
  const double l = 55.0;
  p = segment_pose(std::numbers::pi / 2, l);
  EXPECT_NEAR(p.x, 2 * l / std::numbers::pi, 1e-12);
  EXPECT_NEAR(p.y, 2 * l / std::numbers::pi, 1e-12);
}

TEST(SegmentPose, MatchesNumericArcIntegration) {
  const auto ref = integrate_arc(0.5, 70.0, 1000000);
  const auto p = segment_pose(0.5, 70.0);
  EXPECT_NEAR(p.x, ref.x, 1e-9);
  EXPECT_NEAR(p.y, ref.y, 1e-9);
  EXPECT_DOUBLE_EQ(p.theta, 0.5);
}

TEST(SegmentPose, ContinuousAcrossSmallAngleBranch) {
  for (double sign : {1.0, -1.0}) {
    const double t0 = sign * 1e-6;
    const auto below = segment_pose(std::nextafter(t0, 0.0), 90.0);
    const auto above = segment_pose(std::nextafter(t0, sign * 1.0), 90.0);
    EXPECT_NEAR(below.x, above.x, 1e-10);
    EXPECT_NEAR(below.y, above.y, 1e-10);
    EXPECT_NEAR(below.theta, above.theta, 1e-10);
  }
}

TEST(ForwardKinematics, StraightChain) {
  const auto geo = RobotGeometry::make_default();
  const auto s = forward_kinematics(uniform_joints(geo, 70.0), geo);
  ASSERT_EQ(s.n_segments(), 5);
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(s.global[k].x, 0.0, 1e-12);
    EXPECT_NEAR(s.global[k].y, 70.0 * (k + 1), 1e-9);
    EXPECT_EQ(s.global[k].theta, 0.0);
  }
}

TEST(ForwardKinematics, SingleSegmentIsSegmentPose) {
  const auto geo = RobotGeometry::make_default(1);
  JointVector q(2);
  q << 90.0, 70.0;
  const auto s = forward_kinematics(q, geo);
  const auto a = segment_arc(90.0, 70.0, 40.0);
  const auto p = segment_pose(a.theta, a.length);
  EXPECT_EQ(s.global[0].x, p.x);
  EXPECT_EQ(s.global[0].y, p.y);
  EXPECT_EQ(s.global[0].theta, p.theta);
}

TEST(ForwardKinematics, MatchesHomogeneousMatrixProduct) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const JointVector q = testutil::random_feasible(geo, rng);
    const auto s = forward_kinematics(q, geo);
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    for (int i = 0; i < geo.n_segments; ++i) {
      const auto a = segment_arc(q(2 * i), q(2 * i + 1), geo.width[i]);
      t = t * homogeneous(segment_pose(a.theta, a.length));
    }
    EXPECT_NEAR(s.tip().x, t(0, 2), 1e-9);
    EXPECT_NEAR(s.tip().y, t(1, 2), 1e-9);
    EXPECT_NEAR(std::cos(s.tip().theta), t(0, 0), 1e-9);
    EXPECT_NEAR(std::sin(s.tip().theta), t(0, 1), 1e-9);
  }
}

TEST(ForwardKinematics, ReportsOffendingIndices) {
  const auto geo = RobotGeometry::make_default();
  JointVector q = uniform_joints(geo, 70.0);
  q(3) = 5.0;
  q(8) = 151.0;
  try {
    forward_kinematics(q, geo);
    FAIL() << "expected a bound violation";
  } catch (const BoundViolation& e) {
    EXPECT_EQ(e.indices(), (std::vector<int>{3, 8}));
  }
}

TEST(ForwardKinematics, LeftRightSwapMirrorsShape) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const JointVector q = testutil::random_feasible(geo, rng);
    JointVector m = q;
    for (int i = 0; i < geo.n_segments; ++i) std::swap(m(2 * i), m(2 * i + 1));
    const auto a = forward_kinematics(q, geo);
    const auto b = forward_kinematics(m, geo);
    for (int k = 0; k < geo.n_segments; ++k) {
      EXPECT_NEAR(a.global[k].x, -b.global[k].x, 1e-9);
      EXPECT_NEAR(a.global[k].y, b.global[k].y, 1e-9);
      EXPECT_NEAR(a.global[k].theta, -b.global[k].theta, 1e-9);
    }
  }
}

TEST(ForwardKinematics, ComposeDecomposeRoundTrip) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(13);
  const auto s = forward_kinematics(testutil::random_feasible(geo, rng), geo);
  const auto g = compose_chain(s.local);
  for (int k = 0; k < geo.n_segments; ++k) {
    EXPECT_EQ(g[k].x, s.global[k].x);
    EXPECT_EQ(g[k].y, s.global[k].y);
    EXPECT_EQ(g[k].theta, s.global[k].theta);
  }
  const auto l = decompose_chain(s.global);
  for (int k = 0; k < geo.n_segments; ++k) {
    EXPECT_NEAR(l[k].x, s.local[k].x, 1e-9);
    EXPECT_NEAR(l[k].y, s.local[k].y, 1e-9);
    EXPECT_NEAR(l[k].theta, s.local[k].theta, 1e-12);
  }
}

TEST(PhysicalJacobian, StraightChainAxialEntries) {
  const auto geo = RobotGeometry::make_default();
  const auto j = physical_jacobian(uniform_joints(geo, 70.0), geo);
  for (int i = 0; i < geo.n_segments; ++i) {
    EXPECT_DOUBLE_EQ(j.local_blocks[i](1, 0), 0.5);
    EXPECT_DOUBLE_EQ(j.local_blocks[i](1, 1), 0.5);
    EXPECT_DOUBLE_EQ(j.full(3 * i + 1, 2 * i), 0.5);
    EXPECT_DOUBLE_EQ(j.full(3 * i + 1, 2 * i + 1), 0.5);
  }
}

TEST(PhysicalJacobian, MatchesFiniteDifferences) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const JointVector q = testutil::random_interior(geo, rng, 1e-3);
    const auto j = physical_jacobian(q, geo).full;
    const Eigen::MatrixXd fd = testutil::fd_jacobian(q, geo, 1e-4);
    const double scale = std::max(1.0, j.cwiseAbs().rowwise().sum().maxCoeff());
    EXPECT_LT((j - fd).cwiseAbs().rowwise().sum().maxCoeff() / scale, 1e-5) << "trial " << trial;
  }
}

TEST(PhysicalJacobian, BlockLowerTriangular) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const auto j = physical_jacobian(testutil::random_feasible(geo, rng), geo).full;
    for (int i = 0; i < geo.n_segments; ++i)
      for (int jj = i + 1; jj < geo.n_segments; ++jj)
        EXPECT_TRUE((j.block<3, 2>(3 * i, 2 * jj).array() == 0.0).all());
  }
}

TEST(PhysicalJacobian, NearZeroCurvatureMatchesFiniteDifferences) {
  const auto geo = RobotGeometry::make_default();
  for (double d : {0.0, 1e-8, 1e-5, 1e-3, 0.2}) {
    JointVector q = uniform_joints(geo, 80.0);
    for (int i = 0; i < geo.n_segments; ++i) q(2 * i) += d * (i + 1);
    const auto j = physical_jacobian(q, geo).full;
    const Eigen::MatrixXd fd = testutil::fd_jacobian(q, geo, 1e-4);
    EXPECT_LT((j - fd).cwiseAbs().maxCoeff(), 1e-5) << "d = " << d;
  }
}

TEST(LiftLocalToGlobal, MatchesPerturbedComposition) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(16);
  const auto s = forward_kinematics(testutil::random_feasible(geo, rng), geo);
  const Eigen::MatrixXd lift = lift_local_to_global_positions(s.global);
  ASSERT_EQ(lift.rows(), 10);
  ASSERT_EQ(lift.cols(), 15);
  const double h = 1e-6;
  for (int c = 0; c < 15; ++c) {
    auto plus = s.local, minus = s.local;
    double* fp[3] = {&plus[c / 3].x, &plus[c / 3].y, &plus[c / 3].theta};
    double* fm[3] = {&minus[c / 3].x, &minus[c / 3].y, &minus[c / 3].theta};
    *fp[c % 3] += h;
    *fm[c % 3] -= h;
    const auto gp = compose_chain(plus), gm = compose_chain(minus);
    for (int k = 0; k < 5; ++k) {
      EXPECT_NEAR(lift(2 * k, c), (gp[k].x - gm[k].x) / (2 * h), 1e-6);
      EXPECT_NEAR(lift(2 * k + 1, c), (gp[k].y - gm[k].y) / (2 * h), 1e-6);
    }
  }
}

TEST(ClampToBounds, IdentityOnFeasible) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const JointVector q = testutil::random_feasible(geo, rng);
    EXPECT_EQ(clamp_to_bounds(q, geo), q);
  }
}

TEST(ClampToBounds, HardLimitClip) {
  const auto geo = RobotGeometry::make_default();
  JointVector q = uniform_joints(geo, 150.0);
  q(0) = 160.0;
  EXPECT_EQ(clamp_to_bounds(q, geo)(0), 150.0);
}

TEST(ClampToBounds, AdversarialInputsLandInFeasibleSet) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> wide(-50.0, 250.0);
  for (int trial = 0; trial < 1000; ++trial) {
    JointVector q(geo.n_joints());
    for (int k = 0; k < q.size(); ++k) q(k) = wide(rng);
    const JointVector c = clamp_to_bounds(q, geo);
    for (int i = 0; i < geo.n_segments; ++i) {
      const double l = c(2 * i), r = c(2 * i + 1);
      EXPECT_GE(l, geo.f_min(r) - 1e-9);
      EXPECT_LE(l, geo.f_max(r) + 1e-9);
      EXPECT_GE(r, geo.f_min(l) - 1e-9);
      EXPECT_LE(r, geo.f_max(l) + 1e-9);
      EXPECT_GE(l, geo.q_min);
      EXPECT_LE(l, geo.q_max);
    }
    EXPECT_EQ(clamp_to_bounds(c, geo), c);
  }
}

TEST(RobotGeometry, RejectsCrossingBounds) {
  auto geo = RobotGeometry::make_default();
  EXPECT_NO_THROW(geo.validate());
  geo.bound_min = Polynomial{{50.0, 1.0}};
  geo.bound_max = Polynomial{{-50.0, 1.0}};
  EXPECT_THROW(geo.validate(), InvalidInput);
  geo = RobotGeometry::make_default();
  geo.width[2] = 0.0;
  EXPECT_THROW(geo.validate(), InvalidInput);
}

TEST(JointsFromCurvature, RealizesRequestedBend) {
  const auto geo = RobotGeometry::make_default();
  const std::vector<double> th{0.1, -0.2, 0.3, -0.4, 0.5};
  const JointVector q = joints_from_curvature(geo, th, 80.0);
  const auto s = forward_kinematics(q, geo);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(s.local[i].theta, th[i], 1e-12);
}
