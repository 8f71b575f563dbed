// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "shapectl/errors.hpp"
#include "shapectl/plant.hpp"
#include "test_util.hpp"

using namespace shapectl;

namespace {

DisturbanceProfile coupling_only(double gain, double stiffening = 0.0) {
  DisturbanceProfile p;
  p.coupling_gain = gain;
  p.coupling_stiffening = stiffening;
  return p;
}

// Reference blend rule written from scratch: segment i's differential
// extension is shifted by gain * c_i * sum_{j != i} s(i, j) 0.5^|i-j| load_j,
// with s = +1 for proximal sources and -1 for distal ones.
std::vector<double> reference_local_theta(const JointVector& q, double gain, double stiff,
                                          const RobotGeometry& geo) {
  const int n = geo.n_segments;
  std::vector<double> th(n), out(n);
  for (int j = 0; j < n; ++j) th[j] = (q(2 * j) - q(2 * j + 1)) / geo.width[j];
  for (int i = 0; i < n; ++i) {
    double shift = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double load = th[j] + stiff * std::pow(th[j], 9) / 9.0;
      const double sign = j < i ? 1.0 : -1.0;
      shift += sign * std::pow(0.5, std::abs(i - j)) * load;
    }
    out[i] = th[i] + gain * shift;
  }
  return out;
}

}  // namespace

TEST(Plant, ZeroProfileMatchesKinematicsBitForBit) {
  const auto geo = RobotGeometry::make_default();
  const auto profile = DisturbanceProfile::zero();
  std::mt19937_64 rng(21);
  std::normal_distribution<double> step(0.0, 3.0);
  for (int rollout = 0; rollout < 1000; ++rollout) {
    PlantState s = plant_reset(testutil::random_feasible(geo, rng), profile, geo);
    for (int t = 0; t < 5; ++t) {
      Eigen::VectorXd dq(geo.n_joints());
      for (int k = 0; k < dq.size(); ++k) dq(k) = step(rng);
      const JointVector expected_q = clamp_to_bounds(s.q + dq, geo);
      s = plant_step(s, dq, profile, geo);
      ASSERT_EQ(s.q, expected_q);
      const auto fk = forward_kinematics(expected_q, geo);
      for (int k = 0; k < geo.n_segments; ++k) {
        ASSERT_EQ(s.shape.global[k].x, fk.global[k].x);
        ASSERT_EQ(s.shape.global[k].y, fk.global[k].y);
        ASSERT_EQ(s.shape.global[k].theta, fk.global[k].theta);
      }
    }
  }
}

TEST(Plant, ZeroCommandIsFixedPoint) {
  const auto geo = RobotGeometry::make_default();
  PlantState s = plant_reset(uniform_joints(geo, 90.0), DisturbanceProfile::zero(), geo);
  const PlantState n = plant_step(s, Eigen::VectorXd::Zero(10), DisturbanceProfile::zero(), geo);
  EXPECT_EQ(n.q, s.q);
  EXPECT_EQ(n.step_index, s.step_index + 1);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(n.shape.tip().x, s.shape.tip().x);
}

TEST(Plant, CouplingMatchesReferenceAndDecaysGeometrically) {
  const auto geo = RobotGeometry::make_default();
  const double gain = 0.2;
  const auto profile = coupling_only(gain);
  JointVector q = uniform_joints(geo, 80.0);
  PlantState s0 = plant_reset(q, profile, geo);
  Eigen::VectorXd dq = Eigen::VectorXd::Zero(10);
  dq(8) = 4.0;
  dq(9) = -4.0;
  const PlantState s1 = plant_step(s0, dq, profile, geo);
  const auto ref0 = reference_local_theta(s0.q, gain, 0.0, geo);
  const auto ref1 = reference_local_theta(s1.q, gain, 0.0, geo);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(s0.shape.local[i].theta, ref0[i], 1e-12);
    EXPECT_NEAR(s1.shape.local[i].theta, ref1[i], 1e-12);
  }
  std::vector<double> moved(4);
  for (int i = 0; i < 4; ++i) {
    moved[i] = std::abs(s1.shape.local[i].theta - s0.shape.local[i].theta);
    EXPECT_GT(moved[i], 0.0);
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(moved[i] / moved[i + 1], 0.5, 1e-9);
  // Proximal node positions move as a consequence.
  EXPECT_GT(std::hypot(s1.shape.global[0].x - s0.shape.global[0].x,
                       s1.shape.global[0].y - s0.shape.global[0].y),
            0.0);
}

TEST(Plant, CouplingWithStiffeningMatchesReference) {
  const auto geo = RobotGeometry::make_default();
  std::mt19937_64 rng(22);
  const auto profile = coupling_only(0.3, 12.0);
  for (int trial = 0; trial < 50; ++trial) {
    const JointVector q = testutil::random_feasible(geo, rng);
    const PlantState s = plant_reset(q, profile, geo);
    const auto ref = reference_local_theta(q, 0.3, 12.0, geo);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(s.shape.local[i].theta, ref[i], 1e-12);
  }
}

TEST(Plant, CouplingActsInBothDirections) {
  const auto geo = RobotGeometry::make_default();
  const auto profile = coupling_only(0.3);
  const PlantState s0 = plant_reset(uniform_joints(geo, 80.0), profile, geo);
  Eigen::VectorXd dq = Eigen::VectorXd::Zero(10);
  dq(4) = 3.0;
  dq(5) = -3.0;
  const PlantState s1 = plant_step(s0, dq, profile, geo);
  for (int i : {0, 1, 3, 4})
    EXPECT_GT(std::abs(s1.shape.local[i].theta - s0.shape.local[i].theta), 1e-6) << i;
}

TEST(Plant, HysteresisMemoryDecays) {
  const auto geo = RobotGeometry::make_default();
  DisturbanceProfile p;
  p.hysteresis_decay = 0.7;
  PlantState s = plant_reset(uniform_joints(geo, 80.0), p, geo);
  Eigen::VectorXd dq = Eigen::VectorXd::Constant(10, 1.5);
  s = plant_step(s, dq, p, geo);
  const double m0 = s.hysteresis_memory.norm();
  ASSERT_GT(m0, 0.0);
  for (int k = 1; k <= 40; ++k) {
    s = plant_step(s, Eigen::VectorXd::Zero(10), p, geo);
    if (k >= 30) {
      EXPECT_LT(s.hysteresis_memory.norm(), std::pow(0.7, k) * m0 + 1e-12);
    }
  }
}

TEST(Plant, HysteresisDelaysResponse) {
  const auto geo = RobotGeometry::make_default();
  DisturbanceProfile p;
  p.hysteresis_decay = 0.5;
  PlantState s = plant_reset(uniform_joints(geo, 80.0), p, geo);
  Eigen::VectorXd dq = Eigen::VectorXd::Constant(10, 2.0);
  s = plant_step(s, dq, p, geo);
  EXPECT_LT(s.q_effective(0), s.q(0));
  for (int k = 0; k < 60; ++k) s = plant_step(s, Eigen::VectorXd::Zero(10), p, geo);
  EXPECT_NEAR(s.q_effective(0), s.q(0), 1e-12);
}

TEST(Plant, FrictionBacklashNearNeutralOnly) {
  const auto geo = RobotGeometry::make_default();
  DisturbanceProfile p;
  p.friction_scale = 2.0;
  p.neutral_width = 0.15;
  // Straight chain: a differential command is partly swallowed by the play.
  PlantState s = plant_reset(uniform_joints(geo, 80.0), p, geo);
  Eigen::VectorXd dq = Eigen::VectorXd::Zero(10);
  dq(0) = 0.5;
  dq(1) = -0.5;
  const PlantState n = plant_step(s, dq, p, geo);
  const double commanded = (n.q(0) - n.q(1)) / 40.0;
  EXPECT_LT(std::abs(n.shape.local[0].theta), std::abs(commanded));
  // Far from neutral the play has no effect.
  std::vector<double> th(5, 0.6);
  PlantState b = plant_reset(joints_from_curvature(geo, th, 80.0), p, geo);
  const PlantState bn = plant_step(b, dq, p, geo);
  EXPECT_NEAR(bn.shape.local[0].theta, (bn.q(0) - bn.q(1)) / 40.0, 1e-12);
}

TEST(Plant, DeterministicTrajectories) {
  const auto geo = RobotGeometry::make_default();
  const auto p = DisturbanceProfile::full();
  auto run = [&]() {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> step(0.0, 2.0);
    PlantState s = plant_reset(uniform_joints(geo, 70.0), p, geo);
    std::vector<double> trace;
    for (int t = 0; t < 100; ++t) {
      Eigen::VectorXd dq(10);
      for (int k = 0; k < 10; ++k) dq(k) = step(rng);
      s = plant_step(s, dq, p, geo);
      const auto o = observe(s, p);
      trace.push_back(o.tip().x);
      trace.push_back(s.shape.tip().y);
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Plant, CommandsAreClampedNotRejected) {
  const auto geo = RobotGeometry::make_default();
  PlantState s = plant_reset(uniform_joints(geo, 140.0), DisturbanceProfile::full(), geo);
  s = plant_step(s, Eigen::VectorXd::Constant(10, 50.0), DisturbanceProfile::full(), geo);
  EXPECT_TRUE(within_bounds(s.q, geo));
  EXPECT_THROW(plant_step(s, Eigen::VectorXd::Constant(9, 0.0), DisturbanceProfile::full(), geo),
               InvalidInput);
}

TEST(Observe, NoiselessIsTruth) {
  const auto geo = RobotGeometry::make_default();
  auto p = DisturbanceProfile::full();
  p.noise_std = 0.0;
  const PlantState s = plant_reset(uniform_joints(geo, 90.0), p, geo);
  const auto o = observe(s, p);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(o.global[k].x, s.shape.global[k].x);
    EXPECT_EQ(o.global[k].y, s.shape.global[k].y);
  }
}

TEST(Observe, DeterministicPerStep) {
  const auto geo = RobotGeometry::make_default();
  auto p = DisturbanceProfile::full();
  PlantState s = plant_reset(uniform_joints(geo, 90.0), p, geo);
  const auto a = observe(s, p), b = observe(s, p);
  EXPECT_EQ(a.tip().x, b.tip().x);
  s.step_index = 1;
  EXPECT_NE(observe(s, p).tip().x, a.tip().x);
}

TEST(Observe, NoiseVarianceMatchesConfiguration) {
  const auto geo = RobotGeometry::make_default();
  DisturbanceProfile p;
  p.noise_std = 1.0;
  p.seed = 99;
  PlantState s = plant_reset(uniform_joints(geo, 90.0), p, geo);
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  for (long step = 0; n < 100000; ++step) {
    s.step_index = step;
    const auto o = observe(s, p);
    for (int k = 0; k < 5; ++k) {
      for (double e : {o.global[k].x - s.shape.global[k].x, o.global[k].y - s.shape.global[k].y}) {
        sum += e;
        sum2 += e * e;
        ++n;
      }
    }
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(DisturbanceProfile, Validation) {
  auto p = DisturbanceProfile::full();
  EXPECT_NO_THROW(p.validate());
  p.hysteresis_decay = 1.0;
  EXPECT_THROW(p.validate(), InvalidInput);
  p = DisturbanceProfile::full();
  p.coupling_gain = -0.1;
  EXPECT_THROW(p.validate(), InvalidInput);
}
