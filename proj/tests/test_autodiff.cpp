// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "shapectl/autodiff.hpp"
#include "shapectl/errors.hpp"

using shapectl::ad::Mat;
using shapectl::ad::Tape;
using shapectl::ad::Var;

namespace {

Mat random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Builds a scalar from the inputs and checks every input gradient against
// central differences.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

void check_gradients(const Builder& build, std::vector<Mat> inputs, double tol = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const Mat& m : inputs) vars.push_back(tape.variable(m));
  const Var out = build(tape, vars);
  ASSERT_EQ(tape.value(out).size(), 1);
  tape.backward(out);

  auto eval = [&](const std::vector<Mat>& in) {
    Tape t;
    std::vector<Var> v;
    for (const Mat& m : in) v.push_back(t.constant(m));
    return t.value(build(t, v))(0, 0);
  };
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Mat g = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      EXPECT_NEAR(g.data()[i], fd, tol * std::max(1.0, std::abs(fd))) << "input " << k << " entry " << i;
    }
  }
}

// Weighted sum so every output entry carries a distinct adjoint.
Var reduce(Tape& t, Var v) {
  std::mt19937_64 rng(99);
  const Mat& val = t.value(v);
  return t.sum(t.mul(v, t.constant(random_mat(static_cast<int>(val.rows()),
                                              static_cast<int>(val.cols()), rng))));
}

}  // namespace

TEST(Autodiff, ElementwiseOps) {
  std::mt19937_64 rng(1);
  const Mat a = random_mat(4, 3, rng), b = random_mat(4, 3, rng);
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.add(v[0], v[1])); }, {a, b});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.sub(v[0], v[1])); }, {a, b});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.mul(v[0], v[1])); }, {a, b});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.scale(v[0], -1.7)); }, {a});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.add_scalar(v[0], 2.5)); }, {a});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.one_minus(v[0])); }, {a});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.gelu(v[0])); }, {a});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.sigmoid(v[0])); }, {a});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.tanh(v[0])); }, {a});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.sin(v[0])); }, {a});
  check_gradients([](Tape& t, const std::vector<Var>& v) { return reduce(t, t.cos(v[0])); }, {a});
}

TEST(Autodiff, LinearAlgebraOps) {
  std::mt19937_64 rng(2);
  const Mat w = random_mat(5, 4, rng), x = random_mat(4, 3, rng), b = random_mat(5, 1, rng);
  check_gradients(
      [](Tape& t, const std::vector<Var>& v) { return reduce(t, t.add_bias(t.matmul(v[0], v[1]), v[2])); },
      {w, x, b});
  const Eigen::VectorXd s = Eigen::Vector4d(0.5, -2.0, 3.0, 1.0);
  check_gradients([&](Tape& t, const std::vector<Var>& v) { return reduce(t, t.scale_rows(v[0], s)); }, {x});
  check_gradients(
      [](Tape& t, const std::vector<Var>& v) {
        return reduce(t, t.concat_rows({t.slice_rows(v[0], 1, 2), v[1], t.slice_rows(v[0], 0, 1)}));
      },
      {x, random_mat(2, 3, rng)});
}

TEST(Autodiff, LayerNorm) {
  std::mt19937_64 rng(3);
  const Mat x = random_mat(6, 4, rng), g = random_mat(6, 1, rng), b = random_mat(6, 1, rng);
  check_gradients(
      [](Tape& t, const std::vector<Var>& v) { return reduce(t, t.layer_norm(v[0], v[1], v[2])); },
      {x, g, b});

  Tape t;
  const Var y = t.layer_norm(t.constant(x), t.constant(Mat::Ones(6, 1)), t.constant(Mat::Zero(6, 1)));
  const Mat& yv = t.value(y);
  for (Eigen::Index c = 0; c < yv.cols(); ++c) {
    EXPECT_NEAR(yv.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(yv.col(c).squaredNorm() / 6.0, 1.0, 1e-3);
  }
}

TEST(Autodiff, HuberMatchesPiecewiseDefinition) {
  Tape t;
  Mat a(2, 3);
  a << 0.5, -3.0, 1.0, 0.01, -0.05, 0.02;
  const Eigen::Vector2d w(2.0, 10.0), d(1.0, 0.02);
  const Var s = t.huber_sum(t.constant(a), w, d);
  auto huber = [](double r, double delta) {
    return std::abs(r) <= delta ? 0.5 * r * r : delta * (std::abs(r) - 0.5 * delta);
  };
  double expect = 0.0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) expect += w(r) * huber(a(r, c), d(r));
  EXPECT_NEAR(t.value(s)(0, 0), expect, 1e-15);
  // The quadratic and linear branches meet at |r| = delta.
  EXPECT_NEAR(huber(1.0, 1.0), 0.5, 1e-15);

  std::mt19937_64 rng(4);
  check_gradients(
      [&](Tape& tp, const std::vector<Var>& v) { return tp.huber_sum(v[0], w, d); },
      {random_mat(2, 5, rng, 0.7)});
}

TEST(Autodiff, SharedNodesAccumulate) {
  Tape t;
  Mat x0(1, 1);
  x0 << 3.0;
  const Var x = t.variable(x0);
  const Var y = t.sum(t.add(t.mul(x, x), x));  // x^2 + x
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Autodiff, ParamSinkReceivesAdjoint) {
  Mat w(2, 2);
  w << 1, 2, 3, 4;
  Mat sink = Mat::Zero(2, 2);
  Tape t;
  const Var p = t.param(w, &sink);
  Mat x(2, 1);
  x << 1.0, -1.0;
  t.backward(t.sum(t.matmul(p, t.constant(x))));
  Mat expect(2, 2);
  expect << 1, -1, 1, -1;
  EXPECT_TRUE(sink.isApprox(expect));

  Mat untouched = Mat::Zero(2, 2);
  Tape t2;
  const Var frozen = t2.param(w, nullptr);
  EXPECT_FALSE(t2.requires_grad(frozen));
  t2.backward(t2.sum(t2.matmul(frozen, t2.constant(x))));
  EXPECT_TRUE(untouched.isZero());
}

TEST(Autodiff, ShapeMismatchAndRepeatedBackwardAreRejected) {
  Tape t;
  const Var a = t.variable(Mat::Ones(2, 2));
  const Var b = t.variable(Mat::Ones(3, 2));
  EXPECT_THROW(t.add(a, b), shapectl::InvalidInput);
  EXPECT_THROW(t.matmul(a, b), shapectl::InvalidInput);
  const Var s = t.sum(a);
  t.backward(s);
  EXPECT_THROW(t.backward(s), shapectl::UsageError);
}
