// SPDX-License-Identifier: Apache-2.0
#include "shapectl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "shapectl/errors.hpp"

namespace shapectl::ad {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput(std::string("autodiff: shape mismatch in ") + op);
}

}  // namespace

Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Mat value) { return push(std::move(value), true, nullptr); }

Var Tape::param(const Mat& value, Mat* grad_sink) {
  Node n;
  n.external = &value;
  n.grad_sink = grad_sink;
  n.requires_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.external ? *n.external : n.value;
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) {
    const Mat& val = value(v);
    return Mat::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs)
    if (nodes_[v.id].requires_grad) return true;
  return false;
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::clear() {
  nodes_.clear();
  backward_done_ = false;
}

Var Tape::matmul(Var w, Var x) {
  const Mat& a = value(w);
  const Mat& b = value(x);
  if (a.cols() != b.rows()) throw InvalidInput("autodiff: matmul inner dimensions differ");
  const int out = static_cast<int>(nodes_.size());
  Mat v;
  v.noalias() = a * b;
  return push(std::move(v), any_grad({w, x}), [w, x, out](Tape& t) {
    const Mat& g = t.gref(out);
    if (t.nodes_[w.id].requires_grad) t.accumulate(w.id, g * t.value(x).transpose());
    if (t.nodes_[x.id].requires_grad) t.accumulate(x.id, t.value(w).transpose() * g);
  });
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  const int out = static_cast<int>(nodes_.size());
  return push(value(a) + value(b), any_grad({a, b}), [a, b, out](Tape& t) {
    t.accumulate(a.id, t.gref(out));
    t.accumulate(b.id, t.gref(out));
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  const int out = static_cast<int>(nodes_.size());
  return push(value(a) - value(b), any_grad({a, b}), [a, b, out](Tape& t) {
    t.accumulate(a.id, t.gref(out));
    t.accumulate(b.id, -t.gref(out));
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  const int out = static_cast<int>(nodes_.size());
  return push(value(a).cwiseProduct(value(b)), any_grad({a, b}), [a, b, out](Tape& t) {
    const Mat& g = t.gref(out);
    if (t.nodes_[a.id].requires_grad) t.accumulate(a.id, g.cwiseProduct(t.value(b)));
    if (t.nodes_[b.id].requires_grad) t.accumulate(b.id, g.cwiseProduct(t.value(a)));
  });
}

Var Tape::scale(Var a, double s) {
  const int out = static_cast<int>(nodes_.size());
  return push(value(a) * s, any_grad({a}),
              [a, s, out](Tape& t) { t.accumulate(a.id, t.gref(out) * s); });
}

Var Tape::add_scalar(Var a, double s) {
  const int out = static_cast<int>(nodes_.size());
  return push(value(a).array() + s, any_grad({a}),
              [a, out](Tape& t) { t.accumulate(a.id, t.gref(out)); });
}

Var Tape::one_minus(Var a) {
  const int out = static_cast<int>(nodes_.size());
  return push(1.0 - value(a).array(), any_grad({a}),
              [a, out](Tape& t) { t.accumulate(a.id, -t.gref(out)); });
}

Var Tape::add_bias(Var x, Var b) {
  const Mat& xv = value(x);
  const Mat& bv = value(b);
  if (bv.cols() != 1 || bv.rows() != xv.rows())
    throw InvalidInput("autodiff: bias must be a column matching the rows");
  const int out = static_cast<int>(nodes_.size());
  Mat v = xv.colwise() + bv.col(0);
  return push(std::move(v), any_grad({x, b}), [x, b, out](Tape& t) {
    const Mat& g = t.gref(out);
    t.accumulate(x.id, g);
    if (t.nodes_[b.id].requires_grad) t.accumulate(b.id, g.rowwise().sum());
  });
}

Var Tape::scale_rows(Var x, const Eigen::VectorXd& s) {
  const Mat& xv = value(x);
  if (s.size() != xv.rows()) throw InvalidInput("autodiff: row scale size mismatch");
  const int out = static_cast<int>(nodes_.size());
  Mat v = s.asDiagonal() * xv;
  return push(std::move(v), any_grad({x}),
              [x, s, out](Tape& t) { t.accumulate(x.id, s.asDiagonal() * t.gref(out)); });
}

Var Tape::gelu(Var a) {
  const Mat& x = value(a);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Mat v = x.unaryExpr([&](double u) { return 0.5 * u * (1.0 + std::erf(u * inv_sqrt2)); });
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), any_grad({a}), [a, out, inv_sqrt2](Tape& t) {
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const Mat d = t.value(a).unaryExpr([&](double u) {
      return 0.5 * (1.0 + std::erf(u * inv_sqrt2)) + u * inv_sqrt_2pi * std::exp(-0.5 * u * u);
    });
    t.accumulate(a.id, t.gref(out).cwiseProduct(d));
  });
}

Var Tape::sigmoid(Var a) {
  Mat v = value(a).unaryExpr([](double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
  });
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), any_grad({a}), [a, out](Tape& t) {
    const Mat& y = t.value(Var{out});
    t.accumulate(a.id, t.gref(out).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var Tape::tanh(Var a) {
  Mat v = value(a).array().tanh();
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), any_grad({a}), [a, out](Tape& t) {
    const Mat& y = t.value(Var{out});
    t.accumulate(a.id, t.gref(out).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var Tape::sin(Var a) {
  const int out = static_cast<int>(nodes_.size());
  return push(value(a).array().sin(), any_grad({a}), [a, out](Tape& t) {
    t.accumulate(a.id, t.gref(out).cwiseProduct(t.value(a).array().cos().matrix()));
  });
}

Var Tape::cos(Var a) {
  const int out = static_cast<int>(nodes_.size());
  return push(value(a).array().cos(), any_grad({a}), [a, out](Tape& t) {
    t.accumulate(a.id, -t.gref(out).cwiseProduct(t.value(a).array().sin().matrix()));
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Mat& xv = value(x);
  const Mat& gv = value(gamma);
  const Mat& bv = value(beta);
  const Eigen::Index n = xv.rows();
  if (gv.rows() != n || bv.rows() != n || gv.cols() != 1 || bv.cols() != 1)
    throw InvalidInput("autodiff: layer_norm parameter shape mismatch");
  const Eigen::RowVectorXd mean = xv.colwise().mean();
  Mat centered = xv.rowwise() - mean;
  const Eigen::RowVectorXd inv_std =
      ((centered.array().square().colwise().sum() / static_cast<double>(n)) + eps).rsqrt();
  Mat xhat = centered.array().rowwise() * inv_std.array();
  Mat v = (xhat.array().colwise() * gv.col(0).array()).colwise() + bv.col(0).array();
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), any_grad({x, gamma, beta}),
              [x, gamma, beta, out, xhat = std::move(xhat), inv_std](Tape& t) {
                const Mat& g = t.gref(out);
                if (t.nodes_[gamma.id].requires_grad)
                  t.accumulate(gamma.id, g.cwiseProduct(xhat).rowwise().sum());
                if (t.nodes_[beta.id].requires_grad) t.accumulate(beta.id, g.rowwise().sum());
                if (t.nodes_[x.id].requires_grad) {
                  const Mat gx = g.array().colwise() * t.value(gamma).col(0).array();
                  const Eigen::RowVectorXd m1 = gx.colwise().mean();
                  const Eigen::RowVectorXd m2 = gx.cwiseProduct(xhat).colwise().mean();
                  Mat dx = gx.rowwise() - m1;
                  dx -= (xhat.array().rowwise() * m2.array()).matrix();
                  dx = dx.array().rowwise() * inv_std.array();
                  t.accumulate(x.id, dx);
                }
              });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("autodiff: concat of nothing");
  const Eigen::Index cols = value(parts.front()).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw InvalidInput("autodiff: concat column mismatch");
    rows += value(p).rows();
    rg = rg || nodes_[p.id].requires_grad;
  }
  Mat v(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    v.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), rg, [parts, out](Tape& t) {
    const Mat& g = t.gref(out);
    Eigen::Index r0 = 0;
    for (Var p : parts) {
      const Eigen::Index k = t.value(p).rows();
      if (t.nodes_[p.id].requires_grad) t.accumulate(p.id, g.middleRows(r0, k));
      r0 += k;
    }
  });
}

Var Tape::slice_rows(Var a, int start, int count) {
  const Mat& av = value(a);
  if (start < 0 || count < 0 || start + count > av.rows())
    throw InvalidInput("autodiff: slice out of range");
  const int out = static_cast<int>(nodes_.size());
  return push(av.middleRows(start, count), any_grad({a}), [a, start, count, out](Tape& t) {
    const Mat& src = t.value(a);
    Mat g = Mat::Zero(src.rows(), src.cols());
    g.middleRows(start, count) = t.gref(out);
    t.accumulate(a.id, g);
  });
}

Var Tape::huber_sum(Var a, const Eigen::VectorXd& weight, const Eigen::VectorXd& delta) {
  const Mat& av = value(a);
  if (weight.size() != av.rows() || delta.size() != av.rows())
    throw InvalidInput("autodiff: huber weights must match the rows");
  double acc = 0.0;
  for (Eigen::Index c = 0; c < av.cols(); ++c) {
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
      const double e = std::abs(av(r, c));
      const double d = delta(r);
      acc += weight(r) * (e <= d ? 0.5 * e * e : d * (e - 0.5 * d));
    }
  }
  const int out = static_cast<int>(nodes_.size());
  return push(Mat::Constant(1, 1, acc), any_grad({a}), [a, weight, delta, out](Tape& t) {
    const double g = t.gref(out)(0, 0);
    const Mat& av2 = t.value(a);
    Mat d(av2.rows(), av2.cols());
    for (Eigen::Index c = 0; c < av2.cols(); ++c)
      for (Eigen::Index r = 0; r < av2.rows(); ++r)
        d(r, c) = g * weight(r) * std::clamp(av2(r, c), -delta(r), delta(r));
    t.accumulate(a.id, d);
  });
}

Var Tape::sum(Var a) {
  const int out = static_cast<int>(nodes_.size());
  return push(Mat::Constant(1, 1, value(a).sum()), any_grad({a}), [a, out](Tape& t) {
    const Mat& av = t.value(a);
    t.accumulate(a.id, Mat::Constant(av.rows(), av.cols(), t.gref(out)(0, 0)));
  });
}

void Tape::backward(Var root) {
  const Mat& v = value(root);
  if (v.rows() != 1 || v.cols() != 1) throw UsageError("autodiff: backward root must be scalar");
  backward({{root, Mat::Ones(1, 1)}});
}

void Tape::backward(const std::vector<std::pair<Var, Mat>>& seeds) {
  if (backward_done_) throw UsageError("autodiff: backward already ran on this tape");
  for (const auto& [v, g] : seeds) {
    check_same_shape(value(v), g, "backward seed");
    accumulate(v.id, g);
  }
  run_backward();
  backward_done_ = true;
}

void Tape::run_backward() {
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backprop) n.backprop(*this);
  }
  for (Node& n : nodes_) {
    if (n.grad_sink && n.grad.size() != 0) {
      if (n.grad_sink->size() == 0)
        *n.grad_sink = n.grad;
      else
        *n.grad_sink += n.grad;
    }
  }
}

}  // namespace shapectl::ad
