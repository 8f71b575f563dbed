// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense matrices. Every value is a
// (features x batch) matrix; a Tape records operations in execution order and
// replays their adjoints backwards.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace shapectl::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient.
  Var constant(Mat value);
  /// Leaf whose gradient is readable through grad() after backward().
  Var variable(Mat value);
  /// Leaf referencing an external parameter. `value` must outlive the tape;
  /// backward() adds the adjoint into `*grad_sink` when it is non-null.
  Var param(const Mat& value, Mat* grad_sink);

  const Mat& value(Var v) const;
  /// Adjoint of `v`; a zero matrix when nothing flowed into it.
  Mat grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Var matmul(Var w, Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var one_minus(Var a);
  /// x + b with b a column broadcast across the batch.
  Var add_bias(Var x, Var b);
  /// Row-wise scaling by a fixed column vector.
  Var scale_rows(Var x, const Eigen::VectorXd& s);
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var sin(Var a);
  Var cos(Var a);
  /// Column-wise layer normalization with learned gain and shift.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, int start, int count);
  /// Scalar sum over all entries of w_r * huber_{delta_r}(a), r the row index.
  Var huber_sum(Var a, const Eigen::VectorXd& weight, const Eigen::VectorXd& delta);
  /// Scalar sum over all entries.
  Var sum(Var a);

  /// Seeds d(root) = 1 for a 1x1 root.
  void backward(Var root);
  /// Seeds the given adjoints (pairs of output and matching-shape seed).
  void backward(const std::vector<std::pair<Var, Mat>>& seeds);

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    Mat* grad_sink = nullptr;
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;
  };

  Var push(Mat value, bool requires_grad, std::function<void(Tape&)> backprop);
  void accumulate(int id, const Mat& g);
  const Mat& gref(int id) const { return nodes_[id].grad; }
  bool any_grad(std::initializer_list<Var> vs) const;
  void run_backward();

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace shapectl::ad
