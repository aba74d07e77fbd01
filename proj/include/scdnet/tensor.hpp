// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace scdnet {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Raised by any op whose inputs violate its shape contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Mat& m);

namespace detail {

struct Node {
  Mat value;
  Mat grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

}  // namespace detail

/// A 2-D tensor handle with optional gradient. Copies share the same node.
/// Scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Mat value);
  static Tensor parameter(Mat value);

  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient buffer; zeros when nothing has been accumulated.
  Mat grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  double item() const;

  bool defined() const { return static_cast<bool>(node_); }
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const { return node_; }

  /// Builds an op result. Records the backward closure only when grad mode is
  /// on and at least one input requires a gradient.
  static Tensor from_op(Mat value, std::vector<Tensor> inputs,
                        std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Reverse pass from a scalar loss. Leaves accumulate into their grad; the
/// recorded graph is released afterwards.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace scdnet
