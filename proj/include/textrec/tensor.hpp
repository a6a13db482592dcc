// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace textrec {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Number of elements described by `shape`; the empty shape is a scalar.
Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// True unless a NoGradGuard is alive on the calling thread.
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

/// Dense row-major N-d array that may take part in reverse-mode
/// differentiation. Copies are shallow: two Tensor handles made by copying
/// refer to the same storage and gradient.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  struct Node {
    Shape shape;
    Array value;
    Array grad;  // empty until a gradient arrives
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    template <typename Derived>
    void accumulate(const Eigen::ArrayBase<Derived>& g) {
      if (grad.size() == 0) {
        grad = g;
      } else {
        grad += g;
      }
    }
  };

  Tensor() = default;
  Tensor(Shape shape, Array value, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar fill, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values,
                            bool requires_grad = false);
  static Tensor scalar(Scalar v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  /// Extent along `axis`; negative axes count from the back.
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Array& value() const { return node_->value; }
  /// Direct access for initialisation and optimiser updates.
  Array& mutable_value() { return node_->value; }
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Accumulated gradient, or zeros when none has arrived.
  Array grad() const;
  void zero_grad() { node_->grad.resize(0); }

  /// Reverse pass from this scalar. Leaf gradients accumulate across calls;
  /// interior gradients are recomputed each call.
  void backward() const;

  /// Same values, detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace textrec
