// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "textrec/rng.hpp"
#include "textrec/tensor.hpp"

namespace textrec {

/// Ordered registry of trainable tensors keyed by dotted path names.
/// Registration order is the serialisation order.
template <typename Scalar>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> tensor;
  };

  /// Registers `value` (marked as requiring grad) under `name`; names must
  /// be unique.
  Tensor<Scalar> add(std::string name, Tensor<Scalar> value);

  Tensor<Scalar> uniform(std::string name, Shape shape, double bound, Rng& rng);
  Tensor<Scalar> normal(std::string name, Shape shape, double stddev, Rng& rng);
  Tensor<Scalar> constant(std::string name, Shape shape, double fill);

  bool contains(const std::string& name) const;
  Tensor<Scalar> find(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  Index scalar_count() const;
  void zero_grads();

 private:
  std::vector<Entry> entries_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace textrec
