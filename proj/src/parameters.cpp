// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/parameters.hpp"

#include <algorithm>

#include "textrec/errors.hpp"

namespace textrec {

template <typename Scalar>
Tensor<Scalar> ParameterStore<Scalar>::add(std::string name, Tensor<Scalar> value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor<Scalar> param(value.shape(), value.value(), true);
  entries_.push_back({std::move(name), param});
  return param;
}

template <typename Scalar>
Tensor<Scalar> ParameterStore<Scalar>::uniform(std::string name, Shape shape, double bound,
                                               Rng& rng) {
  typename Tensor<Scalar>::Array v(shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  return add(std::move(name), Tensor<Scalar>(std::move(shape), std::move(v)));
}

template <typename Scalar>
Tensor<Scalar> ParameterStore<Scalar>::normal(std::string name, Shape shape, double stddev,
                                              Rng& rng) {
  typename Tensor<Scalar>::Array v(shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return add(std::move(name), Tensor<Scalar>(std::move(shape), std::move(v)));
}

template <typename Scalar>
Tensor<Scalar> ParameterStore<Scalar>::constant(std::string name, Shape shape, double fill) {
  return add(std::move(name), Tensor<Scalar>::full(std::move(shape), static_cast<Scalar>(fill)));
}

template <typename Scalar>
bool ParameterStore<Scalar>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

template <typename Scalar>
Tensor<Scalar> ParameterStore<Scalar>::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ConfigError("unknown parameter '" + name + "'");
}

template <typename Scalar>
Index ParameterStore<Scalar>::scalar_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename Scalar>
void ParameterStore<Scalar>::zero_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace textrec
