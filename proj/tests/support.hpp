// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Shared test helpers: random tensors, a central-difference gradient check
// and a brute-force attention oracle written against plain Eigen matrices,
// independent of the tensor ops under test.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "textrec/layers.hpp"
#include "textrec/rng.hpp"

namespace testing {

using textrec::Index;
using textrec::Shape;
using textrec::Tensor;

/// Fresh, empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("textrec_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename S>
Tensor<S> random_tensor(const Shape& shape, textrec::Rng& rng, double scale = 1.0,
                        bool requires_grad = false) {
  typename Tensor<S>::Array v(textrec::shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.normal() * scale);
  return Tensor<S>(shape, v, requires_grad);
}

inline constexpr double kGradFloor = 1e-6;

struct GradReport {
  double max_relative = 0.0;  // worst input, ||analytic - numeric|| / max(norms, floor)
  int checked = 0;
};

/// Compares analytic gradients of sum(f() * R) with central differences
/// for every tensor in `inputs`; `f` must read the inputs' current values.
inline GradReport gradcheck(const std::function<Tensor<double>()>& f,
                            std::vector<Tensor<double>> inputs, textrec::Rng& rng,
                            double h = 1e-3) {
  const Tensor<double> probe = [&] {
    textrec::NoGradGuard guard;
    return f();
  }();
  const Tensor<double> r = random_tensor<double>(probe.shape(), rng);
  auto loss_value = [&] {
    textrec::NoGradGuard guard;
    return (f().value() * r.value()).sum();
  };

  for (auto& t : inputs) t.zero_grad();
  textrec::sum(textrec::mul(f(), r)).backward();

  GradReport report;
  for (auto& t : inputs) {
    const Eigen::ArrayXd analytic = t.grad();
    Eigen::ArrayXd numeric(t.size());
    for (Index i = 0; i < t.size(); ++i) {
      const double keep = t.value()[i];
      t.mutable_value()[i] = keep + h;
      const double up = loss_value();
      t.mutable_value()[i] = keep - h;
      const double down = loss_value();
      t.mutable_value()[i] = keep;
      numeric[i] = (up - down) / (2 * h);
    }
    // The floor keeps tensors whose true gradient is zero (key biases: softmax
    // ignores a per-row shift) from turning rounding noise into a ratio.
    const double scale = std::max({analytic.matrix().norm(), numeric.matrix().norm(), kGradFloor});
    report.max_relative =
        std::max(report.max_relative, (analytic - numeric).matrix().norm() / scale);
    ++report.checked;
  }
  return report;
}

/// Every parameter tensor of an attention block, for gradient checks.
template <typename S>
std::vector<Tensor<S>> block_tensors(const textrec::AttentionBlockParams<S>& p) {
  const auto& a = p.attention;
  return {a.query.weight,  a.query.bias,        a.key.weight,        a.key.bias,
          a.value.weight,  a.value.bias,        a.output.weight,     a.output.bias,
          p.attention_norm.gamma, p.attention_norm.beta, p.ffn.hidden.weight,
          p.ffn.hidden.bias, p.ffn.output.weight, p.ffn.output.bias, p.ffn_norm.gamma,
          p.ffn_norm.beta};
}

/// Pushes FFN pre-activations away from the ReLU kink so that a finite
/// difference step cannot cross it.
template <typename S>
void bias_away_from_kink(textrec::AttentionBlockParams<S>& p, textrec::Rng& rng) {
  auto& b = p.ffn.hidden.bias.mutable_value();
  for (Index i = 0; i < b.size(); ++i) b[i] = static_cast<S>(rng.uniform() < 0.5 ? -3.0 : 3.0);
}

// ---- brute-force oracle ----------------------------------------------------

using Mat = Eigen::MatrixXd;

template <typename S>
Mat as_matrix(const Tensor<S>& t, Index rows, Index cols, Index offset = 0) {
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(t.value()[offset + i * cols + j]);
  return m;
}

template <typename S>
Mat apply_linear(const Mat& x, const textrec::LinearParams<S>& p) {
  const Index in = p.weight.dim(0), out = p.weight.dim(1);
  Mat y = x * as_matrix(p.weight, in, out);
  if (p.bias.defined()) y.rowwise() += as_matrix(p.bias, 1, out).row(0);
  return y;
}

template <typename S>
Mat apply_norm(const Mat& x, const textrec::LayerNormParams<S>& p) {
  Mat y(x.rows(), x.cols());
  const Mat g = as_matrix(p.gamma, 1, x.cols()), b = as_matrix(p.beta, 1, x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    for (Index j = 0; j < x.cols(); ++j)
      y(i, j) = (x(i, j) - mean) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
  }
  return y;
}

/// Single-sequence attention: rows of q against rows of k/v, with blocked
/// cells excluded; a row with no visible key yields zeros.
inline Mat oracle_attention(const Mat& q, const Mat& k, const Mat& v,
                            const std::function<bool(Index, Index)>& blocked, Mat* weights) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat out = Mat::Zero(q.rows(), v.cols());
  Mat w = Mat::Zero(q.rows(), k.rows());
  for (Index i = 0; i < q.rows(); ++i) {
    double peak = -INFINITY;
    for (Index j = 0; j < k.rows(); ++j)
      if (!blocked(i, j)) peak = std::max(peak, q.row(i).dot(k.row(j)) * scale);
    if (peak == -INFINITY) continue;
    double total = 0.0;
    for (Index j = 0; j < k.rows(); ++j)
      if (!blocked(i, j)) total += w(i, j) = std::exp(q.row(i).dot(k.row(j)) * scale - peak);
    w.row(i) /= total;
    out.row(i) = w.row(i) * v;
  }
  if (weights) *weights = w;
  return out;
}

template <typename S>
Mat oracle_multi_head(const Mat& query, const Mat& memory,
                      const std::function<bool(Index, Index)>& blocked,
                      const textrec::MultiHeadParams<S>& p) {
  const Mat q = apply_linear(query, p.query), k = apply_linear(memory, p.key),
            v = apply_linear(memory, p.value);
  const Index d = q.cols() / p.heads;
  Mat joined(query.rows(), q.cols());
  for (Index h = 0; h < p.heads; ++h) {
    joined.middleCols(h * d, d) = oracle_attention(q.middleCols(h * d, d), k.middleCols(h * d, d),
                                                   v.middleCols(h * d, d), blocked, nullptr);
  }
  return apply_linear(joined, p.output);
}

template <typename S>
Mat oracle_block(const Mat& query, const Mat& memory,
                 const std::function<bool(Index, Index)>& blocked,
                 const textrec::AttentionBlockParams<S>& p) {
  const Mat y = apply_norm<S>(query + oracle_multi_head(query, memory, blocked, p.attention),
                              p.attention_norm);
  const Mat hidden = apply_linear(y, p.ffn.hidden).cwiseMax(0.0);
  return apply_norm<S>(y + apply_linear(hidden, p.ffn.output), p.ffn_norm);
}

inline bool causal(Index i, Index j) { return j > i; }
inline bool open(Index, Index) { return false; }

}  // namespace testing
