// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "textrec/tensor.hpp"

namespace textrec {

/// Boolean Lq x Lk attention mask; `true` cells are blocked.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(Index rows, Index cols) : rows_(rows), cols_(cols), blocked_(rows * cols, 0) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  bool blocked(Index i, Index j) const { return blocked_[i * cols_ + j] != 0; }
  void set_blocked(Index i, Index j, bool value = true) { blocked_[i * cols_ + j] = value; }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<std::uint8_t> blocked_;
};

/// Causal pattern: cell (i, j) is blocked iff j > i.
AttentionMask causal_mask(Index rows, Index cols);

/// Additive value placed on blocked cells before the softmax.
inline constexpr double kMaskedLogit = -1e9;

// Shapes broadcast numpy-style wherever two tensors meet elementwise.
Shape broadcast_shapes(const Shape& a, const Shape& b);

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> scale(const Tensor<S>& x, S factor);
template <typename S> Tensor<S> add_scalar(const Tensor<S>& x, S offset);
template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);

/// Sum (or mean) of every element, as a rank-0 tensor.
template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);

/// Batched matrix product over the last two axes; leading axes broadcast.
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> permute(const Tensor<S>& x, const std::vector<Index>& order);
/// Swap the last two axes.
template <typename S> Tensor<S> transpose(const Tensor<S>& x);
/// Elements [start, start + length) along `axis`.
template <typename S> Tensor<S> narrow(const Tensor<S>& x, Index axis, Index start, Index length);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis);
/// Repeat a leading axis of extent 1 `count` times.
template <typename S> Tensor<S> expand_batch(const Tensor<S>& x, Index count);

template <typename S> Tensor<S> softmax_lastdim(const Tensor<S>& x);
template <typename S> Tensor<S> log_softmax_lastdim(const Tensor<S>& x);
/// Softmax over the last axis with `mask` (shape [.., Lq, Lk] trailing)
/// applied additively. Rows whose every key is blocked come out as zeros.
template <typename S> Tensor<S> masked_softmax(const Tensor<S>& x, const AttentionMask& mask);

/// Normalises the last axis to zero mean / unit variance, then applies
/// gamma and beta.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S epsilon = S(1e-5));

/// x . weight + bias with weight shaped [in, out]. `bias` may be undefined.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

/// Rows of `table` [V, E] gathered by `ids`; result shape is ids_shape + [E].
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const int> ids, const Shape& ids_shape);

/// Mean negative log-likelihood of `targets` under logits [.., V]; positions
/// whose target equals `ignore_id` contribute nothing. All-ignored gives 0.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets, int ignore_id);

/// 2-D convolution. x: [N, C, H, W]; weight: [O, C, K, K]; bias: [O].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Index stride,
                 Index padding);

}  // namespace textrec
