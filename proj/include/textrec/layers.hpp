// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "textrec/ops.hpp"
#include "textrec/parameters.hpp"

namespace textrec {

template <typename S>
struct LinearParams {
  Tensor<S> weight;  // [in, out]
  Tensor<S> bias;    // [out]

  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, weight, bias); }
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gamma;
  Tensor<S> beta;

  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }
};

/// Two affine maps with a ReLU between them.
template <typename S>
struct FeedForwardParams {
  LinearParams<S> hidden;
  LinearParams<S> output;

  Tensor<S> operator()(const Tensor<S>& x) const { return output(relu(hidden(x))); }
};

/// Query/key/value projections to an inner width split across `heads`,
/// and an output projection back to the model width.
template <typename S>
struct MultiHeadParams {
  LinearParams<S> query;
  LinearParams<S> key;
  LinearParams<S> value;
  LinearParams<S> output;
  Index heads = 1;
};

/// Attention sub-layer followed by a feed-forward sub-layer, each wrapped
/// as norm(x + f(x)).
template <typename S>
struct AttentionBlockParams {
  MultiHeadParams<S> attention;
  LayerNormParams<S> attention_norm;
  FeedForwardParams<S> ffn;
  LayerNormParams<S> ffn_norm;
};

template <typename S>
struct AttentionResult {
  Tensor<S> output;
  Tensor<S> weights;  // [.., heads, Lq, Lk] for multi-head, [.., Lq, Lk] otherwise
};

// Xavier-uniform weight, zero bias.
template <typename S>
LinearParams<S> make_linear(ParameterStore<S>& store, const std::string& name, Index in, Index out,
                            Rng& rng);
template <typename S>
LayerNormParams<S> make_layer_norm(ParameterStore<S>& store, const std::string& name, Index width);
template <typename S>
FeedForwardParams<S> make_feed_forward(ParameterStore<S>& store, const std::string& name,
                                       Index width, Index hidden, Rng& rng);
template <typename S>
MultiHeadParams<S> make_multi_head(ParameterStore<S>& store, const std::string& name, Index width,
                                   Index inner, Index heads, Rng& rng);
template <typename S>
AttentionBlockParams<S> make_attention_block(ParameterStore<S>& store, const std::string& name,
                                             Index width, Index inner, Index heads,
                                             Index ffn_hidden, Rng& rng);

/// softmax(q kᵀ / sqrt(d) + mask) v. `mask` may be null.
template <typename S>
AttentionResult<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k,
                                        const Tensor<S>& v, const AttentionMask* mask);

/// q: [N, Lq, E]; k, v: [N or 1, Lk, E]. Output has the shape of q.
template <typename S>
AttentionResult<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k,
                                        const Tensor<S>& v, const AttentionMask* mask,
                                        const MultiHeadParams<S>& params);

/// norm(x + attn(x, memory)) then norm(y + ffn(y)).
template <typename S>
AttentionResult<S> attention_block(const Tensor<S>& query, const Tensor<S>& memory,
                                   const AttentionMask* mask, const AttentionBlockParams<S>& p);

}  // namespace textrec
