// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/layers.hpp"

#include <cmath>

#include "textrec/errors.hpp"

namespace textrec {

template <typename S>
LinearParams<S> make_linear(ParameterStore<S>& store, const std::string& name, Index in, Index out,
                            Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  LinearParams<S> p;
  p.weight = store.uniform(name + ".weight", {in, out}, bound, rng);
  p.bias = store.constant(name + ".bias", {out}, 0.0);
  return p;
}

template <typename S>
LayerNormParams<S> make_layer_norm(ParameterStore<S>& store, const std::string& name,
                                   Index width) {
  return {store.constant(name + ".gamma", {width}, 1.0),
          store.constant(name + ".beta", {width}, 0.0)};
}

template <typename S>
FeedForwardParams<S> make_feed_forward(ParameterStore<S>& store, const std::string& name,
                                       Index width, Index hidden, Rng& rng) {
  FeedForwardParams<S> p;
  p.hidden = make_linear(store, name + ".fc1", width, hidden, rng);
  p.output = make_linear(store, name + ".fc2", hidden, width, rng);
  return p;
}

template <typename S>
MultiHeadParams<S> make_multi_head(ParameterStore<S>& store, const std::string& name, Index width,
                                   Index inner, Index heads, Rng& rng) {
  if (heads < 1 || inner % heads != 0) {
    throw ConfigError("attention width " + std::to_string(inner) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadParams<S> p;
  p.query = make_linear(store, name + ".wq", width, inner, rng);
  p.key = make_linear(store, name + ".wk", width, inner, rng);
  p.value = make_linear(store, name + ".wv", width, inner, rng);
  p.output = make_linear(store, name + ".wo", inner, width, rng);
  p.heads = heads;
  return p;
}

template <typename S>
AttentionBlockParams<S> make_attention_block(ParameterStore<S>& store, const std::string& name,
                                             Index width, Index inner, Index heads,
                                             Index ffn_hidden, Rng& rng) {
  AttentionBlockParams<S> p;
  p.attention = make_multi_head(store, name + ".attn", width, inner, heads, rng);
  p.attention_norm = make_layer_norm(store, name + ".norm1", width);
  p.ffn = make_feed_forward(store, name + ".ffn", width, ffn_hidden, rng);
  p.ffn_norm = make_layer_norm(store, name + ".norm2", width);
  return p;
}

template <typename S>
AttentionResult<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k,
                                        const Tensor<S>& v, const AttentionMask* mask) {
  const Index depth = q.dim(-1);
  if (k.dim(-1) != depth) {
    throw DimensionError("query depth " + shape_string(q.shape()) + " vs key depth " +
                         shape_string(k.shape()));
  }
  if (v.dim(-2) != k.dim(-2)) {
    throw DimensionError("key length " + shape_string(k.shape()) + " vs value length " +
                         shape_string(v.shape()));
  }
  Tensor<S> scores = scale(matmul(q, transpose(k)), S(1) / std::sqrt(static_cast<S>(depth)));
  Tensor<S> weights = mask ? masked_softmax(scores, *mask) : softmax_lastdim(scores);
  return {matmul(weights, v), weights};
}

namespace {

template <typename S>
Tensor<S> split_heads(const Tensor<S>& x, Index heads) {
  const Index batch = x.dim(0), length = x.dim(1), width = x.dim(2);
  return permute(reshape(x, {batch, length, heads, width / heads}), {0, 2, 1, 3});
}

}  // namespace

template <typename S>
AttentionResult<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k,
                                        const Tensor<S>& v, const AttentionMask* mask,
                                        const MultiHeadParams<S>& params) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw DimensionError("multi_head_attention expects [N, L, E] inputs, got " +
                         shape_string(q.shape()));
  }
  const Index inner = params.query.weight.dim(1);
  if (params.heads < 1 || inner % params.heads != 0) {
    throw ConfigError("attention width " + std::to_string(inner) + " not divisible by " +
                      std::to_string(params.heads) + " heads");
  }
  const Index batch = q.dim(0), length = q.dim(1);
  auto heads = scaled_dot_attention(split_heads(params.query(q), params.heads),
                                    split_heads(params.key(k), params.heads),
                                    split_heads(params.value(v), params.heads), mask);
  Tensor<S> merged = reshape(permute(heads.output, {0, 2, 1, 3}), {batch, length, inner});
  return {params.output(merged), heads.weights};
}

template <typename S>
AttentionResult<S> attention_block(const Tensor<S>& query, const Tensor<S>& memory,
                                   const AttentionMask* mask, const AttentionBlockParams<S>& p) {
  auto attended = multi_head_attention(query, memory, memory, mask, p.attention);
  Tensor<S> x = p.attention_norm(add(query, attended.output));
  Tensor<S> y = p.ffn_norm(add(x, p.ffn(x)));
  return {y, attended.weights};
}

#define TEXTREC_INSTANTIATE_LAYERS(S)                                                          \
  template LinearParams<S> make_linear(ParameterStore<S>&, const std::string&, Index, Index,   \
                                       Rng&);                                                  \
  template LayerNormParams<S> make_layer_norm(ParameterStore<S>&, const std::string&, Index);  \
  template FeedForwardParams<S> make_feed_forward(ParameterStore<S>&, const std::string&,      \
                                                  Index, Index, Rng&);                         \
  template MultiHeadParams<S> make_multi_head(ParameterStore<S>&, const std::string&, Index,   \
                                              Index, Index, Rng&);                             \
  template AttentionBlockParams<S> make_attention_block(ParameterStore<S>&, const std::string&, \
                                                        Index, Index, Index, Index, Rng&);     \
  template AttentionResult<S> scaled_dot_attention(const Tensor<S>&, const Tensor<S>&,          \
                                                   const Tensor<S>&, const AttentionMask*);     \
  template AttentionResult<S> multi_head_attention(const Tensor<S>&, const Tensor<S>&,          \
                                                   const Tensor<S>&, const AttentionMask*,      \
                                                   const MultiHeadParams<S>&);                  \
  template AttentionResult<S> attention_block(const Tensor<S>&, const Tensor<S>&,               \
                                              const AttentionMask*, const AttentionBlockParams<S>&);

TEXTREC_INSTANTIATE_LAYERS(float)
TEXTREC_INSTANTIATE_LAYERS(double)

}  // namespace textrec
