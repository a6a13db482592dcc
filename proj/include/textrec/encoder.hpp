// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "textrec/config.hpp"
#include "textrec/image.hpp"
#include "textrec/layers.hpp"
#include "textrec/vocabulary.hpp"

namespace textrec {

/// One downsampling stage: stride-2 3x3 conv, then a two-conv residual unit.
template <typename S>
struct ConvStage {
  Tensor<S> down_weight, down_bias;
  Tensor<S> res1_weight, res1_bias;
  Tensor<S> res2_weight, res2_bias;
};

template <typename S>
struct VisualParams {
  std::vector<ConvStage<S>> stages;                 // three stages, x1/8 overall
  std::vector<AttentionBlockParams<S>> transformer;  // self-attention units
};

template <typename S>
struct EncoderParams {
  VisualParams<S> visual;
  Tensor<S> semantic_table;   // [V, E]
  FeedForwardParams<S> position_mlp;  // E -> E -> E
};

template <typename S>
EncoderParams<S> make_encoder(ParameterStore<S>& store, const ModelConfig& config, Rng& rng);

/// Fixed sinusoid table [length, width]: sin on even channels, cos on odd,
/// frequency 10000^(-2k/width).
template <typename S>
Tensor<S> sinusoid(Index length, Index width);

/// Stacks images, resized to the model input size, into [N, 1, H, W].
template <typename S>
Tensor<S> image_batch(std::span<const GrayImage> images, int height, int width);

/// [N, 1, H, W] -> [N, H*W/64, E].
template <typename S>
Tensor<S> encode_visual(const Tensor<S>& images, const VisualParams<S>& params);

/// Teacher-forcing ids: [START, c1..cL, END, PAD...] per label, flattened
/// [N * T]. Labels longer than T - 1 throw LengthError.
std::vector<int> build_semantic_train(std::span<const std::vector<int>> labels, int max_len);

/// Embeds an [N, L] id grid into [N, L, E].
template <typename S>
Tensor<S> embed_semantic(const Tensor<S>& table, std::span<const int> ids, Index batch,
                         Index length);

/// Step-wise semantic sequence used during inference.
template <typename S>
struct SemanticFeature {
  std::vector<int> ids;  // starts with START
  Tensor<S> features;    // [1, ids.size(), E]
  bool finished = false;
};

template <typename S>
SemanticFeature<S> start_semantic(const Tensor<S>& table);
/// Appends `decoded_id`; appending END marks the sequence finished, and any
/// append after that throws StateError.
template <typename S>
SemanticFeature<S> append_semantic_step(const SemanticFeature<S>& previous, int decoded_id,
                                        const Tensor<S>& table);

/// Content-free position code [N, T, E]: row i carries 1/L_n at channel i.
template <typename S>
Tensor<S> position_code(std::span<const int> lengths, Index steps, Index width);

/// Training position embedding for per-sample lengths L_n: code, plus
/// sinusoid, through the two-layer MLP. Result [N, T, E].
template <typename S>
Tensor<S> build_position_train(std::span<const int> lengths, Index steps, Index width,
                               const FeedForwardParams<S>& mlp);

/// Inference position embedding at step t: [1, t, E] with 1/t codes.
template <typename S>
Tensor<S> build_position_infer(Index step, Index max_len, Index width,
                               const FeedForwardParams<S>& mlp);

}  // namespace textrec
