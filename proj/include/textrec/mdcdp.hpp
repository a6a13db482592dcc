// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "textrec/config.hpp"
#include "textrec/layers.hpp"

namespace textrec {

/// The 1x1 fusion convolution: weight [2C, C], bias [C].
template <typename S>
struct GateParams {
  Tensor<S> weight;
  Tensor<S> bias;
};

/// One decoder block. Absent optionals are branches the variant leaves out.
template <typename S>
struct MdcdpParams {
  std::optional<AttentionBlockParams<S>> sae_position;
  std::optional<AttentionBlockParams<S>> sae_semantic;
  std::optional<AttentionBlockParams<S>> sae_visual;
  std::optional<AttentionBlockParams<S>> cbi_position_visual;
  std::optional<AttentionBlockParams<S>> cbi_position_semantic;
  std::optional<AttentionBlockParams<S>> cbi_semantic_visual;
  std::optional<AttentionBlockParams<S>> cbi_semantic_position;
  GateParams<S> gate;  // handle to the shared gate unless the fusion is unshared
  Fusion fusion = Fusion::kDsf;
};

template <typename S>
GateParams<S> make_gate(ParameterStore<S>& store, const std::string& name, Index channels,
                        Rng& rng);

/// Builds `config.mdcdp_layers` blocks wired per `config.variant`. With
/// shared fusion, a single gate named "dsf.gate" backs every block.
template <typename S>
std::vector<MdcdpParams<S>> make_decoder(ParameterStore<S>& store, const ModelConfig& config,
                                         Rng& rng);

/// Attention maps recorded from one block.
template <typename S>
struct LayerTrace {
  Tensor<S> visual_weights;    // [N, heads, Lq, P] from the position->visual interaction
  Tensor<S> semantic_weights;  // [N, heads, Lq, Lk] from the position->semantic interaction
};

/// Masked self-attention enhancement of the position embedding.
template <typename S>
Tensor<S> sae(const Tensor<S>& position, const AttentionMask& mask,
              const AttentionBlockParams<S>& params);

/// Position-queried cross-attention into the semantic sequence.
template <typename S>
AttentionResult<S> cbi_s(const Tensor<S>& position, const Tensor<S>& semantic,
                         const AttentionMask& mask, const AttentionBlockParams<S>& params);

/// Position-queried cross-attention into the visual sequence (no mask).
template <typename S>
AttentionResult<S> cbi_v(const Tensor<S>& position, const Tensor<S>& visual,
                         const AttentionBlockParams<S>& params);

/// sigmoid([a, b] W + bias), the gate applied to `a`.
template <typename S>
Tensor<S> dsf_gate(const Tensor<S>& semantic_side, const Tensor<S>& visual_side,
                   const GateParams<S>& gate);

/// gate * a + (1 - gate) * b.
template <typename S>
Tensor<S> dsf(const Tensor<S>& semantic_side, const Tensor<S>& visual_side,
              const GateParams<S>& gate);

template <typename S>
Tensor<S> fuse(const Tensor<S>& semantic_side, const Tensor<S>& visual_side, Fusion fusion,
               const GateParams<S>& gate);

/// One block. `mask` is the causal Lq x Lk mask between position queries
/// and semantic keys (Lk >= Lq). Self-attention inside the block is causal.
template <typename S>
Tensor<S> mdcdp_forward(const Tensor<S>& position, const Tensor<S>& visual,
                        const Tensor<S>& semantic, const AttentionMask& mask,
                        const MdcdpParams<S>& params, LayerTrace<S>* trace = nullptr);

/// Folds the blocks, each output becoming the next block's position input.
template <typename S>
Tensor<S> stack_forward(const Tensor<S>& position, const Tensor<S>& visual,
                        const Tensor<S>& semantic, const AttentionMask& mask,
                        const std::vector<MdcdpParams<S>>& layers,
                        std::vector<LayerTrace<S>>* traces = nullptr);

}  // namespace textrec
