// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/mdcdp.hpp"

#include <cmath>

#include "textrec/errors.hpp"

namespace textrec {

template <typename S>
GateParams<S> make_gate(ParameterStore<S>& store, const std::string& name, Index channels,
                        Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(3 * channels));
  return {store.uniform(name + ".weight", {2 * channels, channels}, bound, rng),
          store.constant(name + ".bias", {channels}, 0.0)};
}

template <typename S>
std::vector<MdcdpParams<S>> make_decoder(ParameterStore<S>& store, const ModelConfig& config,
                                         Rng& rng) {
  config.validate();
  const Index e = config.e_dim;
  const auto& v = config.variant;
  std::optional<GateParams<S>> shared;
  if (v.fusion == Fusion::kDsf && v.branch_count() == 2) shared = make_gate(store, "dsf.gate", e, rng);

  std::vector<MdcdpParams<S>> layers;
  for (int l = 0; l < config.mdcdp_layers; ++l) {
    const std::string base = "mdcdp." + std::to_string(l);
    // Enhancement blocks run at half width; interaction blocks at full width.
    auto half = [&](const std::string& name) {
      return make_attention_block(store, base + "." + name, e, e / 2, config.heads,
                                  config.decoder_ffn, rng);
    };
    auto full = [&](const std::string& name) {
      return make_attention_block(store, base + "." + name, e, e, config.heads,
                                  config.decoder_ffn, rng);
    };
    MdcdpParams<S> p;
    p.fusion = v.fusion;
    if (v.sae_position) p.sae_position = half("sae_pos");
    if (v.sae_semantic) p.sae_semantic = half("sae_sem");
    if (v.sae_visual) p.sae_visual = half("sae_vis");
    if (v.cbi_position_visual) p.cbi_position_visual = full("cbi_v");
    if (v.cbi_position_semantic) p.cbi_position_semantic = full("cbi_s");
    if (v.cbi_semantic_visual) p.cbi_semantic_visual = full("cbi_sv");
    if (v.cbi_semantic_position) p.cbi_semantic_position = full("cbi_sp");
    if (shared) {
      p.gate = *shared;
    } else if (v.fusion == Fusion::kDsfUnshared && v.branch_count() == 2) {
      p.gate = make_gate(store, base + ".dsf.gate", e, rng);
    }
    layers.push_back(std::move(p));
  }
  return layers;
}

template <typename S>
Tensor<S> sae(const Tensor<S>& position, const AttentionMask& mask,
              const AttentionBlockParams<S>& params) {
  if (mask.rows() != position.dim(1) || mask.cols() != position.dim(1)) {
    throw DimensionError("self-attention mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " for sequence of length " +
                         std::to_string(position.dim(1)));
  }
  return attention_block(position, position, &mask, params).output;
}

template <typename S>
AttentionResult<S> cbi_s(const Tensor<S>& position, const Tensor<S>& semantic,
                         const AttentionMask& mask, const AttentionBlockParams<S>& params) {
  if (mask.rows() != position.dim(1) || mask.cols() != semantic.dim(1)) {
    throw DimensionError("semantic mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " for queries " +
                         shape_string(position.shape()) + " and keys " +
                         shape_string(semantic.shape()));
  }
  return attention_block(position, semantic, &mask, params);
}

template <typename S>
AttentionResult<S> cbi_v(const Tensor<S>& position, const Tensor<S>& visual,
                         const AttentionBlockParams<S>& params) {
  if (position.dim(-1) != visual.dim(-1)) {
    throw DimensionError("channel mismatch between " + shape_string(position.shape()) + " and " +
                         shape_string(visual.shape()));
  }
  return attention_block(position, visual, nullptr, params);
}

template <typename S>
Tensor<S> dsf_gate(const Tensor<S>& semantic_side, const Tensor<S>& visual_side,
                   const GateParams<S>& gate) {
  if (semantic_side.shape() != visual_side.shape()) {
    throw DimensionError("fusion inputs differ: " + shape_string(semantic_side.shape()) + " vs " +
                         shape_string(visual_side.shape()));
  }
  return sigmoid(linear(concat<S>({semantic_side, visual_side}, -1), gate.weight, gate.bias));
}

template <typename S>
Tensor<S> dsf(const Tensor<S>& semantic_side, const Tensor<S>& visual_side,
              const GateParams<S>& gate) {
  Tensor<S> g = dsf_gate(semantic_side, visual_side, gate);
  return add(visual_side, mul(g, sub(semantic_side, visual_side)));
}

template <typename S>
Tensor<S> fuse(const Tensor<S>& semantic_side, const Tensor<S>& visual_side, Fusion fusion,
               const GateParams<S>& gate) {
  if (semantic_side.shape() != visual_side.shape()) {
    throw DimensionError("fusion inputs differ: " + shape_string(semantic_side.shape()) + " vs " +
                         shape_string(visual_side.shape()));
  }
  switch (fusion) {
    case Fusion::kAdd:
      return add(semantic_side, visual_side);
    case Fusion::kDot:
      return mul(semantic_side, visual_side);
    default:
      return dsf(semantic_side, visual_side, gate);
  }
}

template <typename S>
Tensor<S> mdcdp_forward(const Tensor<S>& position, const Tensor<S>& visual,
                        const Tensor<S>& semantic, const AttentionMask& mask,
                        const MdcdpParams<S>& params, LayerTrace<S>* trace) {
  const Index lq = position.dim(1), lk = semantic.dim(1);
  if (mask.rows() != lq || mask.cols() != lk || lk < lq) {
    throw DimensionError("decoder mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " for " + std::to_string(lq) +
                         " queries and " + std::to_string(lk) + " semantic keys");
  }
  Tensor<S> pos = position, sem = semantic, vis = visual;
  if (params.sae_position) pos = sae(pos, causal_mask(lq, lq), *params.sae_position);
  if (params.sae_semantic) sem = sae(sem, causal_mask(lk, lk), *params.sae_semantic);
  if (params.sae_visual) vis = attention_block(vis, vis, nullptr, *params.sae_visual).output;

  // Semantic-side features first, visual-side second, as the gate expects.
  std::vector<Tensor<S>> branches;
  if (params.cbi_semantic_position) {
    const AttentionMask back = causal_mask(lk, lq);
    branches.push_back(attention_block(sem, pos, &back, *params.cbi_semantic_position).output);
  }
  if (params.cbi_position_semantic) {
    auto r = cbi_s(pos, sem, mask, *params.cbi_position_semantic);
    if (trace) trace->semantic_weights = r.weights;
    branches.push_back(r.output);
  }
  if (params.cbi_semantic_visual) {
    branches.push_back(attention_block(sem, vis, nullptr, *params.cbi_semantic_visual).output);
  }
  if (params.cbi_position_visual) {
    auto r = cbi_v(pos, vis, *params.cbi_position_visual);
    if (trace) trace->visual_weights = r.weights;
    branches.push_back(r.output);
  }
  if (branches.empty()) throw ConfigError("decoder block has no interaction branch");
  if (branches.size() == 1) return branches.front();
  return fuse(branches[0], branches[1], params.fusion, params.gate);
}

template <typename S>
Tensor<S> stack_forward(const Tensor<S>& position, const Tensor<S>& visual,
                        const Tensor<S>& semantic, const AttentionMask& mask,
                        const std::vector<MdcdpParams<S>>& layers,
                        std::vector<LayerTrace<S>>* traces) {
  if (layers.empty()) throw ConfigError("decoder stack needs at least one block");
  if (traces) traces->assign(layers.size(), LayerTrace<S>{});
  Tensor<S> x = position;
  for (std::size_t l = 0; l < layers.size(); ++l)
    x = mdcdp_forward(x, visual, semantic, mask, layers[l], traces ? &(*traces)[l] : nullptr);
  return x;
}

#define TEXTREC_INSTANTIATE_MDCDP(S)                                                           \
  template GateParams<S> make_gate(ParameterStore<S>&, const std::string&, Index, Rng&);       \
  template std::vector<MdcdpParams<S>> make_decoder(ParameterStore<S>&, const ModelConfig&,    \
                                                    Rng&);                                     \
  template Tensor<S> sae(const Tensor<S>&, const AttentionMask&, const AttentionBlockParams<S>&); \
  template AttentionResult<S> cbi_s(const Tensor<S>&, const Tensor<S>&, const AttentionMask&,  \
                                    const AttentionBlockParams<S>&);                           \
  template AttentionResult<S> cbi_v(const Tensor<S>&, const Tensor<S>&,                        \
                                    const AttentionBlockParams<S>&);                           \
  template Tensor<S> dsf_gate(const Tensor<S>&, const Tensor<S>&, const GateParams<S>&);       \
  template Tensor<S> dsf(const Tensor<S>&, const Tensor<S>&, const GateParams<S>&);            \
  template Tensor<S> fuse(const Tensor<S>&, const Tensor<S>&, Fusion, const GateParams<S>&);   \
  template Tensor<S> mdcdp_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,       \
                                   const AttentionMask&, const MdcdpParams<S>&,                \
                                   LayerTrace<S>*);                                            \
  template Tensor<S> stack_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,       \
                                   const AttentionMask&, const std::vector<MdcdpParams<S>>&,   \
                                   std::vector<LayerTrace<S>>*);

TEXTREC_INSTANTIATE_MDCDP(float)
TEXTREC_INSTANTIATE_MDCDP(double)

}  // namespace textrec
