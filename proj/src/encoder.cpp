// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/encoder.hpp"

#include <cmath>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

template <typename S>
Tensor<S> he_conv(ParameterStore<S>& store, const std::string& name, Index out, Index in,
                  double gain, Rng& rng) {
  return store.normal(name, {out, in, 3, 3}, gain * std::sqrt(2.0 / static_cast<double>(in * 9)),
                      rng);
}

}  // namespace

template <typename S>
EncoderParams<S> make_encoder(ParameterStore<S>& store, const ModelConfig& config, Rng& rng) {
  config.validate();
  EncoderParams<S> p;
  const Index e = config.e_dim;
  const std::vector<Index> widths = {config.backbone_channels[0], config.backbone_channels[1], e};
  Index in = 1;
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::string base = "visual.backbone.stage" + std::to_string(s);
    ConvStage<S> st;
    st.down_weight = he_conv(store, base + ".down.weight", widths[s], in, 1.0, rng);
    st.down_bias = store.constant(base + ".down.bias", {widths[s]}, 0.0);
    st.res1_weight = he_conv(store, base + ".res1.weight", widths[s], widths[s], 1.0, rng);
    st.res1_bias = store.constant(base + ".res1.bias", {widths[s]}, 0.0);
    st.res2_weight = he_conv(store, base + ".res2.weight", widths[s], widths[s], 0.5, rng);
    st.res2_bias = store.constant(base + ".res2.bias", {widths[s]}, 0.0);
    p.visual.stages.push_back(st);
    in = widths[s];
  }
  for (int l = 0; l < config.encoder_layers; ++l) {
    p.visual.transformer.push_back(make_attention_block(store,
                                                        "visual.encoder." + std::to_string(l), e,
                                                        e, config.heads, config.encoder_ffn, rng));
  }
  const Index vocab = Vocabulary(config.charset).size();
  p.semantic_table = store.normal("semantic.embedding", {vocab, e}, 1.0, rng);
  p.position_mlp = make_feed_forward(store, "position.mlp", e, e, rng);
  return p;
}

template <typename S>
Tensor<S> sinusoid(Index length, Index width) {
  if (width % 2 != 0) throw ConfigError("sinusoid width must be even, got " + std::to_string(width));
  typename Tensor<S>::Array v(length * width);
  for (Index pos = 0; pos < length; ++pos)
    for (Index k = 0; k < width / 2; ++k) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / width);
      v[pos * width + 2 * k] = static_cast<S>(std::sin(pos * freq));
      v[pos * width + 2 * k + 1] = static_cast<S>(std::cos(pos * freq));
    }
  return Tensor<S>({length, width}, std::move(v));
}

template <typename S>
Tensor<S> image_batch(std::span<const GrayImage> images, int height, int width) {
  const Index n = static_cast<Index>(images.size());
  typename Tensor<S>::Array v(n * height * width);
  for (Index i = 0; i < n; ++i) {
    const GrayImage resized = resize_bilinear(images[static_cast<std::size_t>(i)], width, height);
    for (Index p = 0; p < height * width; ++p)
      v[i * height * width + p] =
          static_cast<S>(std::clamp(resized.pixels[static_cast<std::size_t>(p)], 0.0f, 1.0f));
  }
  return Tensor<S>({n, 1, height, width}, std::move(v));
}

template <typename S>
Tensor<S> encode_visual(const Tensor<S>& images, const VisualParams<S>& params) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("encode_visual expects [N, 1, H, W], got " +
                         shape_string(images.shape()));
  }
  const Index h = images.dim(2), w = images.dim(3);
  if (h % 8 != 0 || w % 8 != 0) {
    throw ConfigError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by 8");
  }
  Tensor<S> x = images;
  for (const auto& st : params.stages) {
    x = relu(conv2d(x, st.down_weight, st.down_bias, 2, 1));
    Tensor<S> r = relu(conv2d(x, st.res1_weight, st.res1_bias, 1, 1));
    r = conv2d(r, st.res2_weight, st.res2_bias, 1, 1);
    x = relu(add(x, r));
  }
  const Index batch = x.dim(0), channels = x.dim(1), length = x.dim(2) * x.dim(3);
  Tensor<S> seq = permute(reshape(x, {batch, channels, length}), {0, 2, 1});
  seq = add(seq, sinusoid<S>(length, channels));
  for (const auto& layer : params.transformer) seq = attention_block(seq, seq, nullptr, layer).output;
  return seq;
}

std::vector<int> build_semantic_train(std::span<const std::vector<int>> labels, int max_len) {
  std::vector<int> ids(labels.size() * static_cast<std::size_t>(max_len), Vocabulary::kPad);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto& label = labels[n];
    if (static_cast<int>(label.size()) > max_len - 1) {
      throw LengthError("sample " + std::to_string(n) + ": label of length " +
                        std::to_string(label.size()) + " exceeds T - 1 = " +
                        std::to_string(max_len - 1));
    }
    int* row = ids.data() + n * static_cast<std::size_t>(max_len);
    row[0] = Vocabulary::kStart;
    for (std::size_t i = 0; i < label.size(); ++i) row[i + 1] = label[i];
    row[label.size() + 1] = Vocabulary::kEnd;
  }
  return ids;
}

template <typename S>
Tensor<S> embed_semantic(const Tensor<S>& table, std::span<const int> ids, Index batch,
                         Index length) {
  return embedding_lookup(table, ids, {batch, length});
}

template <typename S>
SemanticFeature<S> start_semantic(const Tensor<S>& table) {
  SemanticFeature<S> f;
  f.ids = {Vocabulary::kStart};
  f.features = embed_semantic(table, f.ids, 1, 1);
  return f;
}

template <typename S>
SemanticFeature<S> append_semantic_step(const SemanticFeature<S>& previous, int decoded_id,
                                        const Tensor<S>& table) {
  if (previous.finished) throw StateError("cannot append after END has been decoded");
  if (previous.ids.empty() || previous.ids.back() == Vocabulary::kPad) {
    throw StateError("semantic sequence must end with a real token");
  }
  if (decoded_id == Vocabulary::kPad || decoded_id == Vocabulary::kStart) {
    throw StateError("cannot append PAD or START during decoding");
  }
  SemanticFeature<S> next;
  next.ids = previous.ids;
  next.ids.push_back(decoded_id);
  const int id[1] = {decoded_id};
  next.features = concat<S>({previous.features, embed_semantic(table, id, 1, 1)}, 1);
  next.finished = decoded_id == Vocabulary::kEnd;
  return next;
}

template <typename S>
Tensor<S> position_code(std::span<const int> lengths, Index steps, Index width) {
  if (steps > width) {
    throw ConfigError("position index code needs T <= E, got T=" + std::to_string(steps) +
                      " E=" + std::to_string(width));
  }
  const Index batch = static_cast<Index>(lengths.size());
  typename Tensor<S>::Array v = Tensor<S>::Array::Zero(batch * steps * width);
  for (Index n = 0; n < batch; ++n) {
    const int len = lengths[static_cast<std::size_t>(n)];
    if (len < 1) throw RangeError("text length must be at least 1, got " + std::to_string(len));
    for (Index i = 0; i < steps; ++i)
      v[(n * steps + i) * width + i] = S(1) / static_cast<S>(len);
  }
  return Tensor<S>({batch, steps, width}, std::move(v));
}

template <typename S>
Tensor<S> build_position_train(std::span<const int> lengths, Index steps, Index width,
                               const FeedForwardParams<S>& mlp) {
  Tensor<S> code = add(position_code<S>(lengths, steps, width), sinusoid<S>(steps, width));
  return mlp(code);
}

template <typename S>
Tensor<S> build_position_infer(Index step, Index max_len, Index width,
                               const FeedForwardParams<S>& mlp) {
  if (step < 1 || step > max_len) {
    throw LengthError("inference step " + std::to_string(step) + " outside 1.." +
                      std::to_string(max_len));
  }
  const int len[1] = {static_cast<int>(step)};
  return build_position_train<S>(len, step, width, mlp);
}

#define TEXTREC_INSTANTIATE_ENCODER(S)                                                          \
  template EncoderParams<S> make_encoder(ParameterStore<S>&, const ModelConfig&, Rng&);          \
  template Tensor<S> sinusoid<S>(Index, Index);                                                  \
  template Tensor<S> image_batch<S>(std::span<const GrayImage>, int, int);                       \
  template Tensor<S> encode_visual(const Tensor<S>&, const VisualParams<S>&);                     \
  template Tensor<S> embed_semantic(const Tensor<S>&, std::span<const int>, Index, Index);       \
  template SemanticFeature<S> start_semantic(const Tensor<S>&);                                  \
  template SemanticFeature<S> append_semantic_step(const SemanticFeature<S>&, int,               \
                                                   const Tensor<S>&);                            \
  template Tensor<S> position_code<S>(std::span<const int>, Index, Index);                       \
  template Tensor<S> build_position_train(std::span<const int>, Index, Index,                    \
                                          const FeedForwardParams<S>&);                          \
  template Tensor<S> build_position_infer(Index, Index, Index, const FeedForwardParams<S>&);

TEXTREC_INSTANTIATE_ENCODER(float)
TEXTREC_INSTANTIATE_ENCODER(double)

}  // namespace textrec
