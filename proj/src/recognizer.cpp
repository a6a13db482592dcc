// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/recognizer.hpp"

#include <algorithm>
#include <cmath>

#include "textrec/errors.hpp"

namespace textrec {

template <typename S>
Tensor<S> classify(const Tensor<S>& features, const LinearParams<S>& classifier) {
  return classifier(features);
}

template <typename S>
Recognizer<S>::Recognizer(ModelConfig config)
    : config_(std::move(config)), vocab_(config_.charset) {
  config_.validate();
  Rng rng(config_.seed);
  encoder_ = make_encoder(store_, config_, rng);
  decoder_ = make_decoder(store_, config_, rng);
  classifier_ = make_linear(store_, "classifier", config_.e_dim, vocab_.size(), rng);
}

template <typename S>
Tensor<S> Recognizer<S>::images(std::span<const GrayImage> batch) const {
  return image_batch<S>(batch, config_.image_height, config_.image_width);
}

template <typename S>
Tensor<S> Recognizer<S>::encode(const Tensor<S>& images) const {
  return encode_visual(images, encoder_.visual);
}

template <typename S>
Tensor<S> Recognizer<S>::forward_train(const Tensor<S>& images,
                                       std::span<const std::vector<int>> labels, Index steps,
                                       std::vector<LayerTrace<S>>* traces) const {
  if (images.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError(std::to_string(images.dim(0)) + " images for " +
                         std::to_string(labels.size()) + " labels");
  }
  return forward_train_visual(encode(images), labels, steps, traces);
}

template <typename S>
Tensor<S> Recognizer<S>::forward_train_visual(const Tensor<S>& visual,
                                              std::span<const std::vector<int>> labels,
                                              Index steps,
                                              std::vector<LayerTrace<S>>* traces) const {
  const Index t_full = config_.max_len;
  if (steps == 0) steps = t_full;
  if (steps < 1 || steps > t_full) {
    throw RangeError("decoder steps " + std::to_string(steps) + " outside 1.." +
                     std::to_string(t_full));
  }
  const Index n = static_cast<Index>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int id : labels[i])
      if (!vocab_.is_char(id)) {
        throw RangeError("sample " + std::to_string(i) + ": id " + std::to_string(id) +
                         " is not a character");
      }
  const std::vector<int> full = build_semantic_train(labels, config_.max_len);
  std::vector<int> ids(static_cast<std::size_t>(n * steps));
  for (Index i = 0; i < n; ++i)
    std::copy_n(full.begin() + i * t_full, steps, ids.begin() + i * steps);

  std::vector<int> lengths;
  for (const auto& l : labels) lengths.push_back(static_cast<int>(l.size()) + 1);

  Tensor<S> pos = build_position_train(lengths, steps, config_.e_dim, encoder_.position_mlp);
  Tensor<S> sem = embed_semantic(encoder_.semantic_table, ids, n, steps);
  Tensor<S> vis = visual;
  if (vis.dim(0) == 1 && n > 1) vis = expand_batch(vis, n);
  Tensor<S> out = stack_forward(pos, vis, sem, causal_mask(steps, steps), decoder_, traces);
  return classify(out, classifier_);
}

template <typename S>
Tensor<S> Recognizer<S>::step_logits(const Tensor<S>& visual,
                                     std::span<const std::vector<int>> prefixes,
                                     std::vector<LayerTrace<S>>* traces) const {
  if (prefixes.empty()) throw DimensionError("step_logits needs at least one prefix");
  const Index n = static_cast<Index>(prefixes.size());
  const Index t = static_cast<Index>(prefixes.front().size()) + 1;
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(n * t));
  for (const auto& p : prefixes) {
    if (static_cast<Index>(p.size()) + 1 != t) throw DimensionError("prefixes differ in length");
    ids.push_back(Vocabulary::kStart);
    ids.insert(ids.end(), p.begin(), p.end());
  }
  Tensor<S> pos = build_position_infer(t, config_.max_len, config_.e_dim, encoder_.position_mlp);
  if (n > 1) pos = expand_batch(pos, n);
  Tensor<S> sem = embed_semantic(encoder_.semantic_table, ids, n, t);
  Tensor<S> vis = visual;
  if (vis.dim(0) == 1 && n > 1) vis = expand_batch(vis, n);
  Tensor<S> out = stack_forward(pos, vis, sem, causal_mask(t, t), decoder_, traces);
  return reshape(classify(narrow(out, 1, t - 1, 1), classifier_), {n, vocab_.size()});
}

bool beam_before(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.finished != b.finished) return a.finished;
  if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
  return a.ids < b.ids;
}

namespace {

// Ids eligible at decode time: END and the charset.
bool decodable(const Vocabulary& vocab, int id) {
  return id == Vocabulary::kEnd || vocab.is_char(id);
}

template <typename S>
std::vector<double> head_average_row(const Tensor<S>& weights, Index row) {
  // weights [1, heads, Lq, K]
  const Index heads = weights.dim(1), lq = weights.dim(2), k = weights.dim(3);
  std::vector<double> out(static_cast<std::size_t>(k), 0.0);
  for (Index h = 0; h < heads; ++h)
    for (Index j = 0; j < k; ++j)
      out[static_cast<std::size_t>(j)] += weights.value()[(h * lq + row) * k + j] / heads;
  return out;
}

template <typename S>
StepAttention record_attention(const std::vector<LayerTrace<S>>& traces) {
  StepAttention a;
  const LayerTrace<S>& last = traces.back();
  if (last.visual_weights.defined()) {
    a.visual = head_average_row(last.visual_weights, last.visual_weights.dim(2) - 1);
  }
  if (last.semantic_weights.defined()) {
    const Index lq = last.semantic_weights.dim(2);
    a.steps = static_cast<int>(lq);
    for (Index i = 0; i < lq; ++i) {
      auto row = head_average_row(last.semantic_weights, i);
      a.semantic.insert(a.semantic.end(), row.begin(), row.end());
    }
  }
  return a;
}

std::string decode_text(const Vocabulary& vocab, const std::vector<int>& ids) {
  return vocab.decode(ids);
}

}  // namespace

template <typename S>
DecodeResult decode_greedy(const Recognizer<S>& model, const GrayImage& image,
                           bool record) {
  NoGradGuard no_grad;
  const Vocabulary& vocab = model.vocabulary();
  const GrayImage batch[1] = {image};
  const Tensor<S> visual = model.encode(model.images(batch));
  const Tensor<S>& table = model.encoder().semantic_table;

  DecodeResult result;
  SemanticFeature<S> sem = start_semantic(table);
  for (int t = 1; t <= model.config().max_len; ++t) {
    Tensor<S> pos =
        build_position_infer(t, model.config().max_len, model.config().e_dim,
                             model.encoder().position_mlp);
    std::vector<LayerTrace<S>> traces;
    Tensor<S> out = stack_forward(pos, visual, sem.features, causal_mask(t, t), model.decoder(),
                                  record ? &traces : nullptr);
    Tensor<S> logits = classify(narrow(out, 1, t - 1, 1), model.classifier());
    Tensor<S> logp = log_softmax_lastdim(logits);

    std::vector<double> row(static_cast<std::size_t>(vocab.size()));
    int best = -1;
    for (int v = 0; v < vocab.size(); ++v) {
      row[static_cast<std::size_t>(v)] = static_cast<double>(logits.value()[v]);
      if (!decodable(vocab, v)) continue;
      if (best < 0 || logits.value()[v] > logits.value()[best]) best = v;
    }
    result.step_logits.push_back(std::move(row));
    if (record) result.attention.push_back(record_attention(traces));
    result.log_prob += static_cast<double>(logp.value()[best]);
    result.ids.push_back(best);
    sem = append_semantic_step(sem, best, table);
    if (sem.finished) {
      result.finished = true;
      break;
    }
  }
  result.text = decode_text(vocab, result.ids);
  return result;
}

template <typename S>
DecodeResult decode_beam(const Recognizer<S>& model, const GrayImage& image, int width) {
  if (width < 1) throw ConfigError("beam width must be at least 1, got " + std::to_string(width));
  NoGradGuard no_grad;
  const Vocabulary& vocab = model.vocabulary();
  const GrayImage batch[1] = {image};
  const Tensor<S> visual = model.encode(model.images(batch));

  std::vector<BeamHypothesis> beam(1);
  for (int t = 1; t <= model.config().max_len; ++t) {
    std::vector<std::vector<int>> prefixes;
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < beam.size(); ++i)
      if (!beam[i].finished) {
        alive.push_back(i);
        prefixes.push_back(beam[i].ids);
      }
    if (alive.empty()) break;
    Tensor<S> logp = log_softmax_lastdim(model.step_logits(visual, prefixes));

    std::vector<BeamHypothesis> candidates;
    for (const auto& h : beam)
      if (h.finished) candidates.push_back(h);
    for (std::size_t a = 0; a < alive.size(); ++a)
      for (int v = 0; v < vocab.size(); ++v) {
        if (!decodable(vocab, v)) continue;
        BeamHypothesis next = beam[alive[a]];
        next.log_prob += static_cast<double>(logp.value()[static_cast<Index>(a) * vocab.size() + v]);
        next.finished = v == Vocabulary::kEnd;
        if (!next.finished) next.ids.push_back(v);
        candidates.push_back(std::move(next));
      }
    const std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(width));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), beam_before);
    candidates.resize(keep);
    beam = std::move(candidates);
  }

  const BeamHypothesis& best = beam.front();
  DecodeResult result;
  result.ids = best.ids;
  if (best.finished) result.ids.push_back(Vocabulary::kEnd);
  result.finished = best.finished;
  result.log_prob = best.log_prob;
  result.text = decode_text(vocab, result.ids);
  return result;
}

#define TEXTREC_INSTANTIATE_RECOGNIZER(S)                                                    \
  template Tensor<S> classify(const Tensor<S>&, const LinearParams<S>&);                      \
  template class Recognizer<S>;                                                               \
  template DecodeResult decode_greedy(const Recognizer<S>&, const GrayImage&, bool);          \
  template DecodeResult decode_beam(const Recognizer<S>&, const GrayImage&, int);

TEXTREC_INSTANTIATE_RECOGNIZER(float)
TEXTREC_INSTANTIATE_RECOGNIZER(double)

}  // namespace textrec
