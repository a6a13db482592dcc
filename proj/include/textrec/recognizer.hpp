// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "textrec/config.hpp"
#include "textrec/encoder.hpp"
#include "textrec/mdcdp.hpp"
#include "textrec/vocabulary.hpp"

namespace textrec {

/// Affine map E -> V. Logits stay raw; softmax is applied by consumers.
template <typename S>
Tensor<S> classify(const Tensor<S>& features, const LinearParams<S>& classifier);

/// Encoder branches, decoder stack and classifier with their parameters.
template <typename S>
class Recognizer {
 public:
  /// Parameters are initialised deterministically from `config.seed`.
  explicit Recognizer(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  ParameterStore<S>& parameters() { return store_; }
  const ParameterStore<S>& parameters() const { return store_; }
  const EncoderParams<S>& encoder() const { return encoder_; }
  const std::vector<MdcdpParams<S>>& decoder() const { return decoder_; }
  const LinearParams<S>& classifier() const { return classifier_; }

  Tensor<S> images(std::span<const GrayImage> batch) const;
  Tensor<S> encode(const Tensor<S>& images) const;

  /// Teacher-forced logits [N, steps, V]; `steps` = 0 means T. Position i
  /// predicts character i, and END at index L. Since every attention over
  /// positions is causal, the first `steps` rows equal those of the full
  /// T-step pass whenever steps > max label length.
  Tensor<S> forward_train(const Tensor<S>& images, std::span<const std::vector<int>> labels,
                          Index steps = 0, std::vector<LayerTrace<S>>* traces = nullptr) const;
  Tensor<S> forward_train_visual(const Tensor<S>& visual, std::span<const std::vector<int>> labels,
                                 Index steps = 0,
                                 std::vector<LayerTrace<S>>* traces = nullptr) const;

  /// Next-token logits [N, V] given equal-length decoded prefixes (character
  /// ids, no START). `visual` is [1 or N, P, E].
  Tensor<S> step_logits(const Tensor<S>& visual, std::span<const std::vector<int>> prefixes,
                        std::vector<LayerTrace<S>>* traces = nullptr) const;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  ParameterStore<S> store_;
  EncoderParams<S> encoder_;
  std::vector<MdcdpParams<S>> decoder_;
  LinearParams<S> classifier_;
};

/// Attention maps of the last decoder block for one decoding step.
struct StepAttention {
  std::vector<double> visual;    // P weights of the current query, head-averaged
  std::vector<double> semantic;  // t x t affinity, head-averaged, row-major
  int steps = 0;
};

struct DecodeResult {
  std::string text;
  std::vector<int> ids;  // decoded ids, END included when emitted
  double log_prob = 0.0;
  bool finished = false;
  std::vector<std::vector<double>> step_logits;  // greedy only
  std::vector<StepAttention> attention;          // greedy only, when requested
};

struct BeamHypothesis {
  std::vector<int> ids;
  double log_prob = 0.0;
  bool finished = false;
};

/// Ranking used by the beam: higher log-prob first, then finished before
/// unfinished, then shorter, then lexicographically smaller ids.
bool beam_before(const BeamHypothesis& a, const BeamHypothesis& b);

/// Step-wise argmax decoding over END and the charset, stopping at END or
/// after T steps.
template <typename S>
DecodeResult decode_greedy(const Recognizer<S>& model, const GrayImage& image,
                           bool record_attention = false);

/// Length-capped beam search over per-step log-softmax scores; finished
/// hypotheses are carried unchanged. Width < 1 throws ConfigError.
template <typename S>
DecodeResult decode_beam(const Recognizer<S>& model, const GrayImage& image, int width = 10);

inline constexpr int kDefaultBeamWidth = 10;

extern template class Recognizer<float>;
extern template class Recognizer<double>;

}  // namespace textrec
