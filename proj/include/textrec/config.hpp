// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace textrec {

/// How the two position-enhanced features of a decoder block are merged.
enum class Fusion {
  kDsf,          // sigmoid gate, one gate shared by every block
  kDsfUnshared,  // sigmoid gate, one gate per block
  kAdd,
  kDot,
};

/// Wiring of one decoder block. The default is the full model: attention
/// enhancement on the position branch, position queries into both the
/// visual and the semantic branch, shared gated fusion.
struct DecoderVariant {
  bool sae_semantic = false;
  bool sae_visual = false;
  bool sae_position = true;
  bool cbi_semantic_visual = false;    // semantic queries visual
  bool cbi_position_visual = true;     // position queries visual
  bool cbi_position_semantic = true;   // position queries semantic
  bool cbi_semantic_position = false;  // semantic queries position
  Fusion fusion = Fusion::kDsf;

  int branch_count() const;
  bool operator==(const DecoderVariant&) const = default;
};

struct ModelConfig {
  int e_dim = 64;
  int heads = 2;
  int mdcdp_layers = 3;
  int max_len = 25;  // T
  int image_height = 16;
  int image_width = 64;
  std::string charset = "abcdefghij";
  int encoder_layers = 3;
  int encoder_ffn = 128;
  int decoder_ffn = 64;
  std::vector<int> backbone_channels = {16, 32};  // first two stages; the last is e_dim
  std::uint64_t seed = 7;
  DecoderVariant variant;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// Full-size settings (E=512, 8 heads, 32x128 input).
  static ModelConfig full_scale();

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  int batch = 8;
  int steps = 2000;
  int warmup = 200;
  double lr_scale = 0.25;
  int d_model = 0;  // 0: use model.e_dim
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  int finetune_steps = 0;
  double finetune_lr = 1e-5;
  int eval_every = 100;
  bool stop_at_perfect = true;

  bool operator==(const TrainConfig&) const = default;
};

struct SynthConfig {
  int samples = 32;
  int min_len = 1;
  int max_len = 5;
  std::uint64_t seed = 11;
  int jitter = 2;

  bool operator==(const SynthConfig&) const = default;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;

  bool operator==(const Config&) const = default;
};

/// Parses flat "section.key = value" text; '#' starts a comment. Keys not
/// present keep their defaults. Unknown keys throw ConfigError whose message
/// starts with the key.
Config parse_config(std::string_view text);
/// Canonical text form; parse_config(format_config(c)) == c.
std::string format_config(const Config& config);

Config load_config_file(const std::string& path);

std::string format_variant_sae(const DecoderVariant& v);
std::string format_variant_cbi(const DecoderVariant& v);
std::string fusion_name(Fusion f);

}  // namespace textrec
