// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "textrec/config.hpp"
#include "textrec/manifest.hpp"
#include "textrec/recognizer.hpp"

namespace textrec {

/// scale * d^-0.5 * min(n^-0.5, n * warm^-1.5). n < 1 throws RangeError.
double lr_at(long n, long warm_n, long d_model, double scale = 1.0);

/// Adaptive-moment update with bias correction.
template <typename S>
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.98, double epsilon = 1e-9)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  /// Applies one update with learning rate `lr` to every parameter that has
  /// a gradient.
  void step(ParameterStore<S>& store, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<typename Tensor<S>::Array> m_, v_;
};

struct Example {
  GrayImage image;
  std::string label;
};

/// Teacher-forcing targets for `labels` over `steps` positions: the label
/// characters, END at index L, PAD (ignored) after.
std::vector<int> train_targets(std::span<const std::vector<int>> labels, int steps);

/// One forward/backward/update. Returns the loss. A non-finite loss throws
/// NumericError naming the step, lr and gradient norm; nothing is updated.
template <typename S>
double train_step(Recognizer<S>& model, std::span<const Example> batch, Adam<S>& optimizer,
                  double lr);

/// Procedural 5x3 dot-matrix glyph per character; distinct per charset.
using Glyph = std::array<std::uint8_t, 15>;
std::vector<Glyph> make_glyphs(const std::string& charset);

struct SynthSpec {
  std::string charset;
  int height = 16;
  int width = 64;
  int min_len = 1;
  int max_len = 5;
  int jitter = 2;

  static SynthSpec from(const Config& config);
  /// Throws ConfigError when max_len glyphs cannot fit the canvas.
  void validate() const;
};

/// Renders `label` with the glyph strip starting at column `x0`.
GrayImage render_text(const SynthSpec& spec, const std::vector<Glyph>& glyphs,
                      std::string_view label, int x0);

Example synth_sample(const SynthSpec& spec, Rng& rng);
std::vector<Example> synth_corpus(const SynthSpec& spec, int count, std::uint64_t seed);

/// Lowercase, keep only ASCII letters and digits.
std::string normalize_text(std::string_view text);

struct EvalRecord {
  std::string path;
  std::string label;
  std::string prediction;
  bool correct = false;
  std::string error;  // set when the image could not be read
};

struct EvalResult {
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  std::vector<EvalRecord> records;
};

/// Sequence accuracy under case-insensitive alphanumeric matching. `beam`
/// of 1 decodes greedily. An empty input throws ConfigError.
template <typename S>
EvalResult evaluate(const Recognizer<S>& model, std::span<const Example> examples, int beam = 1);
template <typename S>
EvalResult evaluate(const Recognizer<S>& model, const Manifest& manifest, int beam = 1);

std::vector<Example> load_examples(const Manifest& manifest);

struct LogRow {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> accuracy;
};

std::string format_log_csv(const std::vector<LogRow>& rows);

struct TrainResult {
  std::vector<LogRow> log;
  long steps_run = 0;
  double accuracy = 0.0;  // last evaluated training accuracy
  bool reached_perfect = false;
};

/// Main schedule for `train.steps` steps, then the optional constant-rate
/// phase. Batches are drawn by a seeded reshuffle per epoch. `on_row` sees
/// every log row as it is produced.
template <typename S>
TrainResult train(Recognizer<S>& model, std::span<const Example> examples,
                  const TrainConfig& train, std::uint64_t seed, bool finetune = false,
                  const std::function<void(const LogRow&)>& on_row = {});

struct AblationCase {
  std::string grid;  // "wiring", "depth" or "custom"
  std::string name;
  DecoderVariant variant;
  int layers = 3;
};

std::vector<AblationCase> wiring_grid();
std::vector<AblationCase> depth_grid();

/// Grid text: one case per line, "name key=value ...", keys sae, cbi,
/// fusion, layers (values as in the config file). The lines "wiring" and
/// "depth" expand the built-in grids. Unknown keys throw ConfigError.
std::vector<AblationCase> parse_ablation_grid(std::string_view text);

struct AblationRow {
  AblationCase config;
  double final_loss = 0.0;
  double accuracy = 0.0;
  long steps = 0;
  double seconds = 0.0;
};

/// Trains every case from the same seed and data and reports one row each.
std::vector<AblationRow> run_ablation(const std::vector<AblationCase>& cases, const Config& base,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string format_ablation_csv(const std::vector<AblationRow>& rows);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace textrec
