// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "textrec/errors.hpp"

namespace textrec {

double lr_at(long n, long warm_n, long d_model, double scale) {
  if (n < 1) throw RangeError("learning-rate step must be >= 1, got " + std::to_string(n));
  if (warm_n < 1) throw ConfigError("warm-up length must be >= 1, got " + std::to_string(warm_n));
  if (d_model < 1) throw ConfigError("d_model must be >= 1, got " + std::to_string(d_model));
  const double nd = static_cast<double>(n), w = static_cast<double>(warm_n);
  return scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(nd), nd * std::pow(w, -1.5));
}

template <typename S>
void Adam<S>::step(ParameterStore<S>& store, double lr) {
  const auto& entries = store.entries();
  if (m_.size() != entries.size()) {
    m_.assign(entries.size(), {});
    v_.assign(entries.size(), {});
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<S> p = entries[i].tensor;
    if (!p.has_grad()) continue;
    const typename Tensor<S>::Array g = p.grad();
    if (m_[i].size() == 0) {
      m_[i] = Tensor<S>::Array::Zero(g.size());
      v_[i] = Tensor<S>::Array::Zero(g.size());
    }
    m_[i] = S(beta1_) * m_[i] + S(1 - beta1_) * g;
    v_[i] = S(beta2_) * v_[i] + S(1 - beta2_) * g.square();
    p.mutable_value() -=
        S(lr) * (m_[i] / S(c1)) / ((v_[i] / S(c2)).sqrt() + S(epsilon_));
  }
}

std::vector<int> train_targets(std::span<const std::vector<int>> labels, int steps) {
  std::vector<int> targets(labels.size() * static_cast<std::size_t>(steps), Vocabulary::kPad);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto& l = labels[n];
    if (static_cast<int>(l.size()) >= steps) {
      throw LengthError("sample " + std::to_string(n) + ": label of length " +
                        std::to_string(l.size()) + " needs more than " + std::to_string(steps) +
                        " steps");
    }
    int* row = targets.data() + n * static_cast<std::size_t>(steps);
    std::copy(l.begin(), l.end(), row);
    row[l.size()] = Vocabulary::kEnd;
  }
  return targets;
}

template <typename S>
double train_step(Recognizer<S>& model, std::span<const Example> batch, Adam<S>& optimizer,
                  double lr) {
  if (batch.empty()) throw ConfigError("empty training batch");
  const Vocabulary& vocab = model.vocabulary();
  std::vector<std::vector<int>> labels;
  std::vector<GrayImage> images;
  std::size_t longest = 0;
  for (const auto& e : batch) {
    labels.push_back(vocab.encode(e.label));
    images.push_back(e.image);
    longest = std::max(longest, e.label.size());
  }
  const int steps = static_cast<int>(longest) + 1;
  if (steps > model.config().max_len) {
    throw LengthError("label of length " + std::to_string(longest) + " exceeds T - 1 = " +
                      std::to_string(model.config().max_len - 1));
  }
  // Causal attention makes rows past the longest END identical to the
  // T-step pass, and they only carry PAD targets, so they are skipped.
  const Tensor<S> logits = model.forward_train(model.images(images), labels, steps);
  const std::vector<int> targets = train_targets(labels, steps);
  const Index n = static_cast<Index>(batch.size());
  const Tensor<S> loss =
      cross_entropy(reshape(logits, {n * steps, vocab.size()}), targets, Vocabulary::kPad);
  const double value = static_cast<double>(loss.item());

  auto& store = model.parameters();
  loss.backward();
  double norm2 = 0.0;
  for (const auto& e : store.entries())
    if (e.tensor.has_grad()) norm2 += static_cast<double>(e.tensor.grad().square().sum());
  if (!std::isfinite(value) || !std::isfinite(norm2)) {
    store.zero_grads();
    std::ostringstream msg;
    msg << "non-finite loss at step " << optimizer.steps() + 1 << ": loss=" << value
        << " lr=" << lr << " grad_norm=" << std::sqrt(norm2);
    throw NumericError(msg.str());
  }
  optimizer.step(store, lr);
  store.zero_grads();
  return value;
}

std::vector<Glyph> make_glyphs(const std::string& charset) {
  std::vector<Glyph> glyphs;
  std::set<std::uint16_t> used;
  for (char c : charset) {
    Rng rng(hash_seed(0x61797068u, std::string(1, c)));
    std::uint16_t bits = 0;
    do {
      bits = static_cast<std::uint16_t>(rng.next() & 0x7fff);
    } while (std::popcount(bits) < 5 || used.count(bits));
    used.insert(bits);
    Glyph g{};
    for (int i = 0; i < 15; ++i) g[static_cast<std::size_t>(i)] = (bits >> i) & 1;
    glyphs.push_back(g);
  }
  return glyphs;
}

namespace {

// Dot size in pixels and the horizontal advance per character.
int glyph_scale(int height) { return std::max(1, (height - 2) / 5); }
int glyph_advance(int height) { return 4 * glyph_scale(height); }

}  // namespace

SynthSpec SynthSpec::from(const Config& config) {
  SynthSpec s;
  s.charset = config.model.charset;
  s.height = config.model.image_height;
  s.width = config.model.image_width;
  s.min_len = config.synth.min_len;
  s.max_len = config.synth.max_len;
  s.jitter = config.synth.jitter;
  return s;
}

void SynthSpec::validate() const {
  if (charset.empty()) throw ConfigError("synth: empty charset");
  if (min_len < 1 || max_len < min_len) {
    throw ConfigError("synth.min_len/max_len: need 1 <= min_len <= max_len");
  }
  if (jitter < 0) throw ConfigError("synth.jitter: must be non-negative");
  const int needed = 1 + jitter + max_len * glyph_advance(height);
  if (height < 7 || needed > width) {
    throw ConfigError("synth.max_len: " + std::to_string(max_len) + " glyphs need a " +
                      std::to_string(needed) + "-pixel canvas, have " + std::to_string(width) +
                      "x" + std::to_string(height));
  }
}

GrayImage render_text(const SynthSpec& spec, const std::vector<Glyph>& glyphs,
                      std::string_view label, int x0) {
  const int scale = glyph_scale(spec.height), advance = glyph_advance(spec.height);
  const int y0 = (spec.height - 5 * scale) / 2;
  GrayImage image(spec.width, spec.height, 0.0f);
  for (std::size_t k = 0; k < label.size(); ++k) {
    const auto pos = spec.charset.find(label[k]);
    if (pos == std::string::npos) {
      throw RangeError(std::string("character '") + label[k] + "' is not in the charset");
    }
    const Glyph& g = glyphs[pos];
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) {
        if (!g[static_cast<std::size_t>(r * 3 + c)]) continue;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) {
            const int x = x0 + static_cast<int>(k) * advance + c * scale + dx;
            const int y = y0 + r * scale + dy;
            if (x >= 0 && x < spec.width && y >= 0 && y < spec.height) image.at(x, y) = 1.0f;
          }
      }
  }
  return image;
}

Example synth_sample(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const int span = spec.max_len - spec.min_len + 1;
  const int len = spec.min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
  Example e;
  for (int i = 0; i < len; ++i) e.label.push_back(spec.charset[rng.below(spec.charset.size())]);
  const int x0 = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.jitter) + 1));
  e.image = render_text(spec, make_glyphs(spec.charset), e.label, x0);
  return e;
}

std::vector<Example> synth_corpus(const SynthSpec& spec, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < count; ++i) out.push_back(synth_sample(spec, rng));
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

std::vector<Example> load_examples(const Manifest& manifest) {
  std::vector<Example> out;
  for (const auto& e : manifest.entries) out.push_back({read_pgm(manifest.resolve(e).string()), e.label});
  return out;
}

namespace {

template <typename S>
std::string predict(const Recognizer<S>& model, const GrayImage& image, int beam) {
  return beam <= 1 ? decode_greedy(model, image).text : decode_beam(model, image, beam).text;
}

void finish(EvalResult& r) {
  r.total = static_cast<int>(r.records.size());
  r.correct = static_cast<int>(
      std::count_if(r.records.begin(), r.records.end(), [](const auto& x) { return x.correct; }));
  r.accuracy = static_cast<double>(r.correct) / r.total;
}

}  // namespace

template <typename S>
EvalResult evaluate(const Recognizer<S>& model, std::span<const Example> examples, int beam) {
  if (examples.empty()) throw ConfigError("evaluation set is empty");
  EvalResult r;
  for (const auto& e : examples) {
    EvalRecord rec{"", e.label, predict(model, e.image, beam), false, ""};
    rec.correct = normalize_text(rec.prediction) == normalize_text(rec.label);
    r.records.push_back(std::move(rec));
  }
  finish(r);
  return r;
}

template <typename S>
EvalResult evaluate(const Recognizer<S>& model, const Manifest& manifest, int beam) {
  if (manifest.entries.empty()) throw ConfigError("evaluation manifest is empty");
  EvalResult r;
  for (const auto& e : manifest.entries) {
    EvalRecord rec{e.path, e.label, "", false, ""};
    try {
      rec.prediction = predict(model, read_pgm(manifest.resolve(e).string()), beam);
      rec.correct = normalize_text(rec.prediction) == normalize_text(rec.label);
    } catch (const IoError& err) {
      rec.error = err.what();
    }
    r.records.push_back(std::move(rec));
  }
  finish(r);
  return r;
}

std::string format_log_csv(const std::vector<LogRow>& rows) {
  std::ostringstream out;
  out.precision(9);
  out << "step,lr,loss,acc\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.lr << ',' << r.loss;
    if (r.accuracy) out << ',' << *r.accuracy;
    out << '\n';
  }
  return out.str();
}

template <typename S>
TrainResult train(Recognizer<S>& model, std::span<const Example> examples,
                  const TrainConfig& cfg, std::uint64_t seed, bool finetune,
                  const std::function<void(const LogRow&)>& on_row) {
  if (examples.empty()) throw ConfigError("training set is empty");
  if (cfg.batch < 1) throw ConfigError("train.batch: must be >= 1");
  if (cfg.steps < 0 || cfg.finetune_steps < 0) throw ConfigError("train.steps: must be >= 0");
  const long d_model = cfg.d_model > 0 ? cfg.d_model : model.config().e_dim;
  Adam<S> optimizer(cfg.beta1, cfg.beta2, cfg.epsilon);
  Rng rng(seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch),
                                                       examples.size());
  auto next_batch = [&] {
    std::vector<Example> batch;
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      batch.push_back(examples[order[cursor++]]);
    }
    return batch;
  };

  TrainResult result;
  const long total = cfg.steps + (finetune ? cfg.finetune_steps : 0);
  for (long n = 1; n <= total; ++n) {
    const double lr = n <= cfg.steps ? lr_at(n, cfg.warmup, d_model, cfg.lr_scale) : cfg.finetune_lr;
    const auto batch = next_batch();
    LogRow row{n, lr, train_step<S>(model, batch, optimizer, lr), std::nullopt};
    const bool eval_now = (cfg.eval_every > 0 && n % cfg.eval_every == 0) || n == total;
    if (eval_now) {
      result.accuracy = evaluate(model, examples, 1).accuracy;
      row.accuracy = result.accuracy;
    }
    result.log.push_back(row);
    result.steps_run = n;
    if (on_row) on_row(row);
    if (eval_now && result.accuracy == 1.0) {
      result.reached_perfect = true;
      if (cfg.stop_at_perfect) break;
    }
  }
  return result;
}

namespace {

AblationCase make_case(std::string grid, std::string name, bool sem, bool vis, bool pos,
                       bool sv, bool pv, bool ps, bool sp, Fusion fusion, int layers = 3) {
  DecoderVariant v;
  v.sae_semantic = sem;
  v.sae_visual = vis;
  v.sae_position = pos;
  v.cbi_semantic_visual = sv;
  v.cbi_position_visual = pv;
  v.cbi_position_semantic = ps;
  v.cbi_semantic_position = sp;
  v.fusion = fusion;
  return {std::move(grid), std::move(name), v, layers};
}

}  // namespace

std::vector<AblationCase> wiring_grid() {
  const Fusion dsf = Fusion::kDsf;
  return {
      make_case("wiring", "w01", false, false, false, false, true, true, false, dsf),
      make_case("wiring", "w02", true, false, false, false, true, true, false, dsf),
      make_case("wiring", "w03", false, true, false, false, true, true, false, dsf),
      make_case("wiring", "w04", true, true, false, false, true, true, false, dsf),
      make_case("wiring", "w05", true, true, true, false, true, true, false, dsf),
      make_case("wiring", "w06", false, false, true, false, true, false, false, dsf),
      make_case("wiring", "w07", false, false, true, true, false, false, false, dsf),
      make_case("wiring", "w08", false, false, true, true, false, true, false, dsf),
      make_case("wiring", "w09", false, false, true, true, true, false, false, dsf),
      make_case("wiring", "w10", false, false, true, false, true, false, true, dsf),
      make_case("wiring", "w11", false, false, true, false, true, true, false, Fusion::kAdd),
      make_case("wiring", "w12", false, false, true, false, true, true, false, Fusion::kDot),
      make_case("wiring", "w13", false, false, true, false, true, true, false,
                Fusion::kDsfUnshared),
      make_case("wiring", "w14", false, false, true, false, true, true, false, dsf),
  };
}

std::vector<AblationCase> depth_grid() {
  std::vector<AblationCase> out;
  for (int layers = 1; layers <= 4; ++layers) {
    out.push_back(make_case("depth", "layers" + std::to_string(layers), false, false, true,
                            false, true, true, false, Fusion::kDsf, layers));
  }
  return out;
}

std::vector<AblationCase> parse_ablation_grid(std::string_view text) {
  std::vector<AblationCase> cases;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::string name;
    if (!(words >> name)) continue;
    if (name == "wiring" || name == "depth") {
      auto grid = name == "wiring" ? wiring_grid() : depth_grid();
      cases.insert(cases.end(), grid.begin(), grid.end());
      continue;
    }
    // Toggles reuse the config parser so the value syntax matches config files.
    std::string config_text, word;
    int layers = ModelConfig{}.mdcdp_layers;
    while (words >> word) {
      const auto eq = word.find('=');
      const std::string key = word.substr(0, eq);
      if (eq == std::string::npos || (key != "sae" && key != "cbi" && key != "fusion" &&
                                      key != "layers")) {
        throw ConfigError(key + ": unknown ablation toggle (grid line " + std::to_string(number) +
                          ")");
      }
      const std::string value = word.substr(eq + 1);
      if (key == "layers") {
        config_text += "model.mdcdp_layers = " + value + "\n";
      } else {
        std::string list = value;
        std::replace(list.begin(), list.end(), '+', ',');
        config_text += "model." + key + " = " + list + "\n";
      }
    }
    const Config parsed = parse_config(config_text);
    parsed.model.validate();
    layers = parsed.model.mdcdp_layers;
    cases.push_back({"custom", name, parsed.model.variant, layers});
  }
  if (cases.empty()) throw ConfigError("ablation grid is empty");
  return cases;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCase>& cases, const Config& base,
                                      const std::function<void(const AblationRow&)>& on_row) {
  const SynthSpec spec = SynthSpec::from(base);
  const auto data = synth_corpus(spec, base.synth.samples, base.synth.seed);
  std::vector<AblationRow> rows;
  for (const auto& c : cases) {
    ModelConfig mc = base.model;
    mc.variant = c.variant;
    mc.mdcdp_layers = c.layers;
    const auto start = std::chrono::steady_clock::now();
    Recognizer<float> model(mc);
    TrainConfig tc = base.train;
    tc.stop_at_perfect = false;
    tc.eval_every = 0;
    const TrainResult r = train(model, data, tc, base.synth.seed);
    AblationRow row;
    row.config = c;
    row.final_loss = r.log.empty() ? 0.0 : r.log.back().loss;
    row.accuracy = r.accuracy;
    row.steps = r.steps_run;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  // Lists use '+' so that each cell stays one CSV field; the grid parser
  // reads them back.
  auto cell = [](std::string s) {
    std::replace(s.begin(), s.end(), ',', '+');
    return s;
  };
  std::ostringstream out;
  out << "# desk-scale synthetic runs; values are not comparable to published benchmark "
         "accuracies\n";
  out << "grid,case,sae,cbi,fusion,layers,steps,final_loss,train_acc,seconds,note\n";
  for (const auto& r : rows) {
    const auto& v = r.config.variant;
    const std::string fusion = v.branch_count() == 2 ? fusion_name(v.fusion) : "none";
    out << r.config.grid << ',' << r.config.name << ',' << cell(format_variant_sae(v)) << ','
        << cell(format_variant_cbi(v)) << ',' << fusion << ',' << r.config.layers << ',' << r.steps
        << ',' << r.final_loss << ',' << r.accuracy << ',' << r.seconds
        << ",desk-scale not comparable\n";
  }
  return out.str();
}

#define TEXTREC_INSTANTIATE_TRAINING(S)                                                      \
  template class Adam<S>;                                                                     \
  template double train_step(Recognizer<S>&, std::span<const Example>, Adam<S>&, double);     \
  template EvalResult evaluate(const Recognizer<S>&, std::span<const Example>, int);          \
  template EvalResult evaluate(const Recognizer<S>&, const Manifest&, int);                   \
  template TrainResult train(Recognizer<S>&, std::span<const Example>, const TrainConfig&,    \
                             std::uint64_t, bool, const std::function<void(const LogRow&)>&);

TEXTREC_INSTANTIATE_TRAINING(float)
TEXTREC_INSTANTIATE_TRAINING(double)

}  // namespace textrec
