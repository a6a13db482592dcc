// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <set>

#include "textrec/errors.hpp"
#include "textrec/training.hpp"
#include "support.hpp"

using namespace textrec;

namespace {

Config small_config() {
  Config c;
  c.model.e_dim = 16;
  c.model.heads = 2;
  c.model.mdcdp_layers = 1;
  c.model.max_len = 4;
  c.model.image_height = 8;
  c.model.image_width = 32;
  c.model.charset = "abcd";
  c.model.encoder_layers = 1;
  c.model.encoder_ffn = 16;
  c.model.decoder_ffn = 16;
  c.model.backbone_channels = {4, 8};
  c.synth.max_len = 3;
  c.synth.jitter = 1;
  c.train.batch = 8;
  c.train.warmup = 10;
  c.train.lr_scale = 1.0;
  return c;
}

std::vector<double> losses(const TrainResult& r) {
  std::vector<double> out;
  for (const auto& row : r.log) out.push_back(row.loss);
  return out;
}

}  // namespace

TEST_CASE("lr_at: worked values and the warm-up peak") {
  // 512^-0.5 = 0.04419417382..., times 10000^-0.5 and 2500 * 10000^-1.5.
  CHECK(std::abs(lr_at(10000, 10000, 512) - 4.419417382e-4) < 1e-12);
  CHECK(std::abs(lr_at(2500, 10000, 512) - 1.104854346e-4) < 1e-12);
  CHECK(lr_at(9999, 10000, 512) < lr_at(10000, 10000, 512));
  CHECK(lr_at(10001, 10000, 512) < lr_at(10000, 10000, 512));
  CHECK(lr_at(100, 200, 64, 0.5) == doctest::Approx(0.5 * lr_at(100, 200, 64)));
  // Linear before the peak, inverse square root after.
  CHECK(lr_at(400, 1000, 64) / lr_at(200, 1000, 64) == doctest::Approx(2.0));
  CHECK(lr_at(4000, 1000, 64) / lr_at(16000, 1000, 64) == doctest::Approx(2.0));
  CHECK_THROWS_AS(lr_at(0, 10, 64), RangeError);
  CHECK_THROWS_AS(lr_at(1, 0, 64), ConfigError);
}

TEST_CASE("adam: first step moves each coordinate by about lr against the gradient") {
  ParameterStore<double> store;
  Rng rng(1);
  Tensor<double> w = store.uniform("w", {3}, 1.0, rng);
  const auto before = w.value();
  w.zero_grad();
  sum(mul(w, Tensor<double>::from_values({3}, {2.0, -3.0, 0.5}))).backward();
  Adam<double> opt;
  opt.step(store, 0.01);
  CHECK(opt.steps() == 1);
  const auto delta = w.value() - before;
  CHECK(delta[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(delta[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(delta[2] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("train_targets and PAD positions") {
  const std::vector<std::vector<int>> labels = {{3, 4}, {}};
  CHECK(train_targets(labels, 4) == std::vector<int>{3, 4, 2, 0, 2, 0, 0, 0});
  CHECK_THROWS_AS(train_targets(labels, 2), LengthError);

  Rng rng(2);
  Tensor<double> logits = testing::random_tensor<double>({4, 6}, rng, 1.0, true);
  const int targets[4] = {3, Vocabulary::kEnd, Vocabulary::kPad, Vocabulary::kPad};
  cross_entropy(logits, targets, Vocabulary::kPad).backward();
  CHECK(logits.grad().segment(0, 12).abs().maxCoeff() > 0.0);
  CHECK((logits.grad().segment(12, 12) == 0.0).all());
}

TEST_CASE("train_step: loss falls on a fixed batch, runs repeat exactly") {
  const Config c = small_config();
  const auto batch = synth_corpus(SynthSpec::from(c), 8, 5);
  auto run = [&] {
    Recognizer<float> model(c.model);
    Adam<float> opt;
    std::vector<double> trace;
    for (long n = 1; n <= 50; ++n) trace.push_back(train_step(model, batch, opt, lr_at(n, 10, 16)));
    return trace;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 5; ++i) {
    head += a[static_cast<std::size_t>(i)];
    tail += a[a.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(tail < 0.7 * head);

  Recognizer<float> model(c.model);
  Adam<float> opt;
  Tensor<float> bias = model.classifier().bias;
  bias.mutable_value()[3] = std::nanf("");
  const auto weight_before = model.classifier().weight.value();
  try {
    train_step(model, batch, opt, 1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("lr") != std::string::npos);
  }
  CHECK((model.classifier().weight.value() == weight_before).all());
  CHECK(opt.steps() == 0);
  CHECK_THROWS_AS(train_step(model, std::span<const Example>{}, opt, 1e-3), ConfigError);
}

TEST_CASE("glyphs and synthetic samples") {
  const auto glyphs = make_glyphs("abcdefghij0123456789");
  std::set<Glyph> unique(glyphs.begin(), glyphs.end());
  CHECK(unique.size() == glyphs.size());
  for (const Glyph& g : glyphs) {
    int lit = 0;
    for (auto b : g) lit += b;
    CHECK(lit >= 5);
  }

  const Config c = small_config();
  const SynthSpec spec = SynthSpec::from(c);
  std::set<std::vector<float>> images;
  const auto cg = make_glyphs(spec.charset);
  for (char ch : spec.charset) images.insert(render_text(spec, cg, std::string(1, ch), 1).pixels);
  CHECK(images.size() == spec.charset.size());
  CHECK(render_text(spec, cg, "a", 1).pixels == render_text(spec, cg, "a", 1).pixels);

  const auto corpus = synth_corpus(spec, 40, 9);
  for (const auto& e : corpus) {
    CHECK(e.label.size() >= 1u);
    CHECK(e.label.size() <= 3u);
    CHECK(e.image.width == 32);
    CHECK(e.image.height == 8);
  }
  const auto again = synth_corpus(spec, 40, 9);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(corpus[i].label == again[i].label);
    CHECK(corpus[i].image.pixels == again[i].image.pixels);
  }

  SynthSpec cramped = spec;
  cramped.max_len = 20;
  CHECK_THROWS_AS(cramped.validate(), ConfigError);
}

TEST_CASE("evaluate: normalization, all-wrong model, empty input") {
  CHECK(normalize_text("Hello, World-42!") == "helloworld42");

  const Config c = small_config();
  Recognizer<float> model(c.model);
  Tensor<float> w = model.classifier().weight;
  Tensor<float> b = model.classifier().bias;
  w.mutable_value().setZero();
  b.mutable_value().setZero();
  b.mutable_value()[Vocabulary::kEnd] = 5.0f;
  const auto corpus = synth_corpus(SynthSpec::from(c), 6, 3);
  const auto r = evaluate(model, corpus);
  CHECK(r.accuracy == 0.0);
  CHECK(r.total == 6);
  CHECK(r.records.size() == 6u);
  CHECK(r.records[0].prediction.empty());

  const std::vector<Example> blank = {{corpus[0].image, "?!"}};
  CHECK(evaluate(model, blank).accuracy == 1.0);
  CHECK_THROWS_AS(evaluate(model, std::span<const Example>{}), ConfigError);
}

TEST_CASE("train: log layout, determinism, fine-tune phase") {
  Config c = small_config();
  c.train.steps = 12;
  c.train.eval_every = 6;
  c.train.stop_at_perfect = false;
  c.train.finetune_steps = 3;
  c.train.finetune_lr = 1e-4;
  const auto data = synth_corpus(SynthSpec::from(c), 8, 4);

  Recognizer<float> a(c.model), b(c.model);
  int seen = 0;
  const auto ra = train(a, data, c.train, 1, true, [&](const LogRow&) { ++seen; });
  const auto rb = train(b, data, c.train, 1, true);
  CHECK(ra.steps_run == 15);
  CHECK(seen == static_cast<int>(ra.log.size()));
  CHECK(losses(ra) == losses(rb));
  CHECK(ra.log[5].accuracy.has_value());
  CHECK_FALSE(ra.log[4].accuracy.has_value());
  CHECK(ra.log.back().lr == 1e-4);

  Recognizer<float> d(c.model);
  const auto rd = train(d, data, c.train, 2, false);
  CHECK(rd.steps_run == 12);
  CHECK(losses(rd) != losses(ra));

  const std::string csv = format_log_csv(ra.log);
  CHECK(csv.rfind("step,lr,loss,acc\n", 0) == 0);
  CHECK(csv.find("\n6,") != std::string::npos);
}

TEST_CASE("ablation grids and parsing") {
  const auto t1 = wiring_grid();
  const auto t2 = depth_grid();
  CHECK(t1.size() == 14u);
  CHECK(t2.size() == 4u);
  std::set<std::string> names;
  for (const auto& g : t1) names.insert(g.name);
  CHECK(names.size() == 14u);
  for (int i = 0; i < 4; ++i) CHECK(t2[static_cast<std::size_t>(i)].layers == i + 1);
  CHECK(t1.back().variant == DecoderVariant{});

  const auto parsed = parse_ablation_grid(
      "# custom\nmine sae=pos cbi=pv,ps fusion=add layers=2\n\ndepth\n");
  REQUIRE(parsed.size() == 5u);
  CHECK(parsed[0].name == "mine");
  CHECK(parsed[0].layers == 2);
  CHECK(parsed[0].variant.fusion == Fusion::kAdd);
  CHECK(parsed[1].grid == "depth");
  CHECK_THROWS_AS(parse_ablation_grid("x colour=red"), ConfigError);
  CHECK_THROWS_AS(parse_ablation_grid("x fusion=sum"), ConfigError);
}

TEST_CASE("add and gated fusion give different blocks") {
  Rng rng(6);
  ModelConfig mc;
  mc.e_dim = 8;
  mc.heads = 2;
  mc.mdcdp_layers = 1;
  mc.max_len = 4;
  mc.decoder_ffn = 8;
  ParameterStore<double> store;
  const auto layers = make_decoder(store, mc, rng);
  auto added = layers[0];
  added.fusion = Fusion::kAdd;
  const auto pos = testing::random_tensor<double>({1, 3, 8}, rng);
  const auto vis = testing::random_tensor<double>({1, 4, 8}, rng);
  const auto sem = testing::random_tensor<double>({1, 3, 8}, rng);
  const auto mask = causal_mask(3, 3);
  const auto g = mdcdp_forward(pos, vis, sem, mask, layers[0]);
  const auto s = mdcdp_forward(pos, vis, sem, mask, added);
  CHECK((g.value() - s.value()).abs().maxCoeff() > 1e-3);
}

TEST_CASE("ablation run: every row trains and the CSV is labelled") {
  Config c = small_config();
  c.train.steps = 2;
  c.synth.samples = 4;
  auto cases = depth_grid();
  cases.resize(2);
  const auto rows = run_ablation(cases, c);
  REQUIRE(rows.size() == 2u);
  for (const auto& r : rows) {
    CHECK(r.steps == 2);
    CHECK(std::isfinite(r.final_loss));
  }
  const std::string csv = format_ablation_csv(rows);
  CHECK(csv.find("not comparable") != std::string::npos);
  CHECK(csv.find("grid,case,sae,cbi,fusion,layers") != std::string::npos);
  std::istringstream lines(csv);
  std::string line;
  while (std::getline(lines, line))
    if (line[0] != '#') CHECK(std::count(line.begin(), line.end(), ',') == 10);
  CHECK(csv.find(",pv+ps,") != std::string::npos);
}
