// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "textrec/augment.hpp"
#include "textrec/checkpoint.hpp"
#include "textrec/errors.hpp"
#include "textrec/training.hpp"
#include "cli.hpp"
#include "recognizer_oracles.hpp"
#include "support.hpp"

using namespace textrec;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ModelConfig tiny(int max_len, std::uint64_t seed) {
  ModelConfig c;
  c.e_dim = 8;
  c.heads = 2;
  c.mdcdp_layers = 2;
  c.max_len = max_len;
  c.image_height = 8;
  c.image_width = 16;
  c.charset = "abcd";
  c.encoder_layers = 1;
  c.encoder_ffn = 8;
  c.decoder_ffn = 8;
  c.backbone_channels = {4, 4};
  c.seed = seed;
  return c;
}

GrayImage noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  GrayImage img(w, h);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

using T = Tensor<double>;

// Every trainable tensor of a decoder stack, each shared tensor once, with
// FFN biases moved off the ReLU kink.
std::vector<T> decoder_tensors(std::vector<MdcdpParams<double>>& layers, Rng& rng) {
  std::vector<T> out;
  std::set<const void*> seen;
  auto add = [&](const T& t) {
    if (seen.insert(t.node().get()).second) out.push_back(t);
  };
  for (auto& l : layers) {
    for (auto* b : {&l.sae_position, &l.sae_semantic, &l.sae_visual, &l.cbi_position_visual,
                    &l.cbi_position_semantic, &l.cbi_semantic_visual, &l.cbi_semantic_position}) {
      if (!b->has_value()) continue;
      testing::bias_away_from_kink(**b, rng);
      for (const T& t : testing::block_tensors(**b)) add(t);
    }
    if (l.gate.weight.size() > 0) {
      add(l.gate.weight);
      add(l.gate.bias);
    }
  }
  return out;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  std::string worst_name;
  auto note = [&](const char* name, const testing::GradReport& r) {
    if (r.max_relative >= worst) {
      worst = r.max_relative;
      worst_name = name;
    }
  };
  const auto causal = causal_mask(4, 4);

  {
    ParameterStore<double> store;
    auto p = make_attention_block(store, "sae", 8, 4, 2, 8, rng);
    testing::bias_away_from_kink(p, rng);
    T x = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    auto in = testing::block_tensors(p);
    in.push_back(x);
    note("sae", testing::gradcheck([&] { return sae(x, causal, p); }, in, rng));
  }
  {
    ParameterStore<double> store;
    auto p = make_attention_block(store, "cbi_s", 8, 8, 2, 8, rng);
    testing::bias_away_from_kink(p, rng);
    T pos = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    T sem = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    auto in = testing::block_tensors(p);
    in.push_back(pos);
    in.push_back(sem);
    note("cbi_s", testing::gradcheck([&] { return cbi_s(pos, sem, causal, p).output; }, in, rng));
  }
  {
    ParameterStore<double> store;
    auto p = make_attention_block(store, "cbi_v", 8, 8, 2, 8, rng);
    testing::bias_away_from_kink(p, rng);
    T pos = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    T vis = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    auto in = testing::block_tensors(p);
    in.push_back(pos);
    in.push_back(vis);
    note("cbi_v", testing::gradcheck([&] { return cbi_v(pos, vis, p).output; }, in, rng));
  }
  {
    ParameterStore<double> store;
    const auto gate = make_gate(store, "g", 8, rng);
    T a = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    T b = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    note("dsf", testing::gradcheck([&] { return dsf(a, b, gate); }, {a, b, gate.weight, gate.bias}, rng));
  }
  {
    ParameterStore<double> store;
    const auto lin = make_linear(store, "classifier", 8, 6, rng);
    T x = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    note("classifier", testing::gradcheck([&] { return log_softmax_lastdim(classify(x, lin)); },
                                          {x, lin.weight, lin.bias}, rng));
  }
  {
    ModelConfig c = tiny(4, 1);
    ParameterStore<double> store;
    auto layers = make_decoder(store, c, rng);
    const auto head = make_linear(store, "classifier", 8, 7, rng);
    T pos = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    T vis = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    T sem = testing::random_tensor<double>({1, 4, 8}, rng, 1.0, true);
    auto in = decoder_tensors(layers, rng);
    for (const T& t : {pos, vis, sem, head.weight, head.bias}) in.push_back(t);
    note("stack", testing::gradcheck(
                      [&] {
                        return log_softmax_lastdim(
                            classify(stack_forward(pos, vis, sem, causal, layers), head));
                      },
                      in, rng));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0,
          "max rel err " + fmt("%.2e", worst) + " (" + worst_name + "), " + fmt("%.1f s", secs)};
}

Outcome causality() {
  const Recognizer<double> model(ModelConfig{});
  const auto x = model.images(std::vector<GrayImage>{noise_image(64, 16, 5)});
  const std::vector<std::vector<int>> base = {{3, 4, 5, 6, 7, 8}};
  const auto ref = model.forward_train(x, base);
  const Index steps = ref.dim(1), v = ref.dim(2);
  double before = 0.0, after = 0.0;
  for (std::size_t j = 0; j < base[0].size(); ++j) {
    auto changed = base;
    changed[0][j] = 12;
    const auto out = model.forward_train(x, changed);
    double moved = 0.0;
    for (Index s = 0; s < steps; ++s)
      for (Index k = 0; k < v; ++k) {
        const double d = std::abs(out.value()[s * v + k] - ref.value()[s * v + k]);
        if (s <= static_cast<Index>(j)) {
          before = std::max(before, d);
        } else {
          moved = std::max(moved, d);
        }
      }
    after = std::max(after, moved);
  }
  return {before < 1e-6 && after > 0.0,
          "max |dlogit| at steps <= j: " + fmt("%.2e", before) + ", after: " + fmt("%.2e", after)};
}

template <typename S>
double consistency_gap(const Recognizer<S>& model, const GrayImage& img, std::size_t* steps) {
  const auto r = decode_greedy(model, img);
  const auto vis = model.encode(model.images(std::vector<GrayImage>{img}));
  const Index v = model.vocabulary().size();
  std::vector<int> prefix;
  double worst = 0.0;
  for (std::size_t t = 0; t < r.step_logits.size(); ++t) {
    const auto tf = model.forward_train_visual(vis, std::vector<std::vector<int>>{prefix},
                                               static_cast<Index>(t + 1));
    for (Index k = 0; k < v; ++k)
      worst = std::max(worst, std::abs(r.step_logits[t][static_cast<std::size_t>(k)] -
                                       static_cast<double>(tf.value()[static_cast<Index>(t) * v + k])));
    if (r.ids[t] != Vocabulary::kEnd) prefix.push_back(r.ids[t]);
  }
  *steps += r.step_logits.size();
  return worst;
}

Outcome consistency() {
  double worst = 0.0;
  std::size_t steps = 0;
  for (std::uint64_t seed : {1u, 2u}) {
    ModelConfig c;
    c.seed = seed;
    const Recognizer<float> f(c);
    worst = std::max(worst, consistency_gap(f, noise_image(64, 16, seed), &steps));
    const Recognizer<double> d(c);
    worst = std::max(worst, consistency_gap(d, noise_image(64, 16, seed + 10), &steps));
  }
  return {worst < 1e-5, "max |greedy - teacher forced| " + fmt("%.2e", worst) + " over " +
                            std::to_string(steps) + " steps (float and double)"};
}

Outcome beam_correctness() {
  int agree = 0, greedy_agree = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Recognizer<double> model(tiny(3, seed));
    Tensor<double> w = model.classifier().weight;
    w.mutable_value() *= 3.0;
    const GrayImage img = noise_image(16, 8, seed);
    const auto vis = model.encode(model.images(std::vector<GrayImage>{img}));
    const auto all = testing::enumerate_all(model, vis);
    const auto best = *std::min_element(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return beam_before({a.ids, a.log_prob, a.finished}, {b.ids, b.log_prob, b.finished});
    });
    std::vector<int> expect = best.ids;
    if (best.finished) expect.push_back(Vocabulary::kEnd);
    const auto wide = decode_beam(model, img, 64);
    agree += wide.ids == expect && std::abs(wide.log_prob - best.log_prob) < 1e-9;
    const auto greedy = decode_greedy(model, img);
    greedy_agree += decode_beam(model, img, 1).ids == greedy.ids;
    ++total;
  }
  const bool ok = agree == total && greedy_agree == total && kDefaultBeamWidth == 10;
  return {ok, "width 64 = exhaustive on " + std::to_string(agree) + "/" + std::to_string(total) +
                  ", width 1 = greedy on " + std::to_string(greedy_agree) + "/" +
                  std::to_string(total) + ", default width " + std::to_string(kDefaultBeamWidth)};
}

Outcome dsf_properties() {
  Rng rng(202);
  ModelConfig c = tiny(4, 2);
  c.mdcdp_layers = 3;
  ParameterStore<double> store;
  auto layers = make_decoder(store, c, rng);

  // Gate range and convexity on random inputs.
  bool in_range = true, between = true;
  for (int trial = 0; trial < 20; ++trial) {
    const T a = testing::random_tensor<double>({2, 4, 8}, rng, 2.0);
    const T b = testing::random_tensor<double>({2, 4, 8}, rng, 2.0);
    const auto g = dsf_gate(a, b, layers[0].gate).value();
    in_range = in_range && (g > 0.0).all() && (g < 1.0).all();
    const auto o = dsf(a, b, layers[0].gate).value();
    between = between && (o >= a.value().min(b.value()) - 1e-12).all() &&
              (o <= a.value().max(b.value()) + 1e-12).all();
  }

  const T pos = testing::random_tensor<double>({1, 4, 8}, rng);
  const T vis = testing::random_tensor<double>({1, 5, 8}, rng);
  const T sem = testing::random_tensor<double>({1, 4, 8}, rng);
  const T r = testing::random_tensor<double>({1, 4, 8}, rng);
  const auto mask = causal_mask(4, 4);

  // Shared gradient against the sum over per-block copies of the gate.
  T shared_w = layers[0].gate.weight;
  shared_w.zero_grad();
  sum(mul(stack_forward(pos, vis, sem, mask, layers), r)).backward();
  const Eigen::ArrayXd shared = shared_w.grad();
  auto copies = layers;
  std::vector<T> copy_w;
  for (auto& l : copies) {
    l.gate.weight = T(l.gate.weight.shape(), l.gate.weight.value(), true);
    l.gate.bias = T(l.gate.bias.shape(), l.gate.bias.value(), true);
    copy_w.push_back(l.gate.weight);
  }
  sum(mul(stack_forward(pos, vis, sem, mask, copies), r)).backward();
  Eigen::ArrayXd summed = Eigen::ArrayXd::Zero(shared.size());
  for (const T& w : copy_w) summed += w.grad();
  const double copies_gap = (shared - summed).abs().maxCoeff() / shared.abs().maxCoeff();

  // Explicit per-site sum for one block: dW = sum_t [a;b]_t^T (G . (a-b) . g . (1-g)).
  const auto& l0 = layers[0];
  const T q = sae(pos, mask, *l0.sae_position);
  const T a = cbi_s(q, sem, mask, *l0.cbi_position_semantic).output;
  const T b = cbi_v(q, vis, *l0.cbi_position_visual).output;
  shared_w.zero_grad();
  sum(mul(mdcdp_forward(pos, vis, sem, mask, l0), r)).backward();
  const testing::Mat am = testing::as_matrix(a, 4, 8), bm = testing::as_matrix(b, 4, 8);
  testing::Mat joined(4, 16);
  joined << am, bm;
  testing::Mat gate = joined * testing::as_matrix(l0.gate.weight, 16, 8);
  gate.rowwise() += testing::as_matrix(l0.gate.bias, 1, 8).row(0);
  gate = gate.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  const testing::Mat local = testing::as_matrix(r, 4, 8)
                                 .cwiseProduct(am - bm)
                                 .cwiseProduct(gate)
                                 .cwiseProduct(testing::Mat::Ones(4, 8) - gate);
  const testing::Mat oracle = joined.transpose() * local;
  const testing::Mat analytic = testing::as_matrix(T({16, 8}, shared_w.grad()), 16, 8);
  const double site_gap = (analytic - oracle).cwiseAbs().maxCoeff() / oracle.cwiseAbs().maxCoeff();

  const bool ok = in_range && between && copies_gap < 1e-10 && site_gap < 1e-10;
  return {ok, std::string("gate in (0,1): ") + (in_range ? "yes" : "no") +
                  ", convex: " + (between ? "yes" : "no") + ", shared vs copies " +
                  fmt("%.1e", copies_gap) + ", vs per-site sum " + fmt("%.1e", site_gap)};
}

struct OverfitState {
  Config config;
  std::vector<Example> data;
  std::optional<Recognizer<float>> model;
};

Outcome overfit(OverfitState& st) {
  const auto t0 = Clock::now();
  st.config = Config{};
  st.data = synth_corpus(SynthSpec::from(st.config), st.config.synth.samples, st.config.synth.seed);
  st.model.emplace(st.config.model);
  const auto r = train(*st.model, st.data, st.config.train, st.config.synth.seed);
  const double acc = evaluate(*st.model, st.data).accuracy;
  const double secs = seconds_since(t0);
  const bool ok = st.data.size() == 32 && acc == 1.0 && r.steps_run <= 2000 && secs < 600.0;
  return {ok, "accuracy " + fmt("%.4f", acc) + " on " + std::to_string(st.data.size()) +
                  " samples after " + std::to_string(r.steps_run) + " steps, " +
                  fmt("%.1f s", secs)};
}

Outcome schedule() {
  const double lr = lr_at(10000, 10000, 512);
  const bool peak = lr_at(9999, 10000, 512) < lr && lr_at(10001, 10000, 512) < lr;
  return {std::abs(lr - 4.42e-4) < 1e-6 && peak,
          "lr(10000) = " + fmt("%.4e", lr) + ", peak at warm-up end: " + (peak ? "yes" : "no")};
}

Outcome tps() {
  Rng rng(303);
  double residual = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point> src, dst;
    for (int i = 0; i < 20; ++i) {
      src.push_back({rng.uniform() * 128.0, rng.uniform() * 32.0});
      dst.push_back({src.back().x + rng.normal() * 4.0, src.back().y + rng.normal() * 4.0});
    }
    const auto t = tps_solve(src, dst);
    for (int i = 0; i < 20; ++i) {
      const Point m = t.map(src[static_cast<std::size_t>(i)]);
      residual = std::max({residual, std::abs(m.x - dst[static_cast<std::size_t>(i)].x),
                           std::abs(m.y - dst[static_cast<std::size_t>(i)].y)});
    }
  }

  const GrayImage img = noise_image(64, 16, 4);
  const auto f = make_fiducials(64, 16, 9);
  const bool identity = tps_warp(img, TpsParams::identity(), 64, 16).pixels == img.pixels &&
                        tps_warp(img, tps_solve(f.points, f.points), 64, 16).pixels == img.pixels;

  std::vector<Point> moved;
  for (const Point& p : f.points) moved.push_back({p.x + 2.5, p.y - 1.0});
  const auto shift = tps_solve(f.points, moved);
  double shift_err = shift.kernel.cwiseAbs().maxCoeff();
  for (int i = 0; i < 50; ++i) {
    const Point p{rng.uniform() * 64.0, rng.uniform() * 16.0};
    const Point m = shift.map(p);
    shift_err = std::max({shift_err, std::abs(m.x - p.x - 2.5), std::abs(m.y - p.y + 1.0)});
  }
  return {residual < 1e-6 && identity && shift_err < 1e-9,
          "control residual " + fmt("%.1e", residual) + " px, identity bit-exact: " +
              (identity ? "yes" : "no") + ", translation error " + fmt("%.1e", shift_err)};
}

Outcome augmentation(OverfitState& st) {
  Rng rng(404);
  bool sign = true, monotone = true, ha_y = true, ca_diag = true;
  for (int trial = 0; trial < 500; ++trial) {
    const double mu = rng.uniform() * 128.0 / 36.0;
    double prev = 0.0;
    for (int s = 1; s <= 6; ++s) {
      const double t = theta_for(mu, 128, 9, s);
      sign = sign && t <= 0.0;
      monotone = monotone && std::abs(t) >= prev;
      prev = std::abs(t);
    }
  }
  for (int s = 1; s <= 6; ++s) {
    Rng r1(s), r2(s);
    const auto h = sample_deformation(128, 32, 9, s, DeformMode::kHorizontal, r1);
    const auto c = sample_deformation(128, 32, 9, s, DeformMode::kCurved, r2);
    for (std::size_t i = 0; i < h.moved.size(); ++i) {
      const Point& p = h.fiducials.points[i];
      ha_y = ha_y && h.moved[i].y == p.y;
      ca_diag = ca_diag && std::abs(std::abs(c.moved[i].x - p.x) - std::abs(c.moved[i].y - p.y)) < 1e-12;
      sign = sign && h.thetas[i] <= 0.0 && c.thetas[i] <= 0.0;
    }
  }

  // Build the twelve sets from the overfit corpus and sweep them with eval.
  const fs::path root = testing::scratch_dir("acceptance");
  std::vector<ManifestEntry> entries;
  fs::create_directories(root / "raw");
  for (std::size_t i = 0; i < st.data.size(); ++i) {
    const std::string name = "s" + std::to_string(i) + ".pgm";
    write_pgm((root / "raw" / name).string(), st.data[i].image);
    entries.push_back({name, st.data[i].label});
  }
  write_manifest(root / "raw/manifest.tsv", entries);
  save_checkpoint(root / "model.ckpt", snapshot(format_config(st.config), st.model->parameters()));

  const AugmentSpec spec{DeformMode::kCurved, 3, 9, 7};
  build_dataset(root / "raw/manifest.tsv", root / "det_a", spec);
  build_dataset(root / "raw/manifest.tsv", root / "det_b", spec);
  bool deterministic = true;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.pgm", i);
    deterministic = deterministic && slurp(root / "det_a" / name) == slurp(root / "det_b" / name);
  }

  std::ostringstream out, err;
  int code = run_cli({"augment", "--in", (root / "raw/manifest.tsv").string(), "--out",
                      (root / "sets").string(), "--suite", "--seed", "1"},
                     out, err);
  std::ostringstream sweep;
  if (code == 0) {
    code = run_cli({"eval", "--ckpt", (root / "model.ckpt").string(), "--data",
                    (root / "raw/manifest.tsv").string(), "--sweep", (root / "sets").string()},
                   sweep, err);
  }
  std::string header, row;
  std::istringstream lines(sweep.str());
  std::getline(lines, header);
  std::getline(lines, row);
  const bool table = code == 0 && std::count(row.begin(), row.end(), ',') == 12 &&
                     header.rfind("Raw,HA1", 0) == 0;
  fs::remove_all(root);

  const bool ok = sign && monotone && ha_y && ca_diag && deterministic && table;
  std::string detail = std::string("theta<=0 ") + (sign ? "ok" : "FAIL") + ", |theta| monotone " +
                       (monotone ? "ok" : "FAIL") + ", HA keeps y " + (ha_y ? "ok" : "FAIL") +
                       ", CA |dx|=|dy| " + (ca_diag ? "ok" : "FAIL") + ", bytes stable " +
                       (deterministic ? "ok" : "FAIL") + ", sweep " + (table ? header + " = " + row : "FAIL");
  return {ok, detail};
}

Outcome ablation() {
  const auto t0 = Clock::now();
  Config c;
  c.train.steps = 20;
  auto cases = wiring_grid();
  const auto t2 = depth_grid();
  cases.insert(cases.end(), t2.begin(), t2.end());
  const auto rows = run_ablation(cases, c);
  bool finite = true;
  for (const auto& r : rows) finite = finite && std::isfinite(r.final_loss) && r.steps == 20;
  const std::string csv = format_ablation_csv(rows);
  std::ofstream("ablation_report.csv") << csv;
  const bool labelled = csv.find("not comparable") != std::string::npos;
  const bool ok = rows.size() == 18 && finite && labelled;
  return {ok, std::to_string(rows.size()) + " rows (14 + 4) at 20 steps each, labelled not comparable: " +
                  (labelled ? "yes" : "no") + ", " + fmt("%.1f s", seconds_since(t0)) +
                  " (ablation_report.csv)"};
}

}  // namespace

int main() {
  OverfitState state;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"causality", causality},
      {"train/infer consistency", consistency},
      {"beam correctness", beam_correctness},
      {"gated fusion properties", dsf_properties},
      {"overfit", [&] { return overfit(state); }},
      {"learning-rate schedule", schedule},
      {"thin-plate spline", tps},
      {"augmentation", [&] { return augmentation(state); }},
      {"ablation harness", ablation},
  };
  int failed = 0, index = 0;
  for (const auto& [name, run] : criteria) {
    ++index;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d %-24s %s\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failed, index);
  return failed == 0 ? 0 : 1;
}
