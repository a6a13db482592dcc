// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "textrec/checkpoint.hpp"
#include "textrec/manifest.hpp"
#include "textrec/recognizer.hpp"
#include "cli.hpp"
#include "support.hpp"

using namespace textrec;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

Config tiny() {
  Config c;
  c.model.e_dim = 8;
  c.model.heads = 2;
  c.model.mdcdp_layers = 1;
  c.model.max_len = 4;
  c.model.image_height = 8;
  c.model.image_width = 32;
  c.model.charset = "abc";
  c.model.encoder_layers = 1;
  c.model.encoder_ffn = 8;
  c.model.decoder_ffn = 8;
  c.model.backbone_channels = {2, 4};
  c.train.steps = 4;
  c.train.batch = 4;
  c.train.eval_every = 0;
  c.synth.samples = 6;
  c.synth.max_len = 3;
  return c;
}

// A trained tiny checkpoint and its synthetic corpus, built once per test.
struct Fixture {
  fs::path dir = testing::scratch_dir("cli");
  fs::path config = dir / "tiny.cfg";
  fs::path ckpt = dir / "model.ckpt";
  fs::path data = dir / "data";

  Fixture() {
    write_file(config, format_config(tiny()));
    REQUIRE(cli({"synth", "--out", data.string(), "--config", config.string()}).code == 0);
    const Run r = cli({"train", "--config", config.string(), "--synthetic", "--out", ckpt.string()});
    REQUIRE(r.code == 0);
  }
  ~Fixture() { fs::remove_all(dir); }
  fs::path image() const { return data / read_manifest(data / "manifest.tsv").entries[0].path; }
};

}  // namespace

TEST_CASE("usage and configuration errors map to exit code 2") {
  CHECK(cli({"train", "--synthetic"}).code == kExitUsage);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);

  const auto dir = testing::scratch_dir("cli_errors");
  write_file(dir / "bad.cfg", "model.e_dim = 8\nmodel.colour = red\n");
  const Run bad = cli({"train", "--config", (dir / "bad.cfg").string(), "--synthetic", "--out",
                       (dir / "x.ckpt").string()});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("model.colour") != std::string::npos);

  write_file(dir / "empty.tsv", "");
  write_file(dir / "one.tsv", "a.pgm\tabc\n");
  CHECK(cli({"augment", "--in", (dir / "one.tsv").string(), "--out", (dir / "o").string(), "--mode",
             "ha", "--intensity", "7"})
            .code == kExitUsage);
  CHECK(cli({"augment", "--in", (dir / "one.tsv").string(), "--out", (dir / "o").string(), "--mode",
             "zz", "--intensity", "2"})
            .code == kExitUsage);
  fs::remove_all(dir);
}

TEST_CASE("train, recognize, export, eval end to end") {
  const Fixture f;

  SUBCASE("same seed gives identical checkpoint bytes") {
    const fs::path again = f.dir / "again.ckpt";
    REQUIRE(cli({"train", "--config", f.config.string(), "--synthetic", "--out", again.string()}).code == 0);
    CHECK(slurp(again) == slurp(f.ckpt));
    CHECK(slurp(again.string() + ".log.csv").rfind("step,lr,loss,acc", 0) == 0);
    const fs::path other = f.dir / "other.ckpt";
    REQUIRE(cli({"train", "--config", f.config.string(), "--synthetic", "--out", other.string(),
                 "--seed", "99"})
                .code == 0);
    CHECK(slurp(other) != slurp(f.ckpt));
  }

  SUBCASE("recognize: beam 1 is greedy, default beam runs") {
    const auto model = model_from_checkpoint(load_checkpoint(f.ckpt));
    const GrayImage img = read_pgm(f.image().string());
    const Run one = cli({"recognize", "--ckpt", f.ckpt.string(), "--image", f.image().string(), "--beam", "1"});
    CHECK(one.code == 0);
    CHECK(one.out == decode_greedy(model, img).text + "\n");
    const Run wide = cli({"recognize", "--ckpt", f.ckpt.string(), "--image", f.image().string()});
    CHECK(wide.code == 0);
    CHECK(wide.out == decode_beam(model, img, 10).text + "\n");
    CHECK(cli({"recognize", "--ckpt", f.ckpt.string(), "--image", (f.dir / "nope.pgm").string()}).code ==
          kExitUsage);
  }

  SUBCASE("export-attention writes one heatmap per decoded step") {
    const fs::path out = f.dir / "attn";
    const Run r = cli({"export-attention", "--ckpt", f.ckpt.string(), "--image", f.image().string(),
                       "--out", out.string()});
    REQUIRE(r.code == 0);
    const std::string text = r.out.substr(0, r.out.size() - 1);
    int maps = 0;
    for (const auto& e : fs::directory_iterator(out)) maps += e.path().extension() == ".pgm";
    // The decode stops at END or at the step cap.
    CHECK((maps == static_cast<int>(text.size()) + 1 || maps == tiny().model.max_len));
    const GrayImage heat = read_pgm((out / "step_01.pgm").string());
    CHECK(heat.width == 4);
    CHECK(heat.height == 1);
    CHECK(fs::exists(out / "visual_attention.csv"));
    CHECK(fs::exists(out / "semantic_affinity.csv"));
  }

  SUBCASE("eval and the twelve-set sweep") {
    const fs::path manifest = f.data / "manifest.tsv";
    const Run plain = cli({"eval", "--ckpt", f.ckpt.string(), "--data", manifest.string()});
    CHECK(plain.code == 0);
    CHECK(plain.out.rfind("accuracy=", 0) == 0);

    REQUIRE(cli({"augment", "--in", manifest.string(), "--out", (f.dir / "sets").string(), "--suite"})
                .code == 0);
    const Run sweep = cli({"eval", "--ckpt", f.ckpt.string(), "--data", manifest.string(), "--sweep",
                           (f.dir / "sets").string(), "--beam", "1"});
    REQUIRE(sweep.code == 0);
    std::istringstream lines(sweep.out);
    std::string header, row;
    std::getline(lines, header);
    std::getline(lines, row);
    CHECK(header.rfind("Raw,HA1", 0) == 0);
    CHECK(std::count(header.begin(), header.end(), ',') == 12);
    CHECK(std::count(row.begin(), row.end(), ',') == 12);

    write_file(f.dir / "empty.tsv", "");
    CHECK(cli({"eval", "--ckpt", f.ckpt.string(), "--data", (f.dir / "empty.tsv").string()}).code ==
          kExitUsage);
    CHECK(cli({"eval", "--ckpt", f.ckpt.string()}).code == kExitUsage);
  }

  SUBCASE("mismatched checkpoint is a configuration error") {
    auto ck = load_checkpoint(f.ckpt);
    ck.records.pop_back();
    save_checkpoint(f.dir / "broken.ckpt", ck);
    CHECK(cli({"recognize", "--ckpt", (f.dir / "broken.ckpt").string(), "--image", f.image().string()})
              .code == kExitUsage);
  }
}

TEST_CASE("ablate writes a labelled CSV") {
  const auto dir = testing::scratch_dir("cli_ablate");
  write_file(dir / "tiny.cfg", format_config(tiny()));
  write_file(dir / "grid.txt", "a fusion=add layers=1\nb fusion=dsf layers=2\n");
  const Run r = cli({"ablate", "--grid", (dir / "grid.txt").string(), "--out", (dir / "r.csv").string(),
                     "--config", (dir / "tiny.cfg").string(), "--steps", "1"});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(dir / "r.csv");
  CHECK(csv.find("not comparable") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  write_file(dir / "bad.txt", "a wiring=odd\n");
  CHECK(cli({"ablate", "--grid", (dir / "bad.txt").string(), "--out", (dir / "r2.csv").string()}).code ==
        kExitUsage);
  fs::remove_all(dir);
}
