// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "textrec/augment.hpp"
#include "textrec/checkpoint.hpp"
#include "textrec/errors.hpp"
#include "textrec/training.hpp"

namespace textrec {

namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config, data, out, log;
  bool synthetic = false, finetune = false;
  int steps = -1;
  long long seed = -1;
};

struct RecognizeArgs {
  std::string ckpt, image;
  int beam = kDefaultBeamWidth;
};

struct AugmentArgs {
  std::string in, out, mode = "ha";
  int intensity = 0, n_fiducial = 9;
  std::uint64_t seed = 0;
  bool suite = false;
};

struct ExportArgs {
  std::string ckpt, image, out;
};

struct EvalArgs {
  std::string ckpt, data, sweep;
  int beam = kDefaultBeamWidth;
};

struct SynthArgs {
  std::string config, out;
  int samples = -1;
  long long seed = -1;
};

struct AblateArgs {
  std::string grid, out, config;
  int steps = -1;
};

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.synthetic == !a.data.empty()) throw ConfigError("train: give exactly one of --data or --synthetic");
  Config config = a.config.empty() ? Config{} : load_config_file(a.config);
  if (a.steps >= 0) config.train.steps = a.steps;
  if (a.seed >= 0) {
    config.model.seed = static_cast<std::uint64_t>(a.seed);
    config.synth.seed = static_cast<std::uint64_t>(a.seed);
  }
  config.model.validate();

  std::vector<Example> data;
  if (a.synthetic) {
    data = synth_corpus(SynthSpec::from(config), config.synth.samples, config.synth.seed);
  } else {
    data = load_examples(read_manifest(a.data));
  }
  Recognizer<float> model(config.model);
  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.csv") : fs::path(a.log);
  const TrainResult r = train(model, data, config.train, config.synth.seed, a.finetune);
  write_text(log_path, format_log_csv(r.log));
  save_checkpoint(a.out, snapshot(format_config(config), model.parameters()));
  out << "steps=" << r.steps_run << " loss=" << (r.log.empty() ? 0.0 : r.log.back().loss)
      << " train_acc=" << std::fixed << std::setprecision(4) << r.accuracy << '\n';
  err << "checkpoint written to " << a.out << ", log to " << log_path.string() << '\n';
  return kExitOk;
}

GrayImage read_input_image(const std::string& path) { return read_pgm(path); }

int cmd_recognize(const RecognizeArgs& a, std::ostream& out) {
  const Recognizer<float> model = model_from_checkpoint(load_checkpoint(a.ckpt));
  const GrayImage image = read_input_image(a.image);
  out << (a.beam == 1 ? decode_greedy(model, image).text : decode_beam(model, image, a.beam).text)
      << '\n';
  return kExitOk;
}

void report_build(const std::string& name, const BuildReport& r, std::ostream& out,
                  std::ostream& err) {
  out << name << '\t' << r.manifest.string() << '\t' << r.written << " written\t"
      << r.errors.size() << " errors\n";
  for (const auto& e : r.errors) err << name << ": " << e.path << ": " << e.message << '\n';
}

int cmd_augment(const AugmentArgs& a, std::ostream& out, std::ostream& err) {
  if (a.suite) {
    for (const auto& [name, report] : build_suite(a.in, a.out, a.n_fiducial, a.seed))
      report_build(name, report, out, err);
    return kExitOk;
  }
  if (a.intensity < 1 || a.intensity > 6) {
    throw RangeError("--intensity must be in 1..6 (or use --suite)");
  }
  const AugmentSpec spec{parse_mode(a.mode), a.intensity, a.n_fiducial, a.seed};
  report_build(mode_name(spec.mode) + std::to_string(a.intensity),
               build_dataset(a.in, a.out, spec), out, err);
  return kExitOk;
}

int cmd_export_attention(const ExportArgs& a, std::ostream& out) {
  Config config;
  const Recognizer<float> model = model_from_checkpoint(load_checkpoint(a.ckpt), &config);
  const GrayImage image = read_input_image(a.image);
  const DecodeResult r = decode_greedy(model, image, true);
  fs::create_directories(a.out);
  const int gh = config.model.image_height / 8, gw = config.model.image_width / 8;

  std::ostringstream visual_csv;
  visual_csv << std::setprecision(9) << "step";
  for (int p = 0; p < gh * gw; ++p) visual_csv << ",p" << p;
  visual_csv << '\n';
  for (std::size_t s = 0; s < r.attention.size(); ++s) {
    const auto& w = r.attention[s].visual;
    if (w.empty()) continue;
    GrayImage heat(gw, gh);
    const double peak = *std::max_element(w.begin(), w.end());
    for (int p = 0; p < gh * gw; ++p) {
      heat.pixels[static_cast<std::size_t>(p)] =
          peak > 0 ? static_cast<float>(w[static_cast<std::size_t>(p)] / peak) : 0.0f;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "step_%02zu.pgm", s + 1);
    write_pgm((fs::path(a.out) / name).string(), heat);
    visual_csv << s + 1;
    for (double v : w) visual_csv << ',' << v;
    visual_csv << '\n';
  }
  write_text(fs::path(a.out) / "visual_attention.csv", visual_csv.str());

  std::ostringstream affinity;
  affinity << std::setprecision(9);
  if (!r.attention.empty() && r.attention.back().steps > 0) {
    const auto& last = r.attention.back();
    for (int i = 0; i < last.steps; ++i) {
      for (int j = 0; j < last.steps; ++j)
        affinity << (j ? "," : "") << last.semantic[static_cast<std::size_t>(i * last.steps + j)];
      affinity << '\n';
    }
  }
  write_text(fs::path(a.out) / "semantic_affinity.csv", affinity.str());
  out << r.text << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const Recognizer<float> model = model_from_checkpoint(load_checkpoint(a.ckpt));
  out << std::fixed << std::setprecision(4);
  if (a.sweep.empty()) {
    const EvalResult r = evaluate(model, read_manifest(a.data), a.beam);
    for (const auto& rec : r.records)
      if (!rec.error.empty()) err << rec.path << ": " << rec.error << '\n';
    out << "accuracy=" << r.accuracy << " (" << r.correct << "/" << r.total << ")\n";
    return kExitOk;
  }
  std::vector<std::pair<std::string, fs::path>> sets;
  if (!a.data.empty()) sets.emplace_back("Raw", a.data);
  for (const char* mode : {"HA", "CA"})
    for (int s = 1; s <= 6; ++s) {
      const std::string name = mode + std::to_string(s);
      sets.emplace_back(name, fs::path(a.sweep) / name / "manifest.tsv");
    }
  std::string header, row;
  for (const auto& [name, path] : sets) {
    const EvalResult r = evaluate(model, read_manifest(path), a.beam);
    header += (header.empty() ? "" : ",") + name;
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(4) << r.accuracy;
    row += (row.empty() ? "" : ",") + cell.str();
  }
  out << header << '\n' << row << '\n';
  return kExitOk;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  Config config = a.config.empty() ? Config{} : load_config_file(a.config);
  if (a.samples >= 0) config.synth.samples = a.samples;
  if (a.seed >= 0) config.synth.seed = static_cast<std::uint64_t>(a.seed);
  const auto data = synth_corpus(SynthSpec::from(config), config.synth.samples, config.synth.seed);
  fs::create_directories(fs::path(a.out) / "images");
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.pgm", i);
    write_pgm((fs::path(a.out) / name).string(), data[i].image);
    entries.push_back({name, data[i].label});
  }
  write_manifest(fs::path(a.out) / "manifest.tsv", entries);
  out << data.size() << " samples written to " << (fs::path(a.out) / "manifest.tsv").string() << '\n';
  return kExitOk;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  Config base = a.config.empty() ? Config{} : load_config_file(a.config);
  if (a.steps >= 0) base.train.steps = a.steps;
  std::string grid_text = a.grid;
  if (a.grid == "all") {
    grid_text = "wiring\ndepth\n";
  } else if (a.grid != "wiring" && a.grid != "depth") {
    std::ifstream in(a.grid);
    if (!in) throw IoError("cannot read grid " + a.grid);
    std::ostringstream buf;
    buf << in.rdbuf();
    grid_text = buf.str();
  }
  const auto cases = parse_ablation_grid(grid_text);
  const auto rows = run_ablation(cases, base, [&](const AblationRow& r) {
    err << r.config.grid << '/' << r.config.name << ": loss " << r.final_loss << ", acc "
        << r.accuracy << '\n';
  });
  write_text(a.out, format_ablation_csv(rows));
  out << rows.size() << " rows written to " << a.out << " (desk-scale, not comparable)\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene-text recognizer: training, decoding, augmentation and ablation."};
  app.name("textrec");
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--config", train_args.config, "Config file (key = value)")->check(CLI::ExistingFile);
  train->add_option("--data", train_args.data, "Training manifest")->check(CLI::ExistingFile);
  train->add_flag("--synthetic", train_args.synthetic, "Train on the synthetic glyph corpus");
  train->add_option("--out", train_args.out, "Checkpoint path")->required();
  train->add_option("--steps", train_args.steps, "Override train.steps")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", train_args.seed, "Override model and data seeds")->check(CLI::NonNegativeNumber);
  train->add_flag("--finetune", train_args.finetune, "Run the constant-rate phase afterwards");
  train->add_option("--log", train_args.log, "CSV log path (default: <out>.log.csv)");

  RecognizeArgs rec_args;
  auto* recognize = app.add_subcommand("recognize", "Decode one image");
  recognize->add_option("--ckpt", rec_args.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  recognize->add_option("--image", rec_args.image, "PGM image")->required();
  recognize->add_option("--beam", rec_args.beam, "Beam width (1 = greedy)")->capture_default_str();

  AugmentArgs aug_args;
  auto* augment = app.add_subcommand("augment", "Build a deformed copy of a dataset");
  augment->add_option("--in", aug_args.in, "Input manifest")->required()->check(CLI::ExistingFile);
  augment->add_option("--out", aug_args.out, "Output directory")->required();
  augment->add_option("--mode", aug_args.mode, "ha (horizontal) or ca (curved)")
      ->check(CLI::IsMember({"ha", "ca"}));
  augment->add_option("--intensity", aug_args.intensity, "Deformation level 1..6");
  augment->add_option("--n-fiducial", aug_args.n_fiducial, "N (2(N+1) control points)")
      ->capture_default_str();
  augment->add_option("--seed", aug_args.seed, "Seed")->capture_default_str();
  augment->add_flag("--suite", aug_args.suite, "Build all of HA1..HA6 and CA1..CA6 under --out");

  ExportArgs exp_args;
  auto* exporter = app.add_subcommand("export-attention", "Write per-step attention maps");
  exporter->add_option("--ckpt", exp_args.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  exporter->add_option("--image", exp_args.image, "PGM image")->required();
  exporter->add_option("--out", exp_args.out, "Output directory")->required();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Sequence accuracy on a manifest");
  eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_args.data, "Manifest (the Raw column with --sweep)");
  eval->add_option("--sweep", eval_args.sweep, "Root holding HA1..HA6/CA1..CA6 sets");
  eval->add_option("--beam", eval_args.beam, "Beam width (1 = greedy)")->capture_default_str();

  SynthArgs syn_args;
  auto* synth = app.add_subcommand("synth", "Write the synthetic glyph corpus as PGM + manifest");
  synth->add_option("--out", syn_args.out, "Output directory")->required();
  synth->add_option("--config", syn_args.config, "Config file")->check(CLI::ExistingFile);
  synth->add_option("--samples", syn_args.samples, "Override synth.samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", syn_args.seed, "Override synth.seed")->check(CLI::NonNegativeNumber);

  AblateArgs abl_args;
  auto* ablate = app.add_subcommand("ablate", "Train a grid of decoder variants");
  ablate->add_option("--grid", abl_args.grid, "Grid file, or wiring / depth / all")->required();
  ablate->add_option("--out", abl_args.out, "CSV report")->required();
  ablate->add_option("--config", abl_args.config, "Base config")->check(CLI::ExistingFile);
  ablate->add_option("--steps", abl_args.steps, "Training steps per case")->check(CLI::NonNegativeNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (eval->parsed() && eval_args.sweep.empty() && eval_args.data.empty()) {
      throw ConfigError("eval: --data or --sweep is required");
    }
    if (train->parsed()) return cmd_train(train_args, out, err);
    if (recognize->parsed()) return cmd_recognize(rec_args, out);
    if (augment->parsed()) return cmd_augment(aug_args, out, err);
    if (exporter->parsed()) return cmd_export_attention(exp_args, out);
    if (eval->parsed()) return cmd_eval(eval_args, out, err);
    if (synth->parsed()) return cmd_synth(syn_args, out);
    if (ablate->parsed()) return cmd_ablate(abl_args, out, err);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::invalid_argument& e) {  // configuration and dimension errors
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::length_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace textrec
