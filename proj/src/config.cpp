// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "textrec/errors.hpp"

namespace textrec {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(std::string(key) + ": cannot parse '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

void set_sae(DecoderVariant& v, std::string_view key, std::string_view text) {
  v.sae_semantic = v.sae_visual = v.sae_position = false;
  for (const auto& item : split_list(text)) {
    if (item == "sem") v.sae_semantic = true;
    else if (item == "vis") v.sae_visual = true;
    else if (item == "pos") v.sae_position = true;
    else if (item != "none")
      throw ConfigError(std::string(key) + ": unknown branch '" + item + "'");
  }
}

void set_cbi(DecoderVariant& v, std::string_view key, std::string_view text) {
  v.cbi_semantic_visual = v.cbi_position_visual = false;
  v.cbi_position_semantic = v.cbi_semantic_position = false;
  for (const auto& item : split_list(text)) {
    if (item == "sv") v.cbi_semantic_visual = true;
    else if (item == "pv") v.cbi_position_visual = true;
    else if (item == "ps") v.cbi_position_semantic = true;
    else if (item == "sp") v.cbi_semantic_position = true;
    else throw ConfigError(std::string(key) + ": unknown wiring '" + item + "'");
  }
}

Fusion parse_fusion(std::string_view key, std::string_view text) {
  if (text == "dsf") return Fusion::kDsf;
  if (text == "dsf_unshared") return Fusion::kDsfUnshared;
  if (text == "add") return Fusion::kAdd;
  if (text == "dot") return Fusion::kDot;
  throw ConfigError(std::string(key) + ": unknown fusion '" + std::string(text) + "'");
}

using Setter = std::function<void(Config&, std::string_view, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"model.e_dim", [](Config& c, auto k, auto v) { c.model.e_dim = parse_number<int>(k, v); }},
      {"model.heads", [](Config& c, auto k, auto v) { c.model.heads = parse_number<int>(k, v); }},
      {"model.mdcdp_layers",
       [](Config& c, auto k, auto v) { c.model.mdcdp_layers = parse_number<int>(k, v); }},
      {"model.max_len",
       [](Config& c, auto k, auto v) { c.model.max_len = parse_number<int>(k, v); }},
      {"model.image_height",
       [](Config& c, auto k, auto v) { c.model.image_height = parse_number<int>(k, v); }},
      {"model.image_width",
       [](Config& c, auto k, auto v) { c.model.image_width = parse_number<int>(k, v); }},
      {"model.charset", [](Config& c, auto, auto v) { c.model.charset = std::string(v); }},
      {"model.encoder_layers",
       [](Config& c, auto k, auto v) { c.model.encoder_layers = parse_number<int>(k, v); }},
      {"model.encoder_ffn",
       [](Config& c, auto k, auto v) { c.model.encoder_ffn = parse_number<int>(k, v); }},
      {"model.decoder_ffn",
       [](Config& c, auto k, auto v) { c.model.decoder_ffn = parse_number<int>(k, v); }},
      {"model.backbone_channels",
       [](Config& c, auto k, auto v) {
         c.model.backbone_channels.clear();
         for (const auto& item : split_list(v))
           c.model.backbone_channels.push_back(parse_number<int>(k, item));
       }},
      {"model.seed",
       [](Config& c, auto k, auto v) { c.model.seed = parse_number<std::uint64_t>(k, v); }},
      {"model.sae", [](Config& c, auto k, auto v) { set_sae(c.model.variant, k, v); }},
      {"model.cbi", [](Config& c, auto k, auto v) { set_cbi(c.model.variant, k, v); }},
      {"model.fusion",
       [](Config& c, auto k, auto v) { c.model.variant.fusion = parse_fusion(k, v); }},
      {"train.batch", [](Config& c, auto k, auto v) { c.train.batch = parse_number<int>(k, v); }},
      {"train.steps", [](Config& c, auto k, auto v) { c.train.steps = parse_number<int>(k, v); }},
      {"train.warmup",
       [](Config& c, auto k, auto v) { c.train.warmup = parse_number<int>(k, v); }},
      {"train.lr_scale",
       [](Config& c, auto k, auto v) { c.train.lr_scale = parse_number<double>(k, v); }},
      {"train.d_model",
       [](Config& c, auto k, auto v) { c.train.d_model = parse_number<int>(k, v); }},
      {"train.beta1",
       [](Config& c, auto k, auto v) { c.train.beta1 = parse_number<double>(k, v); }},
      {"train.beta2",
       [](Config& c, auto k, auto v) { c.train.beta2 = parse_number<double>(k, v); }},
      {"train.epsilon",
       [](Config& c, auto k, auto v) { c.train.epsilon = parse_number<double>(k, v); }},
      {"train.finetune_steps",
       [](Config& c, auto k, auto v) { c.train.finetune_steps = parse_number<int>(k, v); }},
      {"train.finetune_lr",
       [](Config& c, auto k, auto v) { c.train.finetune_lr = parse_number<double>(k, v); }},
      {"train.eval_every",
       [](Config& c, auto k, auto v) { c.train.eval_every = parse_number<int>(k, v); }},
      {"train.stop_at_perfect",
       [](Config& c, auto k, auto v) { c.train.stop_at_perfect = parse_bool(k, v); }},
      {"synth.samples",
       [](Config& c, auto k, auto v) { c.synth.samples = parse_number<int>(k, v); }},
      {"synth.min_len",
       [](Config& c, auto k, auto v) { c.synth.min_len = parse_number<int>(k, v); }},
      {"synth.max_len",
       [](Config& c, auto k, auto v) { c.synth.max_len = parse_number<int>(k, v); }},
      {"synth.seed",
       [](Config& c, auto k, auto v) { c.synth.seed = parse_number<std::uint64_t>(k, v); }},
      {"synth.jitter",
       [](Config& c, auto k, auto v) { c.synth.jitter = parse_number<int>(k, v); }},
  };
  return table;
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

int DecoderVariant::branch_count() const {
  return int(cbi_semantic_visual) + int(cbi_position_visual) + int(cbi_position_semantic) +
         int(cbi_semantic_position);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError(key + ": " + why);
  };
  if (e_dim < 2 || e_dim % 2 != 0) fail("model.e_dim", "must be a positive even number");
  if (heads < 1 || e_dim % heads != 0) fail("model.heads", "must divide model.e_dim");
  if ((e_dim / 2) % heads != 0) fail("model.heads", "must divide model.e_dim / 2");
  if (mdcdp_layers < 1) fail("model.mdcdp_layers", "must be at least 1");
  if (max_len < 2) fail("model.max_len", "must be at least 2");
  if (max_len > e_dim) fail("model.max_len", "must not exceed model.e_dim");
  if (image_height < 8 || image_height % 8 != 0) fail("model.image_height", "must be a multiple of 8");
  if (image_width < 8 || image_width % 8 != 0) fail("model.image_width", "must be a multiple of 8");
  if (charset.empty()) fail("model.charset", "must not be empty");
  if (encoder_layers < 0) fail("model.encoder_layers", "must be non-negative");
  if (encoder_ffn < 1) fail("model.encoder_ffn", "must be positive");
  if (decoder_ffn < 1) fail("model.decoder_ffn", "must be positive");
  if (backbone_channels.size() != 2 || backbone_channels[0] < 1 || backbone_channels[1] < 1)
    fail("model.backbone_channels", "expects two positive widths");
  const int branches = variant.branch_count();
  if (branches < 1 || branches > 2) fail("model.cbi", "must name one or two interactions");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.e_dim = 512;
  c.heads = 8;
  c.mdcdp_layers = 3;
  c.max_len = 25;
  c.image_height = 32;
  c.image_width = 128;
  c.charset = "0123456789abcdefghijklmnopqrstuvwxyz";
  c.encoder_layers = 3;
  c.encoder_ffn = 1024;
  c.decoder_ffn = 512;
  c.backbone_channels = {64, 128};
  return c;
}

Config parse_config(std::string_view text) {
  Config config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line) + ": line " + std::to_string(line_no) +
                        " is not key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(std::string(key) + ": unknown configuration key");
    it->second(config, key, value);
  }
  return config;
}

std::string fusion_name(Fusion f) {
  switch (f) {
    case Fusion::kDsf: return "dsf";
    case Fusion::kDsfUnshared: return "dsf_unshared";
    case Fusion::kAdd: return "add";
    case Fusion::kDot: return "dot";
  }
  return "dsf";
}

std::string format_variant_sae(const DecoderVariant& v) {
  std::vector<std::string> parts;
  if (v.sae_semantic) parts.emplace_back("sem");
  if (v.sae_visual) parts.emplace_back("vis");
  if (v.sae_position) parts.emplace_back("pos");
  if (parts.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

std::string format_variant_cbi(const DecoderVariant& v) {
  std::vector<std::string> parts;
  if (v.cbi_semantic_visual) parts.emplace_back("sv");
  if (v.cbi_position_visual) parts.emplace_back("pv");
  if (v.cbi_position_semantic) parts.emplace_back("ps");
  if (v.cbi_semantic_position) parts.emplace_back("sp");
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

namespace {

// Shortest text that parses back to the same double.
std::string real(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string format_config(const Config& c) {
  std::ostringstream os;
  const auto& m = c.model;
  os << "model.e_dim = " << m.e_dim << '\n'
     << "model.heads = " << m.heads << '\n'
     << "model.mdcdp_layers = " << m.mdcdp_layers << '\n'
     << "model.max_len = " << m.max_len << '\n'
     << "model.image_height = " << m.image_height << '\n'
     << "model.image_width = " << m.image_width << '\n'
     << "model.charset = " << m.charset << '\n'
     << "model.encoder_layers = " << m.encoder_layers << '\n'
     << "model.encoder_ffn = " << m.encoder_ffn << '\n'
     << "model.decoder_ffn = " << m.decoder_ffn << '\n'
     << "model.backbone_channels = " << join_ints(m.backbone_channels) << '\n'
     << "model.seed = " << m.seed << '\n'
     << "model.sae = " << format_variant_sae(m.variant) << '\n'
     << "model.cbi = " << format_variant_cbi(m.variant) << '\n'
     << "model.fusion = " << fusion_name(m.variant.fusion) << '\n';
  const auto& t = c.train;
  os << "train.batch = " << t.batch << '\n'
     << "train.steps = " << t.steps << '\n'
     << "train.warmup = " << t.warmup << '\n'
     << "train.lr_scale = " << real(t.lr_scale) << '\n'
     << "train.d_model = " << t.d_model << '\n'
     << "train.beta1 = " << real(t.beta1) << '\n'
     << "train.beta2 = " << real(t.beta2) << '\n'
     << "train.epsilon = " << real(t.epsilon) << '\n'
     << "train.finetune_steps = " << t.finetune_steps << '\n'
     << "train.finetune_lr = " << real(t.finetune_lr) << '\n'
     << "train.eval_every = " << t.eval_every << '\n'
     << "train.stop_at_perfect = " << (t.stop_at_perfect ? "true" : "false") << '\n';
  const auto& s = c.synth;
  os << "synth.samples = " << s.samples << '\n'
     << "synth.min_len = " << s.min_len << '\n'
     << "synth.max_len = " << s.max_len << '\n'
     << "synth.seed = " << s.seed << '\n'
     << "synth.jitter = " << s.jitter << '\n';
  return os.str();
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace textrec
