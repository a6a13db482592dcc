// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "textrec/errors.hpp"

namespace textrec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw IoError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                    std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void copy(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  std::vector<std::uint8_t> out;
  put_bytes(out, kCheckpointMagic, 5);
  put_u32(out, static_cast<std::uint32_t>(checkpoint.config_text.size()));
  put_bytes(out, checkpoint.config_text.data(), checkpoint.config_text.size());
  put_u32(out, static_cast<std::uint32_t>(checkpoint.records.size()));
  for (const auto& r : checkpoint.records) {
    if (static_cast<Index>(r.values.size()) != shape_size(r.shape)) {
      throw DimensionError("record " + r.name + " has " + std::to_string(r.values.size()) +
                           " values for shape " + shape_string(r.shape));
    }
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    put_bytes(out, r.name.data(), r.name.size());
    out.push_back(kDtypeF32);
    put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
    for (Index d : r.shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_bytes(out, r.values.data(), r.values.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.text(5, "magic") != std::string(kCheckpointMagic, 5)) {
    throw IoError("not a checkpoint (bad magic)");
  }
  Checkpoint c;
  c.config_text = in.text(in.u32("config length"), "config");
  const std::uint32_t count = in.u32("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = in.text(in.u32("name length"), "name");
    const std::uint8_t dtype = in.u8("dtype");
    if (dtype != kDtypeF32) {
      throw IoError("parameter " + r.name + ": unsupported dtype tag " + std::to_string(dtype));
    }
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) throw IoError("parameter " + r.name + ": implausible rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(in.u32("dims"));
    const Index n = shape_size(r.shape);
    in.need(static_cast<std::size_t>(n) * sizeof(float), "payload");
    r.values.resize(static_cast<std::size_t>(n));
    in.copy(r.values.data(), r.values.size() * sizeof(float), "payload");
    c.records.push_back(std::move(r));
  }
  if (!in.done()) throw IoError("trailing bytes after the last checkpoint record");
  return c;
}

Checkpoint snapshot(const std::string& config_text, const ParameterStore<float>& store) {
  Checkpoint c;
  c.config_text = config_text;
  for (const auto& e : store.entries()) {
    const auto& v = e.tensor.value();
    c.records.push_back({e.name, e.tensor.shape(), std::vector<float>(v.data(), v.data() + v.size())});
  }
  return c;
}

void restore(ParameterStore<float>& store, const Checkpoint& checkpoint) {
  const auto& entries = store.entries();
  if (entries.size() != checkpoint.records.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(checkpoint.records.size()) +
                      " parameters, model expects " + std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& r = checkpoint.records[i];
    if (r.name != entries[i].name) {
      throw ConfigError("checkpoint parameter " + std::to_string(i) + " is '" + r.name +
                        "', model expects '" + entries[i].name + "'");
    }
    if (r.shape != entries[i].tensor.shape()) {
      throw ConfigError("parameter " + r.name + ": checkpoint shape " + shape_string(r.shape) +
                        ", model shape " + shape_string(entries[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<float> t = entries[i].tensor;
    const auto& values = checkpoint.records[i].values;
    t.mutable_value() = Eigen::Map<const Tensor<float>::Array>(values.data(),
                                                              static_cast<Index>(values.size()));
  }
}

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + file.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Recognizer<float> model_from_checkpoint(const Checkpoint& checkpoint, Config* config) {
  const Config parsed = parse_config(checkpoint.config_text);
  Recognizer<float> model(parsed.model);
  restore(model.parameters(), checkpoint);
  if (config) *config = parsed;
  return model;
}

}  // namespace textrec
