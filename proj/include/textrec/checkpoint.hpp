// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "textrec/config.hpp"
#include "textrec/recognizer.hpp"

namespace textrec {

/// Layout (integers little-endian):
///   "CDNT1" | u32 config bytes | config text
///   u32 parameter count, then per parameter:
///   u32 name bytes | name | u8 dtype (1 = f32) | u32 rank | u32 dims[rank] | f32 payload
inline constexpr char kCheckpointMagic[] = "CDNT1";
inline constexpr std::uint8_t kDtypeF32 = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<CheckpointRecord> records;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Malformed or truncated input throws IoError.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

Checkpoint snapshot(const std::string& config_text, const ParameterStore<float>& store);

/// Copies records into `store`. Names and shapes must match the store's
/// registry exactly, otherwise ConfigError.
void restore(ParameterStore<float>& store, const Checkpoint& checkpoint);

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Rebuilds the model described by the embedded config and restores it.
Recognizer<float> model_from_checkpoint(const Checkpoint& checkpoint, Config* config = nullptr);

}  // namespace textrec
