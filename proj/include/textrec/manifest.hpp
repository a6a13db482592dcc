// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace textrec {

struct ManifestEntry {
  std::string path;  // as written, relative to the manifest directory
  std::string label;
};

/// Text dataset listing, one "path<TAB>label" per line. Blank lines are
/// skipped; a line without a TAB or with an empty label is an error.
struct Manifest {
  std::filesystem::path directory;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& entry) const;
};

Manifest parse_manifest(const std::string& text, const std::filesystem::path& directory);
Manifest read_manifest(const std::filesystem::path& file);
std::string format_manifest(const std::vector<ManifestEntry>& entries);
void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries);

}  // namespace textrec
