// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/manifest.hpp"

#include <fstream>
#include <sstream>

#include "textrec/errors.hpp"

namespace textrec {

std::filesystem::path Manifest::resolve(const ManifestEntry& entry) const {
  const std::filesystem::path p(entry.path);
  return p.is_absolute() ? p : directory / p;
}

Manifest parse_manifest(const std::string& text, const std::filesystem::path& directory) {
  Manifest m;
  m.directory = directory;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ConfigError("manifest line " + std::to_string(number) + ": missing TAB separator");
    }
    ManifestEntry e{line.substr(0, tab), line.substr(tab + 1)};
    if (e.path.empty()) throw ConfigError("manifest line " + std::to_string(number) + ": empty path");
    if (e.label.empty()) {
      throw ConfigError("manifest line " + std::to_string(number) + ": empty label");
    }
    if (e.label.find('\t') != std::string::npos) {
      throw ConfigError("manifest line " + std::to_string(number) + ": TAB inside label");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + file.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str(), file.parent_path());
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += e.path + "\t" + e.label + "\n";
  return out;
}

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + file.string());
  out << format_manifest(entries);
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace textrec
