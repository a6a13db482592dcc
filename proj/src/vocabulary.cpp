// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/vocabulary.hpp"

#include "textrec/errors.hpp"

namespace textrec {

Vocabulary::Vocabulary(std::string charset) : charset_(std::move(charset)) {
  ids_.fill(-1);
  if (charset_.empty()) throw ConfigError("charset must not be empty");
  for (std::size_t i = 0; i < charset_.size(); ++i) {
    const auto c = static_cast<unsigned char>(charset_[i]);
    if (c == '\t' || c == '\n' || c == '\r') {
      throw ConfigError("charset may not contain tab or newline");
    }
    if (ids_[c] >= 0) {
      throw ConfigError(std::string("duplicate character '") + charset_[i] + "' in charset");
    }
    ids_[c] = kFirstChar + static_cast<int>(i);
  }
}

int Vocabulary::id_of(char c) const {
  const int id = ids_[static_cast<unsigned char>(c)];
  if (id < 0) throw RangeError(std::string("character '") + c + "' is not in the charset");
  return id;
}

char Vocabulary::char_of(int id) const {
  if (!is_char(id)) throw RangeError("id " + std::to_string(id) + " is not a character id");
  return charset_[static_cast<std::size_t>(id - kFirstChar)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id_of(c));
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEnd) break;
    if (is_char(id)) out.push_back(char_of(id));
  }
  return out;
}

}  // namespace textrec
