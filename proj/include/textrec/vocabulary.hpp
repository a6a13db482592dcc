// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace textrec {

/// Character <-> id table. Ids 0..2 are reserved; characters start at 3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kFirstChar = 3;

  /// `charset` is a sequence of distinct single-byte characters.
  explicit Vocabulary(std::string charset);

  const std::string& charset() const { return charset_; }
  int size() const { return kFirstChar + static_cast<int>(charset_.size()); }
  bool contains(char c) const { return ids_[static_cast<unsigned char>(c)] >= 0; }
  int id_of(char c) const;
  char char_of(int id) const;
  bool is_char(int id) const { return id >= kFirstChar && id < size(); }

  std::vector<int> encode(std::string_view text) const;
  /// Characters up to the first END; PAD and START are skipped.
  std::string decode(std::span<const int> ids) const;

 private:
  std::string charset_;
  std::array<int, 256> ids_;
};

}  // namespace textrec
