// SPDX-License-Identifier: Apache-2.0
//
// Fixed vocabulary: role and end-of-message markers, the boxed-answer
// delimiters, newline plus printable ASCII, and one token per fixed segment
// of the default prompt templates. Encoding is greedy longest match, so
// decode(encode(s)) == s for every encodable string.
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ssb::lm {

class Tokenizer {
 public:
  static constexpr int kSystem = 0;
  static constexpr int kUser = 1;
  static constexpr int kAssistant = 2;
  static constexpr int kEndOfMessage = 3;
  static constexpr int kBoxOpen = 4;   // "\boxed{"
  static constexpr int kBoxClose = 5;  // "}"

  static const Tokenizer& standard();

  int size() const { return static_cast<int>(pieces_.size()); }
  bool is_marker(int id) const { return id >= kSystem && id <= kEndOfMessage; }

  // Throws encoding-error listing every character outside the vocabulary.
  std::vector<int> encode(std::string_view text) const;
  // Markers render as <|system|>, <|user|>, <|assistant|>, <|eom|>.
  std::string decode(std::span<const int> ids) const;
  std::string_view piece(int id) const;

 private:
  Tokenizer();
  std::vector<std::string> pieces_;
  int char_id_[256];
  // First character -> multi-character pieces starting with it, longest first.
  std::unordered_map<unsigned char, std::vector<int>> multi_;
};

}  // namespace ssb::lm
