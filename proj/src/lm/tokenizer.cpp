// SPDX-License-Identifier: Apache-2.0
#include "ssb/lm/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "ssb/common/error.hpp"
#include "ssb/lm/prompts.hpp"

namespace ssb::lm {

const Tokenizer& Tokenizer::standard() {
  static const Tokenizer tok;
  return tok;
}

Tokenizer::Tokenizer() {
  pieces_ = {"<|system|>", "<|user|>", "<|assistant|>", "<|eom|>", "\\boxed{", "}", "\n"};
  for (int c = 0x20; c < 0x7f; ++c)
    if (c != '}') pieces_.emplace_back(1, static_cast<char>(c));
  pieces_.emplace_back(kDefaultSystemPrompt);
  for (auto& seg : template_segments(kDefaultRefineTemplate)) pieces_.push_back(seg);

  std::fill(std::begin(char_id_), std::end(char_id_), -1);
  for (int id = kBoxClose; id < size(); ++id) {
    const auto& p = pieces_[static_cast<std::size_t>(id)];
    if (p.size() == 1) char_id_[static_cast<unsigned char>(p[0])] = id;
  }
  for (int id = kBoxOpen; id < size(); ++id) {
    const auto& p = pieces_[static_cast<std::size_t>(id)];
    if (p.size() > 1) multi_[static_cast<unsigned char>(p[0])].push_back(id);
  }
  for (auto& [c, ids] : multi_)
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
      return pieces_[static_cast<std::size_t>(a)].size() > pieces_[static_cast<std::size_t>(b)].size();
    });
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  std::set<unsigned char> bad;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    bool matched = false;
    if (auto it = multi_.find(c); it != multi_.end()) {
      for (int id : it->second) {
        const auto& p = pieces_[static_cast<std::size_t>(id)];
        if (text.compare(i, p.size(), p) == 0) {
          out.push_back(id);
          i += p.size();
          matched = true;
          break;
        }
      }
    }
    if (matched) continue;
    if (char_id_[c] < 0) {
      bad.insert(c);
    } else {
      out.push_back(char_id_[c]);
    }
    ++i;
  }
  if (!bad.empty()) {
    std::string list;
    for (unsigned char b : bad) {
      if (!list.empty()) list += ", ";
      char buf[8];
      std::snprintf(buf, sizeof buf, "0x%02x", b);
      list += buf;
    }
    std::string excerpt(text.substr(0, 60));
    fail(Errc::encoding_error,
         "characters outside vocabulary [" + list + "] in text \"" + excerpt + "\"");
  }
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += piece(id);
  return out;
}

std::string_view Tokenizer::piece(int id) const {
  if (id < 0 || id >= size())
    fail(Errc::invalid_argument, "token id " + std::to_string(id) + " out of range");
  return pieces_[static_cast<std::size_t>(id)];
}

}  // namespace ssb::lm
