// SPDX-License-Identifier: Apache-2.0
#include "ssb/curation/answer.hpp"

#include <cctype>

namespace ssb::curation {

namespace {

constexpr std::string_view kOpen = "\\boxed{";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string canonical_answer(std::string_view s) {
  s = trim(s);
  std::string_view digits = s;
  bool negative = false;
  if (!digits.empty() && (digits.front() == '-' || digits.front() == '+')) {
    negative = digits.front() == '-';
    digits = trim(digits.substr(1));
  }
  if (digits.empty()) return std::string(s);
  for (char c : digits)
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::string(s);
  while (digits.size() > 1 && digits.front() == '0') digits.remove_prefix(1);
  if (digits == "0") negative = false;
  return (negative ? "-" : "") + std::string(digits);
}

std::optional<std::string> extract_boxed_answer(std::string_view text) {
  std::optional<std::string_view> last;
  std::size_t from = 0;
  for (;;) {
    const std::size_t open = text.find(kOpen, from);
    if (open == std::string_view::npos) break;
    const std::size_t body = open + kOpen.size();
    int depth = 1;
    std::size_t i = body;
    for (; i < text.size() && depth > 0; ++i) {
      if (text[i] == '{') ++depth;
      else if (text[i] == '}') --depth;
    }
    if (depth == 0) {
      last = text.substr(body, i - 1 - body);
      from = i;
    } else {
      // Never closes; a later box inside it may still be balanced.
      from = body;
    }
  }
  if (!last) return std::nullopt;
  std::string_view content = trim(*last);
  // Unwrap while the whole content is a single box.
  while (content.starts_with(kOpen)) {
    int depth = 1;
    std::size_t i = kOpen.size();
    for (; i < content.size() && depth > 0; ++i) {
      if (content[i] == '{') ++depth;
      else if (content[i] == '}') --depth;
    }
    if (depth != 0 || i != content.size()) break;
    content = trim(content.substr(kOpen.size(), content.size() - kOpen.size() - 1));
  }
  if (content.empty()) return std::nullopt;
  return canonical_answer(content);
}

}  // namespace ssb::curation
