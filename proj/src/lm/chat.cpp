// SPDX-License-Identifier: Apache-2.0
#include "ssb/lm/chat.hpp"

#include "ssb/common/error.hpp"
#include "ssb/lm/tokenizer.hpp"

namespace ssb::lm {

std::string role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

Role parse_role(const std::string& name) {
  if (name == "system") return Role::system;
  if (name == "user") return Role::user;
  if (name == "assistant") return Role::assistant;
  fail(Errc::invalid_argument, "unknown role '" + name + "'");
}

void validate_chat(const ChatMessages& messages) {
  for (std::size_t i = 0; i < messages.size(); ++i)
    if (messages[i].role == Role::assistant && i + 1 != messages.size())
      fail(Errc::invalid_argument, "assistant message must be the last message");
}

namespace {

int marker(Role r) {
  switch (r) {
    case Role::system: return Tokenizer::kSystem;
    case Role::user: return Tokenizer::kUser;
    case Role::assistant: return Tokenizer::kAssistant;
  }
  return Tokenizer::kUser;
}

}  // namespace

EncodedChat encode_chat(const ChatMessages& messages) {
  validate_chat(messages);
  const auto& tok = Tokenizer::standard();
  EncodedChat out;
  bool has_assistant = false;
  for (const auto& m : messages) {
    out.tokens.push_back(marker(m.role));
    auto ids = tok.encode(m.text);
    if (m.role == Role::assistant) {
      has_assistant = true;
      out.answer_begin = out.tokens.size();
      out.answer_end = out.answer_begin + ids.size();
    }
    out.tokens.insert(out.tokens.end(), ids.begin(), ids.end());
    out.tokens.push_back(Tokenizer::kEndOfMessage);
  }
  if (!has_assistant) {
    out.tokens.push_back(Tokenizer::kAssistant);
    out.answer_begin = out.answer_end = out.tokens.size();
  }
  return out;
}

ChatMessages decode_chat(std::span<const int> tokens) {
  const auto& tok = Tokenizer::standard();
  ChatMessages out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    const int m = tokens[i];
    Role role;
    if (m == Tokenizer::kSystem) role = Role::system;
    else if (m == Tokenizer::kUser) role = Role::user;
    else if (m == Tokenizer::kAssistant) role = Role::assistant;
    else fail(Errc::invalid_argument, "expected a role marker at token " + std::to_string(i));
    std::size_t j = i + 1;
    while (j < tokens.size() && tokens[j] != Tokenizer::kEndOfMessage) {
      if (tok.is_marker(tokens[j]))
        fail(Errc::invalid_argument, "unexpected marker inside message at token " + std::to_string(j));
      ++j;
    }
    const bool closed = j < tokens.size();
    // A bare trailing assistant marker is a generation prompt, not a message.
    if (!closed && role == Role::assistant && j == i + 1) break;
    if (!closed && role != Role::assistant)
      fail(Errc::invalid_argument, "unterminated " + role_name(role) + " message");
    out.push_back({role, tok.decode(tokens.subspan(i + 1, j - i - 1))});
    i = closed ? j + 1 : j;
  }
  validate_chat(out);
  return out;
}

}  // namespace ssb::lm
