// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ssb::lm {

enum class Role { system, user, assistant };

std::string role_name(Role r);
Role parse_role(const std::string& name);

struct Message {
  Role role;
  std::string text;
  bool operator==(const Message&) const = default;
};

using ChatMessages = std::vector<Message>;

// Throws invalid-argument unless there is at most one assistant message and
// it is the last one.
void validate_chat(const ChatMessages& messages);

struct EncodedChat {
  std::vector<int> tokens;
  // Assistant text tokens occupy [answer_begin, answer_end). Without an
  // assistant message the sequence ends with the assistant marker as a
  // generation prompt and the span is empty at the end.
  std::size_t answer_begin = 0;
  std::size_t answer_end = 0;
  std::size_t answer_size() const { return answer_end - answer_begin; }
};

// Layout per message: <role marker> text <eom>.
EncodedChat encode_chat(const ChatMessages& messages);
ChatMessages decode_chat(std::span<const int> tokens);

}  // namespace ssb::lm
