#include <random>

#include "doctest.h"
#include "ssb/common/error.hpp"
#include "ssb/lm/chat.hpp"
#include "ssb/lm/prompts.hpp"
#include "ssb/lm/tokenizer.hpp"

using namespace ssb::lm;

namespace {
const Tokenizer& tok() { return Tokenizer::standard(); }
}  // namespace

TEST_CASE("round trip on ordinary text") {
  for (std::string s : {"", "3-7=-4\n-4*2=-8\n\\boxed{-8}", "((3-7)*2)+5", "hello world ~!@#"}) {
    CHECK(tok().decode(tok().encode(s)) == s);
  }
}

TEST_CASE("prompt templates encode to few tokens and round trip") {
  const std::string sys(kDefaultSystemPrompt);
  auto ids = tok().encode(sys);
  CHECK(ids.size() == 1);
  CHECK(tok().decode(ids) == sys);
  auto r = render_refine_prompt(kDefaultRefineTemplate, "1+2", "1+2=3\n\\boxed{3}",
                                "1+2=4\n\\boxed{4}");
  CHECK(tok().decode(tok().encode(r)) == r);
}

TEST_CASE("boxed delimiters are single tokens") {
  auto ids = tok().encode("\\boxed{12}");
  REQUIRE(ids.size() == 4);
  CHECK(ids.front() == Tokenizer::kBoxOpen);
  CHECK(ids.back() == Tokenizer::kBoxClose);
}

TEST_CASE("property: random printable strings round trip") {
  std::mt19937 g(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const int n = g() % 80;
    for (int i = 0; i < n; ++i) {
      const int c = g() % 97;
      s.push_back(c == 96 ? '\n' : static_cast<char>(32 + c % 95));
    }
    CHECK(tok().decode(tok().encode(s)) == s);
  }
}

TEST_CASE("unencodable characters are reported") {
  try {
    tok().encode("ok\x01ok\xff");
    FAIL("expected encoding-error");
  } catch (const ssb::Error& e) {
    CHECK(e.code() == ssb::Errc::encoding_error);
    CHECK(std::string(e.what()).find("0x01") != std::string::npos);
    CHECK(std::string(e.what()).find("0xff") != std::string::npos);
  }
}

TEST_CASE("chat layout and answer span") {
  ChatMessages m{{Role::system, "S"}, {Role::user, "1+2"}, {Role::assistant, "1+2=3"}};
  auto enc = encode_chat(m);
  CHECK(enc.tokens.front() == Tokenizer::kSystem);
  CHECK(enc.tokens.back() == Tokenizer::kEndOfMessage);
  CHECK(enc.answer_size() == 5);
  CHECK(enc.tokens[enc.answer_begin - 1] == Tokenizer::kAssistant);
  std::vector<int> ans(enc.tokens.begin() + enc.answer_begin, enc.tokens.begin() + enc.answer_end);
  CHECK(tok().decode(ans) == "1+2=3");
  CHECK(decode_chat(enc.tokens) == m);

  ChatMessages prompt{{Role::system, "S"}, {Role::user, "1+2"}};
  auto p = encode_chat(prompt);
  CHECK(p.tokens.back() == Tokenizer::kAssistant);
  CHECK(p.answer_size() == 0);
  CHECK(p.answer_begin == p.tokens.size());
}

TEST_CASE("answer tokens do not depend on the preceding context") {
  const std::string answer = "3-7=-4\n-4*2=-8\n\\boxed{-8}";
  ChatMessages student{{Role::system, std::string(kDefaultSystemPrompt)},
                       {Role::user, "(3-7)*2"},
                       {Role::assistant, answer}};
  ChatMessages teacher{{Role::system, std::string(kDefaultSystemPrompt)},
                       {Role::user, render_refine_prompt(kDefaultRefineTemplate, "(3-7)*2", answer,
                                                         "3-7=4\n4*2=8\n\\boxed{8}")},
                       {Role::assistant, answer}};
  auto s = encode_chat(student), t = encode_chat(teacher);
  CHECK(s.answer_size() == t.answer_size());
  CHECK(std::equal(s.tokens.begin() + s.answer_begin, s.tokens.begin() + s.answer_end,
                   t.tokens.begin() + t.answer_begin));
  CHECK(t.tokens.size() > s.tokens.size());
}

TEST_CASE("invalid chats are rejected") {
  CHECK_THROWS_AS(validate_chat({{Role::assistant, "a"}, {Role::user, "b"}}), ssb::Error);
  CHECK_THROWS_AS(validate_chat({{Role::assistant, "a"}, {Role::assistant, "b"}}), ssb::Error);
  CHECK_NOTHROW(validate_chat({{Role::user, "b"}, {Role::assistant, "a"}}));
}
