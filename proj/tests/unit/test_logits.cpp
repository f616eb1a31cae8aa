#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "ssb/common/error.hpp"
#include "ssb/lm/tokenizer.hpp"
#include "ssb/logits/store.hpp"

using namespace ssb::logits;
using ssb::numerics::Tensor;

namespace {

std::vector<LogitSequence> random_sequences(std::size_t n, std::size_t vocab, std::uint32_t seed) {
  std::mt19937 g(seed);
  std::normal_distribution<float> d(0.0f, 3.0f);
  std::vector<LogitSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    LogitSequence s;
    s.id = (static_cast<std::uint64_t>(g()) << 32) | g();
    const std::size_t rows = 1 + g() % 40;
    s.logits = Tensor({rows, vocab});
    for (auto& x : s.logits.data) x = d(g);
    out.push_back(std::move(s));
  }
  return out;
}

bool same(const LogitSequence& a, const LogitSequence& b) {
  return a.id == b.id && ssb::numerics::bitwise_equal(a.logits, b.logits);
}

ssb::Errc code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    LogitStore::from_bytes(bytes);
  } catch (const ssb::Error& e) {
    return e.code();
  }
  return ssb::Errc::invalid_state;  // not detected
}

ssb::lm::ModelConfig tiny() {
  ssb::lm::ModelConfig c;
  c.vocab = ssb::lm::Tokenizer::standard().size();
  c.context = 256;
  c.layers = 1;
  c.width = 16;
  c.heads = 2;
  c.mlp = 32;
  return c;
}

ssb::curation::CuratedPair sample_pair() {
  auto p = ssb::task::make_problem({3, 7, 2}, "-*");
  ssb::lm::PromptTemplates t;
  const std::string good = "3-7=-4\n-4*2=-8\n\\boxed{-8}";
  return ssb::curation::make_pair(
      p, ssb::curation::build_ssb_prompt(p.question, good, "3-7=4\n4*2=8\n\\boxed{8}", t), good, t);
}

}  // namespace

TEST_CASE("round trip of 256 sequences is bitwise exact") {
  auto seqs = random_sequences(256, 106, 1);
  auto bytes = encode_store(seqs);
  auto store = LogitStore::from_bytes(bytes);
  CHECK(store.size() == 256);
  CHECK(store.vocab() == 106);
  for (const auto& s : seqs) CHECK(same(store.lookup(s.id), s));
  auto all = store.read_all();
  CHECK(std::is_sorted(all.begin(), all.end(),
                       [](const LogitSequence& a, const LogitSequence& b) { return a.id < b.id; }));

  auto dir = std::filesystem::temp_directory_path() / "ssb_test_store";
  std::filesystem::create_directories(dir);
  write_store(seqs, dir / "t.ssbl");
  CHECK(read_store(dir / "t.ssbl").size() == 256);
  std::filesystem::remove_all(dir);
}

TEST_CASE("lookup of an absent id is not-found") {
  auto seqs = random_sequences(3, 8, 2);
  auto store = LogitStore::from_bytes(encode_store(seqs));
  CHECK(store.contains(seqs[0].id));
  CHECK_FALSE(store.contains(12345));
  try {
    store.lookup(12345);
    FAIL("expected not-found");
  } catch (const ssb::Error& e) {
    CHECK(e.code() == ssb::Errc::not_found);
  }
}

TEST_CASE("bytes do not depend on write order") {
  auto seqs = random_sequences(20, 16, 3);
  auto a = encode_store(seqs);
  std::mt19937 g(4);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(seqs.begin(), seqs.end(), g);
    CHECK(encode_store(seqs) == a);
  }
}

TEST_CASE("declared payload lengths match row count times vocab") {
  auto seqs = random_sequences(10, 12, 5);
  auto bytes = encode_store(seqs);
  auto store = LogitStore::from_bytes(bytes);
  const auto& e = store.entries();
  for (std::size_t i = 0; i < e.size(); ++i) {
    const std::uint64_t next = i + 1 < e.size() ? e[i + 1].offset : bytes.size() + 0;
    CHECK(next - e[i].offset - 4 == static_cast<std::uint64_t>(e[i].rows) * 12 * 4);
  }
}

TEST_CASE("every single flipped byte is detected") {
  auto bytes = encode_store(random_sequences(3, 6, 6));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x5a;
    CAPTURE(i);
    CHECK(code_of(bad) == ssb::Errc::corrupt_store);
  }
}

TEST_CASE("truncation and trailing bytes are detected with an offset") {
  auto bytes = encode_store(random_sequences(4, 6, 7));
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{17}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + len);
    CHECK(code_of(cut) == ssb::Errc::corrupt_store);
  }
  auto longer = bytes;
  longer.push_back(0);
  try {
    LogitStore::from_bytes(longer);
    FAIL("expected corrupt-store");
  } catch (const ssb::Error& e) {
    CHECK(e.code() == ssb::Errc::corrupt_store);
    CHECK(e.offset() == bytes.size());
  }
}

TEST_CASE("invalid inputs to the writer") {
  auto seqs = random_sequences(2, 6, 8);
  seqs[1].id = seqs[0].id;
  CHECK_THROWS_AS(encode_store(seqs), ssb::Error);
  seqs = random_sequences(1, 6, 9);
  seqs[0].logits.data[0] = std::nanf("");
  CHECK_THROWS_AS(encode_store(seqs), ssb::Error);
}

TEST_CASE("empty store round trips") {
  auto store = LogitStore::from_bytes(encode_store({}));
  CHECK(store.size() == 0);
}

TEST_CASE("teacher precomputation") {
  ssb::lm::Model m(tiny());
  auto pair = sample_pair();
  auto seq = precompute_teacher_logits(m, pair);
  auto enc = ssb::lm::encode_chat(pair.teacher);
  CHECK(seq.rows() == enc.answer_size());
  CHECK(seq.id == pair.problem_id);
  // Row j against a fresh forward over the prefix.
  for (std::size_t j = 0; j < seq.rows(); ++j) {
    std::vector<int> prefix(enc.tokens.begin(), enc.tokens.begin() + enc.answer_begin + j);
    auto full = ssb::lm::forward(m, prefix);
    CHECK(std::memcmp(seq.logits.row(j).data(), full.row(prefix.size() - 1).data(),
                      full.cols() * 4) == 0);
  }
  const auto before = encode_store(std::vector{seq});
  ssb::lm::attach_lora(m, ssb::lm::LoraConfig{});
  CHECK_THROWS_AS(precompute_teacher_logits(m, pair), ssb::Error);
  for (auto& [n, ad] : m.adapters()) ad.b.fill(0.5f);
  ssb::lm::detach_lora(m);
  CHECK(encode_store(std::vector{precompute_teacher_logits(m, pair)}) == before);
}
