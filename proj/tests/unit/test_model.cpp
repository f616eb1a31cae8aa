#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"
#include "ssb/lm/checkpoint.hpp"
#include "ssb/lm/decoder.hpp"
#include "ssb/lm/tokenizer.hpp"

using namespace ssb::lm;
using ssb::numerics::Tape;
using ssb::numerics::bitwise_equal;

namespace {

ModelConfig small_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.vocab = Tokenizer::standard().size();
  c.context = 48;
  c.layers = 2;
  c.width = 32;
  c.heads = 4;
  c.mlp = 64;
  c.seed = seed;
  return c;
}

std::vector<int> random_tokens(std::mt19937& g, std::size_t n, int vocab) {
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(g() % vocab);
  return t;
}

bool rows_equal(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
  return a.cols() == b.cols() &&
         std::memcmp(a.row(ra).data(), b.row(rb).data(), a.cols() * sizeof(float)) == 0;
}

// Fills B factors so adapters actually change the output.
void perturb_adapters(Model& m, std::uint32_t seed) {
  std::mt19937 g(seed);
  std::normal_distribution<float> d(0.0f, 0.05f);
  for (auto& [name, ad] : m.adapters())
    for (auto& x : ad.b.data) x = d(g);
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  Model a(small_config(3)), b(small_config(3)), c(small_config(4));
  bool all_same = true, any_diff = false;
  for (const auto& n : a.param_names()) {
    all_same = all_same && bitwise_equal(a.param(n), b.param(n));
    any_diff = any_diff || !bitwise_equal(a.param(n), c.param(n));
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), ssb::Error);
  c = small_config();
  c.vocab = 1;
  CHECK_THROWS_AS(Model{c}, ssb::Error);
}

TEST_CASE("forward output shape and determinism") {
  Model m(small_config());
  std::mt19937 g(1);
  auto toks = random_tokens(g, 20, m.config().vocab);
  auto a = forward(m, toks), b = forward(m, toks);
  CHECK(a.shape == std::vector<std::size_t>{20, static_cast<std::size_t>(m.config().vocab)});
  CHECK(bitwise_equal(a, b));
  CHECK(a.all_finite());
}

TEST_CASE("property: logits are causal") {
  Model m(small_config(5));
  std::mt19937 g(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto toks = random_tokens(g, 30, m.config().vocab);
    const std::size_t cut = 1 + g() % 28;
    auto changed = toks;
    for (std::size_t i = cut; i < changed.size(); ++i)
      changed[i] = (changed[i] + 1 + g() % 5) % m.config().vocab;
    auto a = forward(m, toks), b = forward(m, changed);
    for (std::size_t i = 0; i < cut; ++i) CHECK(rows_equal(a, i, b, i));
  }
}

TEST_CASE("graph forward matches incremental forward bit for bit") {
  Model m(small_config(6));
  attach_lora(m, LoraConfig{});
  perturb_adapters(m, 1);
  std::mt19937 g(3);
  auto toks = random_tokens(g, 25, m.config().vocab);
  Tape t;
  auto params = bind_params(t, m, TrainScope::adapters);
  auto out = forward_graph(t, m, params, toks);
  CHECK(bitwise_equal(t.value(out), forward(m, toks)));
}

TEST_CASE("answer_logits equals a sequential oracle") {
  Model m(small_config(7));
  ChatMessages msgs{{Role::system, "S"}, {Role::user, "2*3"}, {Role::assistant, "2*3=6\n\\boxed{6}"}};
  auto enc = encode_chat(msgs);
  auto seq = answer_logits(m, msgs, 99);
  CHECK(seq.id == 99);
  REQUIRE(seq.rows() == enc.answer_size());
  for (std::size_t j = 0; j < seq.rows(); ++j) {
    // Independently re-run the model on the prefix and take the last row.
    std::vector<int> prefix(enc.tokens.begin(), enc.tokens.begin() + enc.answer_begin + j);
    auto full = forward(m, prefix);
    CHECK(rows_equal(seq.logits, j, full, prefix.size() - 1));
  }
}

TEST_CASE("greedy sampling equals argmax decoding") {
  Model m(small_config(8));
  const int V = m.config().vocab;
  std::mt19937 g(4);
  for (int p = 0; p < 100; ++p) {
    auto prompt = random_tokens(g, 3 + g() % 8, V);
    SampleOptions opts;
    opts.max_new = 6;
    opts.temperature = 0.0;
    ssb::Rng rng(p);
    auto gen = sample(m, prompt, opts, rng);
    // Oracle: full forward, append argmax, repeat.
    std::vector<int> seq = prompt, expect;
    for (int i = 0; i < opts.max_new; ++i) {
      auto l = forward(m, seq);
      const int next = argmax(l.row(seq.size() - 1));
      if (next == Tokenizer::kEndOfMessage) break;
      expect.push_back(next);
      seq.push_back(next);
    }
    CHECK(gen.tokens == expect);
    opts.temperature = 1e-6;
    ssb::Rng rng2(p);
    CHECK(sample(m, prompt, opts, rng2).tokens == expect);
  }
}

TEST_CASE("sampling is reproducible from the seed") {
  Model m(small_config(9));
  std::vector<int> prompt{0, 40, 41, 3, 2};
  SampleOptions opts;
  opts.max_new = 20;
  ssb::Rng a(5), b(5);
  CHECK(sample(m, prompt, opts, a).tokens == sample(m, prompt, opts, b).tokens);
}

TEST_CASE("context overflow raises sequence-too-long") {
  Model m(small_config());
  std::vector<int> toks(m.config().context + 1, 7);
  try {
    forward(m, toks);
    FAIL("expected sequence-too-long");
  } catch (const ssb::Error& e) {
    CHECK(e.code() == ssb::Errc::sequence_too_long);
  }
  std::vector<int> ok(m.config().context, 7);
  CHECK_NOTHROW(forward(m, ok));
}

TEST_CASE("LoRA parameter count and zero-init equality") {
  Model m(small_config(10));
  std::mt19937 g(5);
  auto toks = random_tokens(g, 16, m.config().vocab);
  auto before = forward(m, toks);
  LoraConfig cfg;
  cfg.rank = 3;
  cfg.targets = {"wq", "layers.1.w1"};
  auto rep = attach_lora(m, cfg);
  const std::size_t d = 32, h = 64, L = 2;
  const std::size_t expect = L * cfg.rank * (d + d) + cfg.rank * (d + h);
  CHECK(rep.trainable == expect);
  CHECK(m.adapter_param_count() == expect);
  CHECK(rep.total == m.base_param_count() + expect);
  CHECK(bitwise_equal(forward(m, toks), before));
}

TEST_CASE("merged adapters reproduce the adapted model") {
  Model m(small_config(11));
  LoraConfig cfg;
  cfg.targets = {"wq", "wk", "wv", "wo", "w1", "w2"};
  attach_lora(m, cfg);
  perturb_adapters(m, 2);
  std::mt19937 g(6);
  auto toks = random_tokens(g, 24, m.config().vocab);
  auto a = forward(m, toks);
  auto mm = merged(m);
  CHECK(mm.adapters().empty());
  auto b = forward(mm, toks);
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  CHECK(worst <= 1e-5f);
}

TEST_CASE("unknown adapter targets are rejected") {
  Model m(small_config());
  LoraConfig cfg;
  cfg.targets = {"wz"};
  CHECK_THROWS_AS(attach_lora(m, cfg), ssb::Error);
  cfg.targets = {"layers.9.wq"};
  CHECK_THROWS_AS(attach_lora(m, cfg), ssb::Error);
}

TEST_CASE("rank can be sized to a trainable fraction") {
  auto c = small_config();
  std::vector<std::string> t{"wq", "wv"};
  const int r = rank_for_fraction(c, t, 0.02);
  Model m(c);
  LoraConfig cfg;
  cfg.rank = r;
  cfg.targets = t;
  auto rep = attach_lora(m, cfg);
  CHECK(rep.fraction() >= 0.02);
  if (r > 1) {
    Model m2(c);
    cfg.rank = r - 1;
    CHECK(attach_lora(m2, cfg).fraction() < 0.02);
  }
}

TEST_CASE("adapter gradients reach only the adapters") {
  Model m(small_config(12));
  attach_lora(m, LoraConfig{});
  Tape t;
  auto params = bind_params(t, m, TrainScope::adapters);
  CHECK(params.trainable.size() == 2 * m.adapters().size());
  std::vector<int> toks{0, 40, 41, 42, 3, 2, 43};
  auto logits = forward_graph(t, m, params, toks);
  std::vector<int> targets{40, 41, 42, 3, 2, 43, -1};
  t.backward(ssb::numerics::ops::cross_entropy_rows(t, logits, targets));
  auto grads = collect_grads(t, m, params);
  REQUIRE(grads.size() == params.trainable.size());
  // B starts at zero so A receives no gradient yet, but B does.
  double bnorm = 0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (params.trainable[i].first.ends_with(".b"))
      for (float x : grads[i].data) bnorm += x * x;
  CHECK(bnorm > 0.0);
}

TEST_CASE("checkpoint round trip and corruption detection") {
  Model m(small_config(13));
  attach_lora(m, LoraConfig{});
  perturb_adapters(m, 3);
  auto bytes = serialize_checkpoint(m);
  Model r = deserialize_checkpoint(bytes);
  CHECK(r.config() == m.config());
  REQUIRE(r.lora().has_value());
  CHECK(*r.lora() == *m.lora());
  for (const auto& n : m.param_names()) CHECK(bitwise_equal(r.param(n), m.param(n)));
  for (const auto& [name, ad] : m.adapters()) {
    CHECK(bitwise_equal(r.adapters().at(name).a, ad.a));
    CHECK(bitwise_equal(r.adapters().at(name).b, ad.b));
  }

  auto dir = std::filesystem::temp_directory_path() / "ssb_test_ckpt";
  std::filesystem::create_directories(dir);
  save_checkpoint(m, dir / "m.ckpt");
  CHECK(serialize_checkpoint(load_checkpoint(dir / "m.ckpt")) == bytes);
  std::filesystem::remove_all(dir);

  std::mt19937 g(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto bad = bytes;
    bad[g() % bad.size()] ^= static_cast<std::uint8_t>(1u << (g() % 8));
    try {
      deserialize_checkpoint(bad);
      FAIL("corruption not detected");
    } catch (const ssb::Error& e) {
      CHECK(e.code() == ssb::Errc::corrupt_store);
    }
  }
  auto cut = bytes;
  cut.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_checkpoint(cut), ssb::Error);
}
