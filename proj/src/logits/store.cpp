// SPDX-License-Identifier: Apache-2.0
#include "ssb/logits/store.hpp"

#include <algorithm>
#include <cstring>

#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"

namespace ssb::logits {

using namespace ssb::io;

namespace {

constexpr char kMagic[4] = {'S', 'S', 'B', 'L'};
constexpr std::size_t kHeader = 16;
constexpr std::size_t kEntry = 20;

[[noreturn]] void corrupt(const std::string& what, std::uint64_t offset) {
  throw Error(Errc::corrupt_store, what + " at byte " + std::to_string(offset), offset);
}

}  // namespace

std::vector<std::uint8_t> encode_store(std::span<const LogitSequence> sequences) {
  std::vector<const LogitSequence*> order;
  for (const auto& s : sequences) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const LogitSequence* a, const LogitSequence* b) { return a->id < b->id; });
  std::uint32_t vocab = order.empty() ? 0 : static_cast<std::uint32_t>(order[0]->vocab());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& s = *order[i];
    if (i > 0 && order[i - 1]->id == s.id)
      fail(Errc::invalid_argument, "duplicate sequence id " + std::to_string(s.id));
    if (s.rows() > 0 && s.vocab() != vocab)
      fail(Errc::invalid_argument, "mixed vocabulary sizes in one store");
    if (s.rows() > 0 && vocab == 0) vocab = static_cast<std::uint32_t>(s.vocab());
    numerics::check_finite(s.logits, "logit sequence " + std::to_string(s.id));
  }

  ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u32(kStoreVersion);
  w.u32(vocab);
  w.u32(static_cast<std::uint32_t>(order.size()));
  std::uint64_t offset = kHeader + kEntry * order.size() + 4;
  for (const auto* s : order) {
    w.u64(s->id);
    w.u64(offset);
    w.u32(static_cast<std::uint32_t>(s->rows()));
    offset += s->rows() * vocab * 4 + 4;
  }
  w.u32(crc32(w.buffer()));
  for (const auto* s : order) {
    const std::size_t start = w.size();
    if (s->rows() > 0) w.f32s(s->logits.data);
    w.u32(crc32(std::span(w.buffer()).subspan(start)));
  }
  return std::move(w.buffer());
}

void write_store(std::span<const LogitSequence> sequences, const std::filesystem::path& path) {
  write_atomic(path, encode_store(sequences));
}

LogitStore LogitStore::from_bytes(std::vector<std::uint8_t> bytes) {
  LogitStore s;
  s.bytes_ = std::move(bytes);
  const std::span<const std::uint8_t> b(s.bytes_);
  if (b.size() < kHeader + 4) corrupt("file shorter than its header", b.size());
  if (std::memcmp(b.data(), kMagic, 4) != 0) corrupt("bad magic", 0);
  ByteReader r(b);
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kStoreVersion) corrupt("unsupported version " + std::to_string(version), 4);
  s.vocab_ = r.u32();
  const std::uint32_t count = r.u32();
  const std::uint64_t index_end = kHeader + static_cast<std::uint64_t>(kEntry) * count;
  if (index_end + 4 > b.size()) corrupt("index table runs past end of file", b.size());
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.id = r.u64();
    e.offset = r.u64();
    e.rows = r.u32();
    s.entries_.push_back(e);
  }
  const std::uint32_t header_crc = r.u32();
  if (crc32(b.subspan(0, index_end)) != header_crc) corrupt("header checksum mismatch", index_end);

  std::uint64_t expect = index_end + 4;
  for (std::size_t i = 0; i < s.entries_.size(); ++i) {
    const Entry& e = s.entries_[i];
    const std::uint64_t at = kHeader + kEntry * i;
    if (i > 0 && s.entries_[i - 1].id >= e.id) corrupt("index ids not strictly increasing", at);
    if (e.offset != expect) corrupt("payload offset does not follow previous payload", at + 8);
    const std::uint64_t len = static_cast<std::uint64_t>(e.rows) * s.vocab_ * 4;
    if (e.offset + len + 4 > b.size()) corrupt("payload runs past end of file", b.size());
    std::uint32_t stored;
    std::memcpy(&stored, b.data() + e.offset + len, 4);
    if (crc32(b.subspan(e.offset, len)) != stored) corrupt("payload checksum mismatch", e.offset);
    expect = e.offset + len + 4;
  }
  if (expect != b.size()) corrupt("trailing bytes after last payload", expect);
  return s;
}

LogitStore LogitStore::open(const std::filesystem::path& path) {
  return from_bytes(read_bytes(path));
}

bool LogitStore::contains(std::uint64_t id) const {
  return std::binary_search(entries_.begin(), entries_.end(), Entry{id, 0, 0},
                            [](const Entry& a, const Entry& b) { return a.id < b.id; });
}

LogitSequence LogitStore::lookup(std::uint64_t id) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), Entry{id, 0, 0},
                             [](const Entry& a, const Entry& b) { return a.id < b.id; });
  if (it == entries_.end() || it->id != id)
    fail(Errc::not_found, "no logit sequence for id " + std::to_string(id));
  LogitSequence s;
  s.id = id;
  if (it->rows == 0) return s;
  s.logits = numerics::Tensor({it->rows, vocab_});
  std::memcpy(s.logits.data.data(), bytes_.data() + it->offset, s.logits.numel() * 4);
  return s;
}

std::vector<LogitSequence> LogitStore::read_all() const {
  std::vector<LogitSequence> out;
  for (const auto& e : entries_) out.push_back(lookup(e.id));
  return out;
}

std::vector<LogitSequence> read_store(const std::filesystem::path& path) {
  return LogitStore::open(path).read_all();
}

LogitSequence precompute_teacher_logits(const lm::Model& base, const curation::CuratedPair& pair) {
  require(base.adapters().empty(), Errc::invalid_state,
          "teacher logits come from the frozen base model; detach adapters first");
  return lm::answer_logits(base, pair.teacher, pair.problem_id);
}

}  // namespace ssb::logits
