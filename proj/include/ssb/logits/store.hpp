// SPDX-License-Identifier: Apache-2.0
//
// Teacher logit store ("SSBL"), little-endian:
//
//   magic "SSBL" | version u32 | vocab u32 | count u32
//   count x { id u64 | offset u64 | rows u32 }
//   crc32 u32 over every preceding byte
//   count x { rows*vocab f32 | crc32 u32 over those floats }
//
// Offsets are absolute and point at the first float of each payload.
// Entries are sorted by id, so the bytes do not depend on write order.
// docs/logit_store.md has an annotated sample.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ssb/curation/curation.hpp"
#include "ssb/lm/decoder.hpp"

namespace ssb::logits {

using lm::LogitSequence;

inline constexpr std::uint32_t kStoreVersion = 1;

// Throws invalid-argument on duplicate ids, mixed vocab sizes or non-finite
// values.
std::vector<std::uint8_t> encode_store(std::span<const LogitSequence> sequences);
void write_store(std::span<const LogitSequence> sequences, const std::filesystem::path& path);

class LogitStore {
 public:
  struct Entry {
    std::uint64_t id;
    std::uint64_t offset;
    std::uint32_t rows;
  };

  // Validates the whole file up front; throws corrupt-store with the byte
  // offset of the first problem.
  static LogitStore from_bytes(std::vector<std::uint8_t> bytes);
  static LogitStore open(const std::filesystem::path& path);

  std::uint32_t vocab() const { return vocab_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool contains(std::uint64_t id) const;
  // Throws not-found.
  LogitSequence lookup(std::uint64_t id) const;
  std::vector<LogitSequence> read_all() const;

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint32_t vocab_ = 0;
  std::vector<Entry> entries_;
};

std::vector<LogitSequence> read_store(const std::filesystem::path& path);

// Teacher-view rows of the refined solution. The model must carry no adapters.
LogitSequence precompute_teacher_logits(const lm::Model& base, const curation::CuratedPair& pair);

}  // namespace ssb::logits
