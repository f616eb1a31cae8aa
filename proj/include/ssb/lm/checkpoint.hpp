// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoint, little-endian:
//   "SSBM" | version u32 | vocab context layers width heads mlp (u32 each) | seed u64
//   lora flag u32 [rank u32 | alpha f32 | seed u64 | n u32 | n x str]
//   tensor count u32 | per tensor: name str | rank u32 | dims u32... | f32 data
//   crc32 of all preceding bytes
// str = u32 length + bytes. Base tensors come first in parameter order, then
// adapter factors named "lora.<matrix>.a" / "lora.<matrix>.b".
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ssb/lm/model.hpp"

namespace ssb::lm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace ssb::lm
