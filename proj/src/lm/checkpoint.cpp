// SPDX-License-Identifier: Apache-2.0
#include "ssb/lm/checkpoint.hpp"

#include <cstring>

#include "ssb/common/error.hpp"
#include "ssb/common/io.hpp"

namespace ssb::lm {
namespace {

constexpr char kMagic[4] = {'S', 'S', 'B', 'M'};

void put_tensor(io::ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(t.data);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  io::ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  w.u32(kCheckpointVersion);
  const auto& c = model.config();
  for (int v : {c.vocab, c.context, c.layers, c.width, c.heads, c.mlp})
    w.u32(static_cast<std::uint32_t>(v));
  w.u64(c.seed);
  const auto& lora = model.lora();
  w.u32(lora ? 1u : 0u);
  if (lora) {
    w.u32(static_cast<std::uint32_t>(lora->rank));
    w.f32(lora->alpha);
    w.u64(lora->seed);
    w.u32(static_cast<std::uint32_t>(lora->targets.size()));
    for (const auto& t : lora->targets) w.str(t);
  }
  const auto count = model.param_names().size() + 2 * model.adapters().size();
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& n : model.param_names()) put_tensor(w, n, model.param(n));
  for (const auto& [name, ad] : model.adapters()) {
    put_tensor(w, "lora." + name + ".a", ad.a);
    put_tensor(w, "lora." + name + ".b", ad.b);
  }
  const auto crc = io::crc32(w.buffer());
  w.u32(crc);
  return std::move(w.buffer());
}

Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(Errc::corrupt_store, "checkpoint: bad magic", 0);
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body.size(), 4);
  if (io::crc32(body) != stored_crc)
    throw Error(Errc::corrupt_store, "checkpoint: checksum mismatch", body.size());

  io::ByteReader r(body);
  r.take(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw Error(Errc::corrupt_store, "checkpoint: unsupported version " + std::to_string(version), 4);
  ModelConfig c;
  c.vocab = static_cast<int>(r.u32());
  c.context = static_cast<int>(r.u32());
  c.layers = static_cast<int>(r.u32());
  c.width = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.mlp = static_cast<int>(r.u32());
  c.seed = r.u64();
  Model model(c);
  std::optional<LoraConfig> lora;
  if (r.u32() != 0) {
    LoraConfig lc;
    lc.rank = static_cast<int>(r.u32());
    lc.alpha = r.f32();
    lc.seed = r.u64();
    lc.targets.clear();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) lc.targets.push_back(r.str());
    lora = lc;
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto offset = r.pos();
    const auto name = r.str();
    const auto rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    r.f32s(t.data);
    if (name.rfind("lora.", 0) == 0) {
      const bool is_a = name.size() > 2 && name.compare(name.size() - 2, 2, ".a") == 0;
      const std::string matrix = name.substr(5, name.size() - 7);
      if (!model.has_param(matrix))
        throw Error(Errc::corrupt_store, "checkpoint: adapter for unknown matrix " + matrix, offset);
      auto& ad = model.adapters()[matrix];
      (is_a ? ad.a : ad.b) = std::move(t);
    } else {
      Tensor& dst = model.param(name);
      if (!dst.same_shape(t))
        throw Error(Errc::corrupt_store, "checkpoint: shape mismatch for " + name, offset);
      dst = std::move(t);
    }
  }
  if (r.remaining() != 0)
    throw Error(Errc::corrupt_store, "checkpoint: trailing bytes", r.pos());
  model.set_lora(lora);
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  io::write_atomic(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_bytes(path));
}

}  // namespace ssb::lm
