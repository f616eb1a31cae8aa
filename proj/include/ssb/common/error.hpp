// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace ssb {

enum class Errc {
  invalid_argument,
  invalid_state,
  sequence_too_long,
  encoding_error,
  template_error,
  corrupt_store,
  not_found,
  io_error,
  config_error,
  missing_input,
  stale_input,
};

const char* errc_name(Errc code);

// All library failures surface as ssb::Error; the code selects the category.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what,
        std::optional<std::uint64_t> offset = std::nullopt)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code),
        offset_(offset) {}

  Errc code() const noexcept { return code_; }
  // Byte offset for corrupt-store failures.
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  Errc code_;
  std::optional<std::uint64_t> offset_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace ssb
