// SPDX-License-Identifier: Apache-2.0
#include "ssb/common/error.hpp"

namespace ssb {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_state: return "invalid-state";
    case Errc::sequence_too_long: return "sequence-too-long";
    case Errc::encoding_error: return "encoding-error";
    case Errc::template_error: return "template-error";
    case Errc::corrupt_store: return "corrupt-store";
    case Errc::not_found: return "not-found";
    case Errc::io_error: return "io-error";
    case Errc::config_error: return "config-error";
    case Errc::missing_input: return "missing-input";
    case Errc::stale_input: return "stale-input";
  }
  return "unknown";
}

}  // namespace ssb
