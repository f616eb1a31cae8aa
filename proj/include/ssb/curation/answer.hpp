// SPDX-License-Identifier: Apache-2.0
//
// Boxed-answer extraction shared by curation and evaluation.
#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace ssb::curation {

// Integer strings lose surrounding whitespace, a leading '+', leading zeros
// and the sign of zero ("-007" -> "-7", "+0" -> "0"). Anything else is only
// trimmed.
std::string canonical_answer(std::string_view s);

// Content of the last top-level \boxed{...} whose braces balance, after
// canonicalization. A box whose content is itself a single box resolves to
// the inner content. Unbalanced boxes are ignored; an empty box counts as no
// answer.
std::optional<std::string> extract_boxed_answer(std::string_view text);

}  // namespace ssb::curation
