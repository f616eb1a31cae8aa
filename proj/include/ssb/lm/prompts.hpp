// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ssb::lm {

// System message for every rollout, refinement and evaluation.
extern const std::string_view kDefaultSystemPrompt;
// Refinement user message with {question}, {chosen_correct_generation} and
// {rejected_generation} placeholders, in that order.
extern const std::string_view kDefaultRefineTemplate;

struct PromptTemplates {
  std::string system = std::string(kDefaultSystemPrompt);
  std::string refine = std::string(kDefaultRefineTemplate);
};

// Fixed text between the placeholders of a refine template (4 segments).
// Throws template-error when a placeholder is missing, repeated or out of order.
std::vector<std::string> template_segments(std::string_view refine_template);

// Single-pass substitution; inserted text is never rescanned.
std::string render_refine_prompt(std::string_view refine_template, std::string_view question,
                                 std::string_view correct, std::string_view wrong);

}  // namespace ssb::lm
