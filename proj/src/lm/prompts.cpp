// SPDX-License-Identifier: Apache-2.0
#include "ssb/lm/prompts.hpp"

#include <array>

#include "ssb/common/error.hpp"

namespace ssb::lm {

const std::string_view kDefaultSystemPrompt =
    "**Role:** You are an expert math tutor. When you are given a problem to solve, you "
    "provide detailed step-by-step reasoning in your solution. Your response is clear, "
    "precise, and unambiguous. You do not skip any step. You put your final answer within "
    "\\boxed{} at the end of your response.";

const std::string_view kDefaultRefineTemplate =
    "We have two sample responses from students for a math problem for you to observe. One "
    "of the responses is correct, and the other is incorrect. The students were asked to put "
    "the final answer inside \\boxed{} in their responses. Only this final answer was checked "
    "by an automatic evaluator. The following is the problem:\n"
    "--------\n"
    "{question}\n"
    "--------\n"
    "\n"
    "This is the correct response from a student:\n"
    "--------\n"
    "{chosen_correct_generation}\n"
    "--------\n"
    "\n"
    "This is an attempt by another student which was labelled as incorrect by "
    "auto-evaluator:\n"
    "--------\n"
    "{rejected_generation}\n"
    "--------\n"
    "\n"
    "Write a coherent, step-by-step derivation of the solution. Do not skip any step in your "
    "response, and make it as detailed as possible. This should be a standalone solution of "
    "the given problem since this solution will be used by the students for studying and "
    "learning. Make the solution robust by cautioning about potential errors or wrong chain "
    "of reasoning. However, do not mention in your response that you were provided attempted "
    "responses by the students. There should not be a slightest mention or hint that you are "
    "actually refining from correct or incorrect responses written by students.\n"
    "\n"
    "Conclude the entire response with the final answer, enclosed in \\boxed{}, at the very "
    "end. Make sure your enclosed final answer exactly matches the enclosed final answer in "
    "the given correct response of the student.";

namespace {

constexpr std::array<std::string_view, 3> kPlaceholders = {
    "{question}", "{chosen_correct_generation}", "{rejected_generation}"};

}  // namespace

std::vector<std::string> template_segments(std::string_view tpl) {
  std::vector<std::string> segs;
  std::size_t pos = 0;
  for (auto ph : kPlaceholders) {
    const auto at = tpl.find(ph, pos);
    if (at == std::string_view::npos)
      fail(Errc::template_error, "refine template lacks placeholder " + std::string(ph) +
                                     " (placeholders must appear once, in order)");
    segs.emplace_back(tpl.substr(pos, at - pos));
    pos = at + ph.size();
  }
  segs.emplace_back(tpl.substr(pos));
  for (auto ph : kPlaceholders)
    for (const auto& s : segs)
      if (s.find(ph) != std::string::npos)
        fail(Errc::template_error, "placeholder " + std::string(ph) + " appears more than once");
  return segs;
}

std::string render_refine_prompt(std::string_view tpl, std::string_view question,
                                 std::string_view correct, std::string_view wrong) {
  const auto segs = template_segments(tpl);
  std::string out;
  out.reserve(tpl.size() + question.size() + correct.size() + wrong.size());
  out += segs[0];
  out += question;
  out += segs[1];
  out += correct;
  out += segs[2];
  out += wrong;
  out += segs[3];
  return out;
}

}  // namespace ssb::lm
