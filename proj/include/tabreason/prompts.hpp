#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

// Prompt templates. The generator/judge wordings are reconstructions and are
// versioned: any wording change must bump `version`.
namespace tabreason::prompts {

struct Template {
  std::string version;
  std::string system;
  // Placeholders are written {name}; see fill().
  std::string user;
};

/// Replaces every {key} in `text`. Throws std::invalid_argument for a
/// placeholder with no value.
std::string fill(const std::string& text,
                 const std::map<std::string, std::string>& values);

// Table + question + gold -> step-by-step trace ending in "FINAL ANSWER: x".
const Template& trace_generation_v1();
// Trace coherence check; last line YES or NO.
const Template& trace_judge_v1();
// Prediction grading; last line CORRECT or INCORRECT.
const Template& answer_judge_v1();

// System prompt of the SFT data: think first, then answer, in tags.
inline constexpr const char* kSftSystemPrompt =
    "You are a helpful assistant. For each question, first think through "
    "your reasoning, then provide an answer. Format your response as: "
    "<think>Your reasoning process</think><answer>Your final answer</answer>";

inline constexpr const char* kFinalAnswerMarker = "FINAL ANSWER:";

// Field labels the templates use; the mock client parses them back out.
inline constexpr const char* kGoldLabel = "Ground-truth answer: ";
inline constexpr const char* kQuestionLabel = "Question: ";
inline constexpr const char* kTraceAnswerLabel = "Trace conclusion: ";
inline constexpr const char* kReferenceLabel = "Reference answer: ";
inline constexpr const char* kGoldListLabel = "Ground-truth answers:\n";
inline constexpr const char* kExtractedLabel = "Model prediction (extracted answer):\n";
inline constexpr const char* kFullResponseLabel =
    "Model prediction (full response, no answer tags found):\n";

/// Value following `label` up to end of line, searching from the last
/// occurrence of the label.
std::optional<std::string> field_after(const std::string& text,
                                       const std::string& label);

/// Token on the last non-blank line, trimmed and upper-cased.
std::string last_line_token(const std::string& text);

}  // namespace tabreason::prompts
