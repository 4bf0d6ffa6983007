#include "tabreason/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "tabreason/common.hpp"

namespace tabreason::prompts {

std::string fill(const std::string& text,
                 const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find('{', pos);
    if (open == std::string::npos) {
      out.append(text, pos);
      break;
    }
    const auto close = text.find('}', open);
    if (close == std::string::npos) {
      out.append(text, pos);
      break;
    }
    const std::string key = text.substr(open + 1, close - open - 1);
    out.append(text, pos, open - pos);
    auto it = values.find(key);
    if (it == values.end()) {
      throw std::invalid_argument("template placeholder without value: " + key);
    }
    out += it->second;
    pos = close + 1;
  }
  return out;
}

const Template& trace_generation_v1() {
  static const Template t{
      "trace-gen/v1",
      "You are an expert analyst who explains answers to questions about "
      "tables.",
      "Here is a table in markdown format:\n"
      "\n"
      "{table}\n"
      "\n"
      "Question: {question}\n"
      "Ground-truth answer: {answer}\n"
      "\n"
      "Explain step by step how the ground-truth answer follows from the "
      "table. Name the rows and columns you use and every operation you "
      "apply. Keep it focused on the question. End with a single line of the "
      "form:\n"
      "FINAL ANSWER: <answer>",
  };
  return t;
}

const Template& trace_judge_v1() {
  static const Template t{
      "trace-judge/v1",
      "You are a careful reviewer of reasoning about tables.",
      "Table:\n"
      "\n"
      "{table}\n"
      "\n"
      "Question: {question}\n"
      "Reference answer: {answer}\n"
      "Reasoning trace:\n"
      "{reasoning}\n"
      "Trace conclusion: {trace_answer}\n"
      "\n"
      "Is the reasoning trace coherent, faithful to the table, and does it "
      "support the reference answer? Give a one-sentence justification, then "
      "write YES or NO alone on the last line.",
  };
  return t;
}

const Template& answer_judge_v1() {
  static const Template t{
      "answer-judge/v1",
      "You are grading answers to questions about tables.",
      "Compare the model prediction with the ground truth. Ignore formatting "
      "differences such as units, thousands separators or letter case. Output "
      "exactly CORRECT or INCORRECT on the final line.\n"
      "\n"
      "Question: {question}\n"
      "{golds}"
      "{prediction}",
  };
  return t;
}

std::optional<std::string> field_after(const std::string& text,
                                       const std::string& label) {
  const auto pos = text.rfind(label);
  if (pos == std::string::npos) return std::nullopt;
  const auto begin = pos + label.size();
  const auto end = text.find('\n', begin);
  return trim(text.substr(begin, end == std::string::npos ? std::string::npos
                                                          : end - begin));
}

std::string last_line_token(const std::string& text) {
  std::string t = trim(text);
  const auto nl = t.find_last_of('\n');
  std::string line = trim(nl == std::string::npos ? t : t.substr(nl + 1));
  // Tolerate markdown emphasis and trailing punctuation around the token.
  std::erase_if(line, [](char c) { return c == '*' || c == '`'; });
  while (!line.empty() && (line.back() == '.' || line.back() == '!')) {
    line.pop_back();
  }
  std::transform(line.begin(), line.end(), line.begin(), [](unsigned char c) {
    return static_cast<char>(std::toupper(c));
  });
  return trim(line);
}

}  // namespace tabreason::prompts
