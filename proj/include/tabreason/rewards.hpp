#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tabreason::rewards {

struct MatchConfig {
  double numeric_rel_tol = 1e-6;
  // Removed wherever they occur.
  std::set<std::string> strip_chars = {",", "%", "$", "€", "£",
                                       "¥"};
  // Trimmed from both ends of each answer part.
  std::string edge_punctuation = ".!?;:'\"()[]{}";
  bool case_insensitive = true;
  std::string multi_answer_separator = "|";

  void validate() const;
};

enum class TruthClass { kEntail, kContradict, kNeutral };

/// One normalized answer part: a number, a folded truth label, or text.
using AnswerPart = std::variant<double, TruthClass, std::string>;

struct CanonicalAnswer {
  std::vector<AnswerPart> parts;  // sorted; a multiset
};

/// 1 iff `text` is exactly one non-empty <think> block followed by one
/// <answer> block, with nothing but whitespace around them.
int format_reward(std::string_view text);

/// Trimmed content of the last complete <answer>...</answer> block.
std::optional<std::string> extract_answer(std::string_view text);

CanonicalAnswer normalize_answer(std::string_view raw,
                                 const MatchConfig& config = {});

/// Multiset equality of canonical parts; numbers compare with relative
/// tolerance against `gold` (absolute when the gold part is zero).
bool answers_match(const CanonicalAnswer& predicted,
                   const CanonicalAnswer& gold, const MatchConfig& config);

/// Convenience: normalize both sides, then answers_match.
bool answer_matches(std::string_view predicted, std::string_view gold,
                    const MatchConfig& config = {});

/// 1 iff an <answer> block exists and matches any gold.
int accuracy_reward(std::string_view text,
                    const std::vector<std::string>& golds,
                    const MatchConfig& config = {});

struct RewardWeights {
  double accuracy = 1.0;
  double format = 1.0;
};

struct RewardBreakdown {
  int format = 0;
  int accuracy = 0;
  double total = 0.0;
};

RewardBreakdown total_reward(std::string_view text,
                             const std::vector<std::string>& golds,
                             const RewardWeights& weights = {},
                             const MatchConfig& config = {});

}  // namespace tabreason::rewards
