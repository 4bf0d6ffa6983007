#include "tabreason/rewards.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "tabreason/common.hpp"

namespace tabreason::rewards {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

bool only_space(std::string_view s) {
  return trim(s).empty();
}

void replace_all(std::string& s, std::string_view from) {
  if (from.empty()) return;
  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  for (auto hit = s.find(from); hit != std::string::npos;
       hit = s.find(from, pos)) {
    out.append(s, pos, hit - pos);
    pos = hit + from.size();
  }
  out.append(s, pos);
  s.swap(out);
}

std::optional<TruthClass> fold_truth(const std::string& s) {
  static const std::vector<std::pair<std::string, TruthClass>> kSynonyms = {
      {"yes", TruthClass::kEntail},          {"true", TruthClass::kEntail},
      {"entailed", TruthClass::kEntail},     {"entail", TruthClass::kEntail},
      {"entails", TruthClass::kEntail},      {"no", TruthClass::kContradict},
      {"false", TruthClass::kContradict},    {"refuted", TruthClass::kContradict},
      {"contradict", TruthClass::kContradict},
      {"contradicted", TruthClass::kContradict},
      {"neutral", TruthClass::kNeutral},
  };
  const std::string key = to_lower(s);
  for (const auto& [word, cls] : kSynonyms) {
    if (key == word) return cls;
  }
  return std::nullopt;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  double v = 0.0;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

AnswerPart canonical_part(std::string part, const MatchConfig& config) {
  for (const auto& c : config.strip_chars) replace_all(part, c);
  part = trim(part);
  auto is_edge = [&](char c) {
    return config.edge_punctuation.find(c) != std::string::npos;
  };
  std::size_t b = 0;
  std::size_t e = part.size();
  while (b < e && is_edge(part[b])) ++b;
  while (e > b && is_edge(part[e - 1])) --e;
  part = trim(std::string_view(part).substr(b, e - b));
  if (config.case_insensitive) part = to_lower(part);
  // Collapse internal whitespace runs.
  std::string collapsed;
  bool space = false;
  for (char c : part) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = true;
      continue;
    }
    if (space && !collapsed.empty()) collapsed += ' ';
    space = false;
    collapsed += c;
  }
  if (auto num = parse_number(collapsed)) return *num == 0.0 ? 0.0 : *num;
  if (auto cls = fold_truth(collapsed)) return *cls;
  return collapsed;
}

bool parts_match(const AnswerPart& pred, const AnswerPart& gold, double tol) {
  if (pred.index() != gold.index()) return false;
  if (const double* g = std::get_if<double>(&gold)) {
    const double p = std::get<double>(pred);
    if (*g == 0.0) return std::abs(p) <= tol;
    return std::abs(p - *g) <= tol * std::abs(*g);
  }
  return pred == gold;
}

}  // namespace

void MatchConfig::validate() const {
  if (!(numeric_rel_tol >= 0.0)) {
    throw std::invalid_argument("numeric_rel_tol must be >= 0");
  }
  if (multi_answer_separator.empty()) {
    throw std::invalid_argument("multi_answer_separator must be non-empty");
  }
}

int format_reward(std::string_view text) {
  if (count_of(text, kThinkOpen) != 1 || count_of(text, kThinkClose) != 1 ||
      count_of(text, kAnswerOpen) != 1 || count_of(text, kAnswerClose) != 1) {
    return 0;
  }
  const auto to = text.find(kThinkOpen);
  const auto tc = text.find(kThinkClose);
  const auto ao = text.find(kAnswerOpen);
  const auto ac = text.find(kAnswerClose);
  if (!(to < tc && tc < ao && ao < ac)) return 0;
  if (!only_space(text.substr(0, to))) return 0;
  const auto think_end = tc + kThinkClose.size();
  if (!only_space(text.substr(think_end, ao - think_end))) return 0;
  if (!only_space(text.substr(ac + kAnswerClose.size()))) return 0;
  const auto body = text.substr(to + kThinkOpen.size(),
                                tc - to - kThinkOpen.size());
  return only_space(body) ? 0 : 1;
}

std::optional<std::string> extract_answer(std::string_view text) {
  const auto close = text.rfind(kAnswerClose);
  if (close == std::string_view::npos) return std::nullopt;
  const auto open = text.rfind(kAnswerOpen, close);
  if (open == std::string_view::npos) return std::nullopt;
  const auto begin = open + kAnswerOpen.size();
  return trim(text.substr(begin, close - begin));
}

CanonicalAnswer normalize_answer(std::string_view raw,
                                 const MatchConfig& config) {
  CanonicalAnswer out;
  const std::string& sep = config.multi_answer_separator;
  std::size_t start = 0;
  while (true) {
    const auto hit = raw.find(sep, start);
    const auto piece = raw.substr(
        start, hit == std::string_view::npos ? std::string_view::npos
                                             : hit - start);
    out.parts.push_back(canonical_part(std::string(piece), config));
    if (hit == std::string_view::npos) break;
    start = hit + sep.size();
  }
  // Empty parts come from stray separators ("a|"); drop them unless the
  // whole answer is empty.
  if (out.parts.size() > 1) {
    std::erase_if(out.parts, [](const AnswerPart& p) {
      const auto* s = std::get_if<std::string>(&p);
      return s && s->empty();
    });
  }
  std::sort(out.parts.begin(), out.parts.end());
  return out;
}

bool answers_match(const CanonicalAnswer& predicted,
                   const CanonicalAnswer& gold, const MatchConfig& config) {
  if (predicted.parts.size() != gold.parts.size()) return false;
  std::vector<bool> used(predicted.parts.size(), false);
  for (const auto& g : gold.parts) {
    bool found = false;
    for (std::size_t i = 0; i < predicted.parts.size(); ++i) {
      if (!used[i] && parts_match(predicted.parts[i], g,
                                  config.numeric_rel_tol)) {
        used[i] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

bool answer_matches(std::string_view predicted, std::string_view gold,
                    const MatchConfig& config) {
  return answers_match(normalize_answer(predicted, config),
                       normalize_answer(gold, config), config);
}

int accuracy_reward(std::string_view text,
                    const std::vector<std::string>& golds,
                    const MatchConfig& config) {
  if (golds.empty()) throw std::invalid_argument("accuracy_reward: no golds");
  const auto answer = extract_answer(text);
  if (!answer) return 0;
  const auto pred = normalize_answer(*answer, config);
  for (const auto& g : golds) {
    if (answers_match(pred, normalize_answer(g, config), config)) return 1;
  }
  return 0;
}

RewardBreakdown total_reward(std::string_view text,
                             const std::vector<std::string>& golds,
                             const RewardWeights& weights,
                             const MatchConfig& config) {
  if (weights.accuracy < 0.0 || weights.format < 0.0) {
    throw std::invalid_argument("reward weights must be non-negative");
  }
  RewardBreakdown r;
  r.format = format_reward(text);
  r.accuracy = accuracy_reward(text, golds, config);
  r.total = weights.accuracy * r.accuracy + weights.format * r.format;
  return r;
}

}  // namespace tabreason::rewards
