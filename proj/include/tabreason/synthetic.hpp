#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabreason/dataset.hpp"

namespace tabreason::synth {

enum class QuestionKind {
  kLookup,
  kColumnSum,
  kColumnMean,
  kColumnMax,
  kColumnMin,
  kCountWhere,
  kCompareTwoCells,
  kFactVerify,
};

inline constexpr QuestionKind kAllKinds[] = {
    QuestionKind::kLookup,     QuestionKind::kColumnSum,
    QuestionKind::kColumnMean, QuestionKind::kColumnMax,
    QuestionKind::kColumnMin,  QuestionKind::kCountWhere,
    QuestionKind::kCompareTwoCells, QuestionKind::kFactVerify,
};

std::string to_string(QuestionKind k);
std::optional<QuestionKind> kind_from_string(const std::string& s);

// Answer used by compare_two_cells when both cells hold the same value.
inline constexpr const char* kTieAnswer = "equal";
inline constexpr std::size_t kMaxDistractors = 5;

struct SyntheticTask {
  table::Instance instance;
  QuestionKind kind = QuestionKind::kLookup;
  std::vector<std::string> candidates;
  std::size_t gold_index = 0;

  const std::string& gold() const { return candidates.at(gold_index); }
};

/// Deterministic per seed. Requires 2 <= n_rows <= 10 and 2 <= n_cols <= 6.
SyntheticTask generate_task(std::uint64_t seed, QuestionKind kind,
                            std::size_t n_rows, std::size_t n_cols);

/// Recomputes the answer by scanning the table, parsing the row/column/
/// threshold out of the question text. Shares no state with the generator.
std::string oracle_answer(const SyntheticTask& task);

using KindMix = std::map<QuestionKind, double>;
KindMix uniform_mix();

std::vector<SyntheticTask> make_suite(std::uint64_t seed, std::size_t n,
                                      const KindMix& mix = uniform_mix());

/// Sidecar line: {"id", "candidates", "gold_index", "kind"}.
std::string candidates_to_jsonl(const std::vector<SyntheticTask>& tasks);
std::string instances_to_jsonl(const std::vector<SyntheticTask>& tasks);

/// Joins an instance file with its candidate sidecar by id.
std::vector<SyntheticTask> join_suite(
    const std::vector<table::Instance>& instances,
    const std::string& candidates_jsonl);
std::vector<SyntheticTask> load_suite(const std::string& instances_path,
                                      const std::string& candidates_path);

}  // namespace tabreason::synth
