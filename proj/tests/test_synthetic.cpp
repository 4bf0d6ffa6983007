#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "tabreason/rewards.hpp"
#include "tabreason/synthetic.hpp"

using namespace tabreason;
using synth::QuestionKind;
using synth::SyntheticTask;
using table::Cell;

namespace {

SyntheticTask hand_task(QuestionKind kind, const std::string& question,
                        std::vector<std::vector<Cell>> rows) {
  SyntheticTask t;
  t.kind = kind;
  t.instance.id = "hand";
  t.instance.dataset = "synthetic_qa";
  t.instance.question = question;
  t.instance.table = table::Table({"name", "score"}, std::move(rows));
  return t;
}

Cell n(std::int64_t v) { return Cell::number(Decimal::from_int(v)); }

std::size_t column(const table::Table& t, const std::string& h) {
  for (std::size_t c = 0; c < t.num_cols(); ++c) {
    if (t.headers()[c] == h) return c;
  }
  return t.num_cols();
}

}  // namespace

TEST(GenerateTask, DeterministicPerSeed) {
  const auto a = synth::generate_task(7, QuestionKind::kLookup, 3, 3);
  const auto b = synth::generate_task(7, QuestionKind::kLookup, 3, 3);
  EXPECT_EQ(a.instance.table, b.instance.table);
  EXPECT_EQ(a.instance.question, b.instance.question);
  EXPECT_EQ(a.candidates, b.candidates);
  EXPECT_EQ(a.gold_index, b.gold_index);
  EXPECT_EQ(a.instance.table.num_rows(), 3u);
  EXPECT_EQ(a.instance.table.num_cols(), 3u);
}

TEST(GenerateTask, RejectsOutOfRangeShapes) {
  EXPECT_THROW(synth::generate_task(1, QuestionKind::kLookup, 1, 3), std::invalid_argument);
  EXPECT_THROW(synth::generate_task(1, QuestionKind::kLookup, 11, 3), std::invalid_argument);
  EXPECT_THROW(synth::generate_task(1, QuestionKind::kLookup, 3, 1), std::invalid_argument);
  EXPECT_THROW(synth::generate_task(1, QuestionKind::kLookup, 3, 7), std::invalid_argument);
}

TEST(GenerateTask, ColumnSumMatchesDirectSum) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = synth::generate_task(seed, QuestionKind::kColumnSum, 5, 4);
    const auto& tbl = t.instance.table;
    // "What is the sum of <col> across all rows?"
    const auto& q = t.instance.question;
    const std::string prefix = "What is the sum of ";
    ASSERT_EQ(q.rfind(prefix, 0), 0u) << q;
    const std::string col = q.substr(prefix.size(), q.find(' ', prefix.size()) - prefix.size());
    const std::size_t c = column(tbl, col);
    ASSERT_LT(c, tbl.num_cols());
    std::int64_t sum = 0;
    for (std::size_t r = 0; r < tbl.num_rows(); ++r) sum += tbl.at(r, c).as_number().unscaled();
    EXPECT_EQ(t.gold(), std::to_string(sum));
  }
}

TEST(GenerateTask, TableShapeAndValues) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto kind = synth::kAllKinds[seed % 8];
    const auto t = synth::generate_task(seed, kind, 2 + seed % 9, 2 + seed % 5);
    const auto& tbl = t.instance.table;
    std::set<std::string> keys;
    for (std::size_t r = 0; r < tbl.num_rows(); ++r) {
      ASSERT_TRUE(tbl.at(r, 0).is_text());
      keys.insert(tbl.at(r, 0).as_text());
      for (std::size_t c = 1; c < tbl.num_cols(); ++c) {
        const auto& d = tbl.at(r, c).as_number();
        ASSERT_TRUE(d.is_integer());
        ASSERT_GE(d.unscaled(), 0);
        ASSERT_LE(d.unscaled(), 99);
      }
    }
    EXPECT_EQ(keys.size(), tbl.num_rows());  // keys identify rows
    EXPECT_EQ(t.instance.task_type, kind == QuestionKind::kFactVerify
                                        ? table::TaskType::kFactVerification
                                        : table::TaskType::kQa);
  }
}

TEST(GenerateTask, TrueClaimRestatesACell) {
  int seen_true = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto t = synth::generate_task(seed, QuestionKind::kFactVerify, 4, 3);
    // "True or false: the <col> of <key> is <v>."
    const auto& q = t.instance.question;
    const auto of = q.find(" of ");
    const auto is = q.rfind(" is ");
    const std::string col = q.substr(std::string("True or false: the ").size(),
                                     of - std::string("True or false: the ").size());
    const std::string key = q.substr(of + 4, is - of - 4);
    const std::string val = q.substr(is + 4, q.size() - is - 5);
    const auto& tbl = t.instance.table;
    std::string actual;
    for (std::size_t r = 0; r < tbl.num_rows(); ++r) {
      if (tbl.at(r, 0).display() == key) actual = tbl.at(r, column(tbl, col)).display();
    }
    ASSERT_FALSE(actual.empty()) << q;
    EXPECT_EQ(t.gold(), actual == val ? "true" : "false") << q;
    seen_true += actual == val;
  }
  EXPECT_GT(seen_true, 60);
  EXPECT_LT(seen_true, 140);
}

TEST(OracleAnswer, HandBuiltCases) {
  auto lookup = hand_task(QuestionKind::kLookup, "What is the score of alice?",
                          {{Cell::text("bob"), n(7)}, {Cell::text("alice"), n(42)}});
  EXPECT_EQ(synth::oracle_answer(lookup), "42");

  auto count = hand_task(QuestionKind::kCountWhere,
                         "How many rows have score greater than 50?",
                         {{Cell::text("bob"), n(7)}, {Cell::text("alice"), n(42)}});
  EXPECT_EQ(synth::oracle_answer(count), "0");

  auto tie = hand_task(QuestionKind::kCompareTwoCells,
                       "Who has the larger score, bob or alice?",
                       {{Cell::text("bob"), n(9)}, {Cell::text("alice"), n(9)}});
  EXPECT_EQ(synth::oracle_answer(tie), synth::kTieAnswer);

  auto mean = hand_task(QuestionKind::kColumnMean, "What is the mean of score across all rows?",
                        {{Cell::text("a"), n(1)}, {Cell::text("b"), n(2)}, {Cell::text("c"), n(2)}});
  EXPECT_EQ(synth::oracle_answer(mean), "1.67");  // 5/3 rounded half up

  auto half = hand_task(QuestionKind::kColumnMean, "What is the mean of score across all rows?",
                        {{Cell::text("a"), n(1)}, {Cell::text("b"), n(2)}});
  EXPECT_EQ(synth::oracle_answer(half), "1.5");  // trailing zero stripped
}

TEST(OracleAnswer, AgreesWithEmbeddedGold) {
  const auto suite = synth::make_suite(123, 2000);
  for (const auto& t : suite) {
    ASSERT_TRUE(rewards::answer_matches(synth::oracle_answer(t), t.instance.gold_answers[0]))
        << t.instance.id << ": " << t.instance.question;
  }
}

TEST(SyntheticTask, CandidateInvariants) {
  const auto suite = synth::make_suite(5, 1000);
  std::size_t six = 0;
  for (const auto& t : suite) {
    ASSERT_GE(t.candidates.size(), 2u);
    ASSERT_LE(t.candidates.size(), 16u);
    ASSERT_LT(t.gold_index, t.candidates.size());
    ASSERT_TRUE(rewards::answer_matches(t.gold(), t.instance.gold_answers[0]));
    for (std::size_t i = 0; i < t.candidates.size(); ++i) {
      for (std::size_t j = i + 1; j < t.candidates.size(); ++j) {
        ASSERT_FALSE(rewards::answer_matches(t.candidates[i], t.candidates[j]))
            << t.instance.id << ": " << t.candidates[i] << " vs " << t.candidates[j];
      }
    }
    six += t.candidates.size() == 1 + synth::kMaxDistractors;
  }
  // Fact verification only has two answers; everything else should get five distractors.
  EXPECT_GT(six, 800u);
}

TEST(MakeSuite, EmptyAndDeterministic) {
  EXPECT_TRUE(synth::make_suite(1, 0).empty());
  const auto a = synth::make_suite(9, 50);
  const auto b = synth::make_suite(9, 50);
  EXPECT_EQ(synth::instances_to_jsonl(a), synth::instances_to_jsonl(b));
  EXPECT_EQ(synth::candidates_to_jsonl(a), synth::candidates_to_jsonl(b));
  EXPECT_NE(synth::instances_to_jsonl(a), synth::instances_to_jsonl(synth::make_suite(10, 50)));
}

TEST(MakeSuite, UniqueIds) {
  std::set<std::string> ids;
  for (const auto& t : synth::make_suite(3, 500)) ids.insert(t.instance.id);
  EXPECT_EQ(ids.size(), 500u);
}

TEST(MakeSuite, UniformMixCountsWithinThreeSigma) {
  const auto suite = synth::make_suite(2024, 200);
  std::map<QuestionKind, int> counts;
  for (const auto& t : suite) ++counts[t.kind];
  const double p = 1.0 / 8.0;
  const double mean = 200 * p;
  const double sigma = std::sqrt(200 * p * (1 - p));
  for (auto k : synth::kAllKinds) {
    EXPECT_LE(std::abs(counts[k] - mean), 3 * sigma) << synth::to_string(k);
  }
}

TEST(MakeSuite, SingleKindMix) {
  for (const auto& t : synth::make_suite(4, 40, {{QuestionKind::kLookup, 1.0}})) {
    EXPECT_EQ(t.kind, QuestionKind::kLookup);
  }
  EXPECT_THROW(synth::make_suite(4, 4, {{QuestionKind::kLookup, 0.0}}), std::invalid_argument);
  EXPECT_THROW(synth::make_suite(4, 4, {{QuestionKind::kLookup, -1.0}}), std::invalid_argument);
}

TEST(Suite, JsonlJoinRoundTrip) {
  const auto suite = synth::make_suite(8, 30);
  const auto back = synth::join_suite(table::parse_instances(synth::instances_to_jsonl(suite)),
                                      synth::candidates_to_jsonl(suite));
  ASSERT_EQ(back.size(), suite.size());
  for (std::size_t i = 0; i < suite.size(); ++i) {
    EXPECT_EQ(back[i].instance.table, suite[i].instance.table);
    EXPECT_EQ(back[i].candidates, suite[i].candidates);
    EXPECT_EQ(back[i].gold_index, suite[i].gold_index);
    EXPECT_EQ(back[i].kind, suite[i].kind);
  }
  EXPECT_THROW(synth::join_suite(table::parse_instances(synth::instances_to_jsonl(suite)), ""),
               std::invalid_argument);
}

TEST(QuestionKind, NamesRoundTrip) {
  for (auto k : synth::kAllKinds) EXPECT_EQ(synth::kind_from_string(synth::to_string(k)), k);
  EXPECT_FALSE(synth::kind_from_string("median").has_value());
}
