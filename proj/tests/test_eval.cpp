#include <atomic>
#include <functional>

#include <gtest/gtest.h>

#include "tabreason/eval_harness.hpp"
#include "tabreason/policy.hpp"
#include "tabreason/synthetic.hpp"
#include "test_util.hpp"

using namespace tabreason;
using namespace tabreason::eval;
using table::Instance;

namespace {

class ScriptedJudge final : public llm::ChatClient {
 public:
  explicit ScriptedJudge(std::function<std::string()> fn) : fn_(std::move(fn)) {}
  llm::ChatResponse chat(const llm::ChatRequest&) override {
    ++calls;
    return {fn_(), {}};
  }
  std::atomic<int> calls{0};

 private:
  std::function<std::string()> fn_;
};

Instance inst(const std::string& id, const std::string& dataset, const std::string& gold) {
  return {id, dataset, table::Table({"h"}, {{table::Cell::text("v")}}), "q?", {gold},
          table::TaskType::kQa, std::nullopt};
}

std::string tagged(const std::string& answer) {
  return "<think>because</think><answer>" + answer + "</answer>";
}

Prediction pred(const std::string& id, const std::string& text) { return {id, text, "toy"}; }

}  // namespace

TEST(Evaluate, HandBuiltSetScoresThreeQuarters) {
  const auto idx = table::index_by_id(
      {inst("a", "wtq", "1"), inst("b", "wtq", "2"), inst("c", "wtq", "x"), inst("d", "wtq", "y")});
  const std::vector<Prediction> preds = {pred("a", tagged("1")), pred("b", tagged("2.0")),
                                         pred("c", tagged("X")), pred("d", tagged("z"))};
  const auto r = evaluate(preds, idx, nullptr);
  EXPECT_EQ(r.per_dataset.at("wtq").correct, 3u);
  EXPECT_DOUBLE_EQ(r.per_dataset.at("wtq").accuracy, 0.75);
  EXPECT_DOUBLE_EQ(r.average, 0.75);
  EXPECT_EQ(r.model_tag, "toy");
  EXPECT_EQ(r.judge_mode, JudgeMode::kRule);
}

TEST(Evaluate, GoldPredictionsScorePerfectly) {
  std::vector<Instance> all;
  std::vector<Prediction> preds;
  for (int i = 0; i < 30; ++i) {
    const std::string id = "i" + std::to_string(i);
    all.push_back(inst(id, i % 2 ? "tatqa" : "hitab", std::to_string(i * 7)));
    preds.push_back(pred(id, tagged(std::to_string(i * 7))));
  }
  const auto r = evaluate(preds, table::index_by_id(all), nullptr);
  for (const auto& [d, s] : r.per_dataset) EXPECT_DOUBLE_EQ(s.accuracy, 1.0) << d;
  EXPECT_DOUBLE_EQ(r.average, 1.0);
}

TEST(Evaluate, MissingPredictionsCountAsWrong) {
  const auto idx = table::index_by_id({inst("a", "wtq", "1"), inst("b", "wtq", "2")});
  const auto none = evaluate({}, idx, nullptr);
  EXPECT_DOUBLE_EQ(none.per_dataset.at("wtq").accuracy, 0.0);
  EXPECT_EQ(none.per_dataset.at("wtq").n, 2u);
  const auto half = evaluate({pred("a", tagged("1"))}, idx, nullptr);
  EXPECT_DOUBLE_EQ(half.per_dataset.at("wtq").accuracy, 0.5);
}

TEST(Evaluate, RejectsUnknownAndDuplicateIds) {
  const auto idx = table::index_by_id({inst("a", "wtq", "1")});
  try {
    evaluate({pred("zz", tagged("1"))}, idx, nullptr);
    FAIL() << "expected UnknownInstance";
  } catch (const UnknownInstance& e) {
    EXPECT_EQ(e.id(), "zz");
  }
  EXPECT_THROW(evaluate({pred("a", "x"), pred("a", "y")}, idx, nullptr), Error);
  EXPECT_THROW(evaluate({pred("a", "x"), {"a", "y", "other"}}, table::index_by_id({inst("a", "d", "1")}),
                        nullptr),
               Error);
}

TEST(Evaluate, AverageIsUnweightedOverDatasets) {
  // tabfact 1/2 correct, wtq 3/4 correct: mean of 0.5 and 0.75, not 4/6
  const auto idx = table::index_by_id({inst("f1", "tabfact", "true"), inst("f2", "tabfact", "false"),
                                       inst("w1", "wtq", "1"), inst("w2", "wtq", "2"),
                                       inst("w3", "wtq", "3"), inst("w4", "wtq", "4")});
  const std::vector<Prediction> preds = {pred("f1", tagged("yes")), pred("f2", tagged("yes")),
                                         pred("w1", tagged("1")), pred("w2", tagged("2")),
                                         pred("w3", tagged("3")), pred("w4", "4")};
  const auto r = evaluate(preds, idx, nullptr);
  EXPECT_DOUBLE_EQ(r.average, (0.5 + 0.75) / 2);
}

TEST(JudgeVerdict, ParsesLastLine) {
  const auto i = inst("a", "wtq", "1");
  ScriptedJudge yes([] { return "looks right\nCORRECT"; });
  ScriptedJudge no([] { return "looks wrong\n incorrect \n\n"; });
  EXPECT_TRUE(judge_verdict(yes, i, pred("a", tagged("9"))).correct);
  EXPECT_FALSE(judge_verdict(no, i, pred("a", tagged("1"))).correct);
  EXPECT_FALSE(judge_verdict(no, i, pred("a", tagged("1"))).used_fallback);
}

TEST(JudgeVerdict, GarbageFallsBackToRuleAfterOneRetry) {
  const auto i = inst("a", "wtq", "1");
  ScriptedJudge garbage([] { return "I would rather not say"; });
  const auto v = judge_verdict(garbage, i, pred("a", tagged("1")));
  EXPECT_TRUE(v.used_fallback);
  EXPECT_TRUE(v.correct);
  EXPECT_EQ(garbage.calls.load(), 2);

  ScriptedJudge down([]() -> std::string { throw llm::ExhaustedRetries(4, "503"); });
  const auto d = judge_verdict(down, i, pred("a", "no tags 1"));
  EXPECT_TRUE(d.used_fallback);
  EXPECT_FALSE(d.correct);
  EXPECT_EQ(down.calls.load(), 1);
}

TEST(JudgeRequest, ShowsExtractedAnswerOrFullText) {
  const auto i = inst("a", "wtq", "1");
  const auto with_tags = judge_request(i, pred("a", tagged("42")));
  EXPECT_NE(with_tags.user.find(std::string(prompts::kExtractedLabel) + "42"), std::string::npos);
  EXPECT_NE(with_tags.user.find("- 1\n"), std::string::npos);
  const auto without = judge_request(i, pred("a", "the answer is 42"));
  EXPECT_NE(without.user.find(std::string(prompts::kFullResponseLabel) + "the answer is 42"),
            std::string::npos);
}

TEST(Evaluate, FaithfulMockJudgeAgreesWithRuleMode) {
  const auto suite = synth::make_suite(61, 300);
  std::vector<Instance> all;
  std::vector<Prediction> preds;
  Rng rng(2);
  for (const auto& t : suite) {
    all.push_back(t.instance);
    const auto k = rng.below(t.candidates.size());
    const auto text = policy::render_response(t, k, rng.bernoulli(0.8));
    preds.push_back({t.instance.id, text, "toy"});
  }
  const auto idx = table::index_by_id(all);
  llm::MockChatClient judge(5, {});
  const auto llm_mode = evaluate(preds, idx, &judge);
  const auto rule_mode = evaluate(preds, idx, nullptr);
  EXPECT_EQ(llm_mode.judge_mode, JudgeMode::kLlm);
  EXPECT_EQ(llm_mode.fallback_count, 0u);
  for (const auto& [d, s] : rule_mode.per_dataset) {
    EXPECT_EQ(llm_mode.per_dataset.at(d).correct, s.correct) << d;
  }
}

TEST(Predictions, JsonlRoundTripAndErrors) {
  const std::vector<Prediction> p = {{"a", "line1\nline2 \"q\"", "m1"}, {"b", "", "m1"}};
  const auto back = parse_predictions(predictions_to_jsonl(p));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].response_text, p[0].response_text);
  EXPECT_EQ(back[1].model_tag, "m1");
  try {
    parse_predictions("{\"instance_id\":\"a\",\"response_text\":\"x\"}\n\n{\"instance_id\":1}\n");
    FAIL() << "expected SchemaError";
  } catch (const table::SchemaError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(load_predictions("/nonexistent/p.jsonl"), IoError);
}

TEST(Report, FormatsTwoDecimalPercentages) {
  EXPECT_EQ(format_accuracy(0.755), "75.50");
  EXPECT_EQ(format_accuracy(1.0), "100.00");
  EXPECT_EQ(format_accuracy(0.0), "0.00");
  EXPECT_EQ(format_accuracy(2.0 / 3.0), "66.67");
}

TEST(Report, MatchesGoldenFiles) {
  EvalReport r;
  r.model_tag = "toy";
  r.per_dataset["wtq"] = {4, 3, 0.75};
  r.per_dataset["tabfact"] = {2, 1, 0.5};
  r.average = 0.625;
  testutil::TempDir dir("report");
  emit_report(r, dir.file("report"));
  EXPECT_EQ(read_file(dir.file("report.md")), read_file(testutil::golden_path("report_two_datasets.md")));
  EXPECT_EQ(read_file(dir.file("report.csv")), read_file(testutil::golden_path("report_two_datasets.csv")));
}

TEST(Report, MarkdownAndCsvCarryTheSameNumbers) {
  EvalReport r;
  r.model_tag = "m,with \"comma\"";
  r.per_dataset["a"] = {3, 1, 1.0 / 3};
  r.per_dataset["b"] = {7, 5, 5.0 / 7};
  r.average = (1.0 / 3 + 5.0 / 7) / 2;
  const auto t = to_table({r});
  const auto back = parse_report_csv(render_table_csv(t));
  ASSERT_EQ(back.rows.size(), 1u);
  EXPECT_EQ(back.rows[0].model_tag, r.model_tag);
  EXPECT_EQ(back.rows[0].cells, t.rows[0].cells);
  EXPECT_EQ(back.rows[0].average, t.rows[0].average);
  const auto md = render_table_markdown(t);
  for (const auto& [d, v] : t.rows[0].cells) EXPECT_NE(md.find("| " + v + " |"), std::string::npos);
  EXPECT_NE(md.find("| " + t.rows[0].average + " |"), std::string::npos);
}

TEST(Report, MergeKeepsOrderAndMarksGaps) {
  EvalReport a, b;
  a.model_tag = "base";
  a.per_dataset["wtq"] = {1, 1, 1.0};
  a.average = 1.0;
  b.model_tag = "grpo";
  b.per_dataset["tabfact"] = {2, 1, 0.5};
  b.average = 0.5;
  b.judge_mode = JudgeMode::kLlm;
  const auto merged = merge_reports({parse_report_csv(render_table_csv(to_table({a}))),
                                     parse_report_csv(render_table_csv(to_table({b})))});
  EXPECT_EQ(merged.datasets, (std::vector<std::string>{"wtq", "tabfact"}));
  ASSERT_EQ(merged.rows.size(), 2u);
  EXPECT_EQ(merged.rows[0].model_tag, "base");
  EXPECT_EQ(render_table_csv(merged),
            "model_tag,wtq,tabfact,average,judge_mode\nbase,100.00,-,100.00,rule\n"
            "grpo,-,50.00,50.00,llm\n");
  EXPECT_THROW(parse_report_csv(""), Error);
  EXPECT_THROW(parse_report_csv("model,x\n"), Error);
  EXPECT_THROW(parse_report_csv("model_tag,a,average,judge_mode\nm,1\n"), Error);
}
