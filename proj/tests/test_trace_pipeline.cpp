#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "tabreason/synthetic.hpp"
#include "tabreason/trace_pipeline.hpp"
#include "test_util.hpp"

using namespace tabreason;
using namespace tabreason::traces;
using table::Instance;

namespace {

// Replies computed by a callback; thread-safe as long as the callback is.
class ScriptedClient final : public llm::ChatClient {
 public:
  explicit ScriptedClient(std::function<std::string(const llm::ChatRequest&)> fn)
      : fn_(std::move(fn)) {}
  llm::ChatResponse chat(const llm::ChatRequest& r) override {
    ++calls;
    return {fn_(r), {}};
  }
  std::atomic<int> calls{0};

 private:
  std::function<std::string(const llm::ChatRequest&)> fn_;
};

Instance sample_instance() {
  return {"inst-1", "wtq",
          table::Table({"name", "score"},
                       {{table::Cell::text("ann"), table::Cell::number(Decimal::from_int(3))},
                        {table::Cell::text("bob"), table::Cell::number(Decimal::from_int(5))}}),
          "Who scored more?", {"bob"}, table::TaskType::kQa, std::nullopt};
}

TraceRecord record(const std::string& reasoning, const std::string& answer) {
  return parse_trace("inst-1", "Who scored more?", "gen",
                     reasoning + "\n" + prompts::kFinalAnswerMarker + " " + answer);
}

std::vector<Instance> synthetic_instances(std::uint64_t seed, std::size_t n) {
  std::vector<Instance> out;
  for (auto& t : synth::make_suite(seed, n)) out.push_back(std::move(t.instance));
  return out;
}

}  // namespace

TEST(TracePrompt, CarriesTableQuestionAndGold) {
  const auto inst = sample_instance();
  ModelSettings s{"gen-x", 0.6, 4096};
  const auto req = build_trace_prompt(inst, s);
  EXPECT_EQ(req.model, "gen-x");
  EXPECT_EQ(req.temperature, 0.6);
  EXPECT_EQ(req.max_tokens, 4096u);
  EXPECT_NE(req.user.find(table::render_markdown(inst.table)), std::string::npos);
  EXPECT_NE(req.user.find(inst.question), std::string::npos);
  EXPECT_EQ(prompts::field_after(req.user, prompts::kGoldLabel), "bob");
  EXPECT_NE(req.user.find(prompts::kFinalAnswerMarker), std::string::npos);
}

TEST(ParseTrace, SplitsAtLastMarker) {
  const std::string raw = std::string("step one\n") + prompts::kFinalAnswerMarker +
                          " ann\nstep two\n" + prompts::kFinalAnswerMarker + "  bob \ntrailer";
  const auto rec = parse_trace("i", "q", "gen", raw);
  EXPECT_FALSE(rec.malformed);
  EXPECT_EQ(rec.answer, "bob");
  EXPECT_EQ(rec.reasoning.find("step one"), 0u);
  EXPECT_NE(rec.reasoning.find("step two"), std::string::npos);
  EXPECT_EQ(rec.raw_response, raw);
}

TEST(ParseTrace, MissingMarkerIsMalformed) {
  const auto rec = parse_trace("i", "q", "gen", "  just thinking out loud  ");
  EXPECT_TRUE(rec.malformed);
  EXPECT_EQ(rec.reasoning, "just thinking out loud");
  EXPECT_EQ(rec.answer, "");
  EXPECT_EQ(rec.token_estimate, 4u);
  EXPECT_GE(parse_trace("i", "q", "g", "").token_estimate, 1u);
}

TEST(FilterTrace, ChecksRunInOrder) {
  const auto inst = sample_instance();
  FilterConfig cfg;
  cfg.max_tokens = 5;
  ScriptedClient yes([](const auto&) { return "fine\nYES"; });
  ScriptedClient no([](const auto&) { return "nope\nNO"; });
  ScriptedClient garbage([](const auto&) { return "I cannot decide"; });

  auto reason = [&](const TraceRecord& r, llm::ChatClient* judge) {
    return filter_trace(r, inst, judge, cfg).reason;
  };
  // malformed beats everything else
  auto bad = parse_trace("inst-1", "q", "gen", "a b c d e f g h");
  EXPECT_EQ(reason(bad, &yes), RejectReason::kMalformedOutput);
  EXPECT_EQ(reason(record("has <answer> tag", "bob"), &yes), RejectReason::kMalformedOutput);
  // mismatch before length
  EXPECT_EQ(reason(record("a b c d e f g h", "ann"), &yes), RejectReason::kAnswerMismatch);
  // length before the judge, which is not consulted
  EXPECT_EQ(reason(record("a b c d e f g h", "bob"), &no), RejectReason::kOverLength);
  EXPECT_EQ(no.calls.load(), 0);
  EXPECT_EQ(reason(record("short", "Bob"), &no), RejectReason::kJudgeIncoherent);
  EXPECT_EQ(reason(record("short", "bob"), &garbage), RejectReason::kJudgeIncoherent);
  EXPECT_FALSE(reason(record("short", "bob"), &yes).has_value());
  EXPECT_FALSE(reason(record("short", "bob"), nullptr).has_value());
  EXPECT_EQ(to_string(RejectReason::kOverLength), "over_length");
}

TEST(FilterTrace, FailedJudgeCallIsNotAVerdict) {
  ScriptedClient down([](const auto&) -> std::string { throw llm::TimeoutError("x"); });
  EXPECT_THROW(filter_trace(record("short", "bob"), sample_instance(), &down, {}), JudgeUnavailable);
}

TEST(Sft, TargetWrapsReasoningAndGold) {
  const auto inst = sample_instance();
  const auto rec = record("Compare 3 and 5.", "BOB");
  EXPECT_EQ(sft_target(rec, inst), "<think>Compare 3 and 5.</think><answer>bob</answer>");
  const table::InstanceIndex idx = table::index_by_id({inst});
  const auto line = nlohmann::json::parse(sft_jsonl({rec}, idx));
  EXPECT_EQ(line["system"], prompts::kSftSystemPrompt);
  EXPECT_EQ(line["user"], table::render_markdown(inst.table) + "\n\n" + inst.question);
  EXPECT_EQ(line["target"], sft_target(rec, inst));
  EXPECT_EQ(rewards::format_reward(line["target"].get<std::string>()), 1);
}

TEST(Sft, RejectsUnusableRecords) {
  const table::InstanceIndex idx = table::index_by_id({sample_instance()});
  auto rec = record("x", "bob");
  rec.instance_id = "other";
  EXPECT_THROW(sft_jsonl({rec}, idx), Error);
  auto empty = record("x", "bob");
  empty.reasoning = "";
  EXPECT_THROW(sft_jsonl({empty}, idx), Error);
  testutil::TempDir dir("sft");
  EXPECT_EQ(emit_sft_dataset({record("x", "bob")}, idx, dir.file("sft.jsonl")), 1u);
  EXPECT_EQ(read_file(dir.file("sft.jsonl")).back(), '\n');
}

TEST(Pipeline, InconsistentTracesNeverSurvive) {
  const auto instances = synthetic_instances(50, 1000);
  llm::MockBehavior b;
  b.consistency_rate = 0.7;
  llm::MockChatClient gen(3, b), judge(4, b);
  PipelineConfig cfg;
  const auto res = run_pipeline(instances, gen, &judge, cfg);
  const auto idx = table::index_by_id(instances);
  for (const auto& rec : res.kept()) {
    ASSERT_TRUE(rewards::answer_matches(rec.answer, idx.at(rec.instance_id).gold_answers[0]))
        << rec.instance_id;
  }
  const double mean = 700, sd = std::sqrt(1000 * 0.7 * 0.3);
  EXPECT_LE(std::abs(static_cast<double>(res.kept_count()) - mean), 3 * sd);
  EXPECT_EQ(res.kept_count() + res.rejected_count(), 1000u);
  EXPECT_EQ(res.rejections_by_reason().at("answer_mismatch"), res.rejected_count());
  EXPECT_TRUE(res.unresolved_ids().empty());
  // every kept trace turns into a valid SFT row
  EXPECT_NO_THROW(sft_jsonl(res.kept(), idx));
}

TEST(Pipeline, VerboseTracesAreCutByLength) {
  const auto instances = synthetic_instances(51, 200);
  llm::MockBehavior b;
  b.verbosity_rate = 1.0;
  llm::MockChatClient gen(1, b);
  const auto res = run_pipeline(instances, gen, nullptr, {});
  EXPECT_EQ(res.kept_count(), 0u);
  EXPECT_EQ(res.rejections_by_reason().at("over_length"), 200u);
}

TEST(Pipeline, IdempotentAcrossRunsAndThreadCounts) {
  const auto instances = synthetic_instances(52, 300);
  llm::MockBehavior b;
  b.consistency_rate = 0.8;
  b.verbosity_rate = 0.1;
  b.judge_agree_rate = 0.9;
  llm::MockChatClient gen(5, b), judge(6, b);
  PipelineConfig one;
  one.max_in_flight = 1;
  PipelineConfig many;
  many.max_in_flight = 8;
  const auto a = traces_jsonl(run_pipeline(instances, gen, &judge, one));
  const auto c = traces_jsonl(run_pipeline(instances, gen, &judge, many));
  const auto d = traces_jsonl(run_pipeline(instances, gen, &judge, many));
  EXPECT_EQ(a, c);
  EXPECT_EQ(c, d);
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 300);
}

TEST(Pipeline, FlakyJudgeIsRetriedInALaterRound) {
  const auto instances = synthetic_instances(53, 40);
  llm::MockChatClient gen(1, {});
  std::mutex mu;
  std::set<std::string> seen;
  ScriptedClient flaky([&](const llm::ChatRequest& r) -> std::string {
    std::lock_guard lock(mu);
    if (seen.insert(r.user).second) throw llm::ExhaustedRetries(2, "503");
    return "ok\nYES";
  });
  PipelineConfig cfg;
  cfg.filter.judge_retry_rounds = 1;
  const auto res = run_pipeline(instances, gen, &flaky, cfg);
  EXPECT_TRUE(res.unresolved_ids().empty());
  EXPECT_EQ(res.kept_count(), 40u);
  EXPECT_EQ(flaky.calls.load(), 80);
}

TEST(Pipeline, DeadJudgeLeavesRecordsUnresolved) {
  const auto instances = synthetic_instances(54, 10);
  llm::MockChatClient gen(1, {});
  ScriptedClient dead([](const auto&) -> std::string { throw llm::ExhaustedRetries(3, "down"); });
  PipelineConfig cfg;
  cfg.filter.judge_retry_rounds = 2;
  const auto res = run_pipeline(instances, gen, &dead, cfg);
  EXPECT_EQ(res.kept_count(), 0u);
  EXPECT_EQ(res.rejected_count(), 0u);
  EXPECT_EQ(res.unresolved_ids().size(), 10u);
  EXPECT_EQ(dead.calls.load(), 30);
  EXPECT_EQ(traces_jsonl(res), "");
}

TEST(Pipeline, GeneratorFailureIsRecorded) {
  const auto instances = synthetic_instances(55, 3);
  ScriptedClient broken([](const auto&) -> std::string { throw llm::ClientError("refused"); });
  const auto res = run_pipeline(instances, broken, nullptr, {});
  ASSERT_EQ(res.unresolved_ids().size(), 3u);
  EXPECT_EQ(res.entries[0].error->rfind("generator:", 0), 0u);
  EXPECT_EQ(res.entries[1].record.instance_id, instances[1].id);
}

TEST(Pipeline, RegeneratesAfterRejection) {
  const auto inst = sample_instance();
  std::atomic<int> n{0};
  ScriptedClient gen([&](const auto&) {
    return std::string("think\n") + prompts::kFinalAnswerMarker + (n++ == 0 ? " ann" : " bob");
  });
  PipelineConfig cfg;
  cfg.generation_retries = 1;
  const auto res = run_pipeline({inst}, gen, nullptr, cfg);
  EXPECT_EQ(res.kept_count(), 1u);
  EXPECT_EQ(gen.calls.load(), 2);

  n = 0;
  cfg.generation_retries = 0;
  EXPECT_EQ(run_pipeline({inst}, gen, nullptr, cfg).rejected_count(), 1u);
}
