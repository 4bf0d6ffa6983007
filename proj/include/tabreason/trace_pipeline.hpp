#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabreason/dataset.hpp"
#include "tabreason/llm_client.hpp"
#include "tabreason/prompts.hpp"
#include "tabreason/rewards.hpp"

namespace tabreason::traces {

struct TraceRecord {
  std::string instance_id;
  std::string question;
  std::string reasoning;
  std::string answer;
  std::string generator_model;
  std::string raw_response;
  std::size_t token_estimate = 1;
  // No FINAL ANSWER marker in the response.
  bool malformed = false;
};

enum class Outcome { kKept, kRejected };
enum class RejectReason { kAnswerMismatch, kOverLength, kJudgeIncoherent, kMalformedOutput };

std::string to_string(RejectReason r);

struct FilterVerdict {
  Outcome outcome = Outcome::kKept;
  std::optional<RejectReason> reason;

  static FilterVerdict kept() { return {}; }
  static FilterVerdict rejected(RejectReason r) { return {Outcome::kRejected, r}; }
};

struct FilterConfig {
  std::size_t max_tokens = 1500;
  // Extra passes over records whose judge call failed.
  std::size_t judge_retry_rounds = 1;
  rewards::MatchConfig match;
};

struct ModelSettings {
  std::string model = "deepseek-r1";
  double temperature = 0.6;
  std::size_t max_tokens = 4096;
};

/// The judge call failed; the record must be retried, never kept.
class JudgeUnavailable : public Error {
 public:
  explicit JudgeUnavailable(const std::string& what)
      : Error("judge unavailable: " + what) {}
};

llm::ChatRequest build_trace_prompt(
    const table::Instance& instance, const ModelSettings& settings = {},
    const prompts::Template& tmpl = prompts::trace_generation_v1());

/// Splits a raw generator response at the last FINAL ANSWER marker.
TraceRecord parse_trace(const std::string& instance_id,
                        const std::string& question,
                        const std::string& generator_model,
                        const std::string& raw_response);

/// Propagates llm::ClientError.
TraceRecord generate_trace(llm::ChatClient& client,
                           const table::Instance& instance,
                           const ModelSettings& settings = {});

llm::ChatRequest build_trace_judge_prompt(const TraceRecord& record,
                                          const table::Instance& instance,
                                          const ModelSettings& settings);

/// Checks in order: malformed output, answer mismatch, over length, judge.
/// First failure wins. Throws JudgeUnavailable when the judge call fails.
FilterVerdict filter_trace(const TraceRecord& record,
                           const table::Instance& instance,
                           llm::ChatClient* judge, const FilterConfig& config,
                           const ModelSettings& judge_settings = {});

/// "<think>" + reasoning + "</think><answer>" + gold + "</answer>"
std::string sft_target(const TraceRecord& record, const table::Instance& instance);
std::string sft_user_message(const table::Instance& instance);

/// SFT JSONL text for kept records. Throws Error if any target would fail
/// the format or accuracy reward against its own gold.
std::string sft_jsonl(const std::vector<TraceRecord>& kept,
                      const table::InstanceIndex& instances,
                      const rewards::MatchConfig& match = {});

std::size_t emit_sft_dataset(const std::vector<TraceRecord>& kept,
                             const table::InstanceIndex& instances,
                             const std::string& path,
                             const rewards::MatchConfig& match = {});

struct PipelineConfig {
  ModelSettings generator;
  ModelSettings judge{"qwen2.5-72b-instruct", 0.0, 512};
  FilterConfig filter;
  std::size_t max_in_flight = 8;
  // Regenerations after a rejection (0 = single pass).
  std::size_t generation_retries = 0;
};

struct PipelineEntry {
  TraceRecord record;
  std::optional<FilterVerdict> verdict;  // nullopt: deferred or failed
  std::optional<std::string> error;      // generation or judge failure
};

struct PipelineResult {
  std::vector<PipelineEntry> entries;  // input order

  std::vector<TraceRecord> kept() const;
  std::size_t kept_count() const;
  std::size_t rejected_count() const;
  std::map<std::string, std::size_t> rejections_by_reason() const;
  std::vector<std::string> unresolved_ids() const;
};

/// Generates and filters every instance with up to max_in_flight workers.
PipelineResult run_pipeline(const std::vector<table::Instance>& instances,
                            llm::ChatClient& generator, llm::ChatClient* judge,
                            const PipelineConfig& config);

/// Trace JSONL for entries with a verdict.
std::string traces_jsonl(const PipelineResult& result);

}  // namespace tabreason::traces
