#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tabreason/grpo.hpp"
#include "tabreason/llm_client.hpp"
#include "tabreason/trace_pipeline.hpp"

namespace tabreason::config {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ClientSection {
  std::string backend = "mock";  // mock | http
  llm::ClientConfig client;
  traces::ModelSettings model;
};

struct PipelineConfig {
  std::string instances_path;  // instance JSONL for gen-traces / eval
  std::size_t n_per_dataset = 0;  // 0 keeps every instance
  std::uint64_t data_seed = 0;

  ClientSection generator{"mock", {}, {"deepseek-r1", 0.6, 4096}};
  ClientSection judge{"mock", {}, {"qwen2.5-72b-instruct", 0.0, 512}};
  bool judge_traces = true;  // run the coherence judge during filtering

  std::uint64_t mock_seed = 0;
  llm::MockBehavior mock;

  traces::FilterConfig filter;
  std::size_t generation_retries = 0;

  rewards::MatchConfig match;
  rewards::RewardWeights weights;
  grpo::GrpoConfig grpo;

  double sft_lr = 0.1;
  std::size_t sft_epochs = 200;
  std::uint32_t policy_dim = 65536;

  std::string output_dir = "out";

  /// Copies match/weights into the GRPO and filter sub-configs and checks
  /// every invariant. Throws ConfigError.
  void finalize();
};

struct Entry {
  std::string key;  // section.name
  std::string doc;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

const std::vector<Entry>& entries();

/// Parses `[section]` headers and `key = value` lines; '#' starts a comment.
/// Strings may be double-quoted. Unknown keys are rejected.
void apply_text(PipelineConfig& cfg, const std::string& text);
void apply_file(PipelineConfig& cfg, const std::string& path);
/// "section.key=value"
void apply_override(PipelineConfig& cfg, const std::string& assignment);

/// Every key with its current value, in TOML form. Parsing this text back
/// reproduces the configuration.
std::string dump(const PipelineConfig& cfg);

}  // namespace tabreason::config
