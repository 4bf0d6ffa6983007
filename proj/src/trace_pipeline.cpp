#include "tabreason/trace_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace tabreason::traces {

using nlohmann::json;
using table::Instance;

std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::kAnswerMismatch:
      return "answer_mismatch";
    case RejectReason::kOverLength:
      return "over_length";
    case RejectReason::kJudgeIncoherent:
      return "judge_incoherent";
    case RejectReason::kMalformedOutput:
      return "malformed_output";
  }
  return "unknown";
}

llm::ChatRequest build_trace_prompt(const Instance& instance,
                                    const ModelSettings& settings,
                                    const prompts::Template& tmpl) {
  llm::ChatRequest req;
  req.model = settings.model;
  req.temperature = settings.temperature;
  req.max_tokens = settings.max_tokens;
  if (!tmpl.system.empty()) req.system = tmpl.system;
  req.user = prompts::fill(tmpl.user,
                           {{"table", table::render_markdown(instance.table)},
                            {"question", instance.question},
                            {"answer", instance.gold_answers.front()}});
  return req;
}

namespace {
std::size_t whitespace_tokens(const std::string& s) {
  std::istringstream in(s);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}
}  // namespace

TraceRecord parse_trace(const std::string& instance_id,
                        const std::string& question,
                        const std::string& generator_model,
                        const std::string& raw_response) {
  TraceRecord rec;
  rec.instance_id = instance_id;
  rec.question = question;
  rec.generator_model = generator_model;
  rec.raw_response = raw_response;
  const auto pos = raw_response.rfind(prompts::kFinalAnswerMarker);
  if (pos == std::string::npos) {
    rec.malformed = true;
    rec.reasoning = trim(raw_response);
  } else {
    rec.reasoning = trim(raw_response.substr(0, pos));
    const std::string tail = raw_response.substr(
        pos + std::char_traits<char>::length(prompts::kFinalAnswerMarker));
    rec.answer = trim(tail.substr(0, tail.find('\n')));
  }
  rec.token_estimate = std::max<std::size_t>(1, whitespace_tokens(rec.reasoning));
  return rec;
}

TraceRecord generate_trace(llm::ChatClient& client, const Instance& instance,
                           const ModelSettings& settings) {
  const auto response = client.chat(build_trace_prompt(instance, settings));
  return parse_trace(instance.id, instance.question, settings.model,
                     response.text);
}

llm::ChatRequest build_trace_judge_prompt(const TraceRecord& record,
                                          const Instance& instance,
                                          const ModelSettings& settings) {
  const auto& tmpl = prompts::trace_judge_v1();
  llm::ChatRequest req;
  req.model = settings.model;
  req.temperature = settings.temperature;
  req.max_tokens = settings.max_tokens;
  req.system = tmpl.system;
  req.user = prompts::fill(tmpl.user,
                           {{"table", table::render_markdown(instance.table)},
                            {"question", instance.question},
                            {"answer", instance.gold_answers.front()},
                            {"reasoning", record.reasoning},
                            {"trace_answer", record.answer}});
  return req;
}

namespace {
bool contains_tag(const std::string& s) {
  for (const char* tag : {"<think>", "</think>", "<answer>", "</answer>"}) {
    if (s.find(tag) != std::string::npos) return true;
  }
  return false;
}
}  // namespace

FilterVerdict filter_trace(const TraceRecord& record, const Instance& instance,
                           llm::ChatClient* judge, const FilterConfig& config,
                           const ModelSettings& judge_settings) {
  // A trace we cannot wrap in the SFT tag format is unusable regardless of
  // its answer.
  if (record.malformed || trim(record.reasoning).empty() ||
      contains_tag(record.reasoning)) {
    return FilterVerdict::rejected(RejectReason::kMalformedOutput);
  }
  bool consistent = false;
  for (const auto& g : instance.gold_answers) {
    consistent = consistent || rewards::answer_matches(record.answer, g, config.match);
  }
  if (!consistent) return FilterVerdict::rejected(RejectReason::kAnswerMismatch);
  if (record.token_estimate > config.max_tokens) {
    return FilterVerdict::rejected(RejectReason::kOverLength);
  }
  if (judge != nullptr) {
    std::string reply;
    try {
      reply = judge->chat(build_trace_judge_prompt(record, instance, judge_settings)).text;
    } catch (const llm::ClientError& e) {
      throw JudgeUnavailable(e.what());
    }
    // Only an explicit YES keeps the trace.
    if (prompts::last_line_token(reply) != "YES") {
      return FilterVerdict::rejected(RejectReason::kJudgeIncoherent);
    }
  }
  return FilterVerdict::kept();
}

std::string sft_target(const TraceRecord& record, const Instance& instance) {
  return "<think>" + record.reasoning + "</think><answer>" +
         instance.gold_answers.front() + "</answer>";
}

std::string sft_user_message(const Instance& instance) {
  return table::render_markdown(instance.table) + "\n\n" + instance.question;
}

std::string sft_jsonl(const std::vector<TraceRecord>& kept,
                      const table::InstanceIndex& instances,
                      const rewards::MatchConfig& match) {
  std::string out;
  for (const auto& rec : kept) {
    auto it = instances.find(rec.instance_id);
    if (it == instances.end()) {
      throw Error("sft: unknown instance " + rec.instance_id);
    }
    const Instance& inst = it->second;
    const std::string target = sft_target(rec, inst);
    if (rewards::format_reward(target) != 1 ||
        rewards::accuracy_reward(target, inst.gold_answers, match) != 1) {
      throw Error("sft: target for " + rec.instance_id +
                  " fails its own reward check");
    }
    json j = json::object();
    j["instance_id"] = rec.instance_id;
    j["system"] = prompts::kSftSystemPrompt;
    j["user"] = sft_user_message(inst);
    j["target"] = target;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::size_t emit_sft_dataset(const std::vector<TraceRecord>& kept,
                             const table::InstanceIndex& instances,
                             const std::string& path,
                             const rewards::MatchConfig& match) {
  write_file(path, sft_jsonl(kept, instances, match));
  return kept.size();
}

// ---------------------------------------------------------------------------

std::vector<TraceRecord> PipelineResult::kept() const {
  std::vector<TraceRecord> out;
  for (const auto& e : entries) {
    if (e.verdict && e.verdict->outcome == Outcome::kKept) out.push_back(e.record);
  }
  return out;
}

std::size_t PipelineResult::kept_count() const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [](const PipelineEntry& e) {
        return e.verdict && e.verdict->outcome == Outcome::kKept;
      }));
}

std::size_t PipelineResult::rejected_count() const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [](const PipelineEntry& e) {
        return e.verdict && e.verdict->outcome == Outcome::kRejected;
      }));
}

std::map<std::string, std::size_t> PipelineResult::rejections_by_reason() const {
  std::map<std::string, std::size_t> out;
  for (const auto& e : entries) {
    if (e.verdict && e.verdict->reason) ++out[to_string(*e.verdict->reason)];
  }
  return out;
}

std::vector<std::string> PipelineResult::unresolved_ids() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.verdict) out.push_back(e.record.instance_id);
  }
  return out;
}

namespace {

void process(const Instance& inst, llm::ChatClient& generator,
             llm::ChatClient* judge, const PipelineConfig& config,
             PipelineEntry& entry) {
  entry.error.reset();
  for (std::size_t attempt = 0; attempt <= config.generation_retries; ++attempt) {
    try {
      entry.record = generate_trace(generator, inst, config.generator);
    } catch (const llm::ClientError& e) {
      entry.record.instance_id = inst.id;
      entry.record.question = inst.question;
      entry.error = std::string("generator: ") + e.what();
      entry.verdict.reset();
      return;
    }
    try {
      entry.verdict = filter_trace(entry.record, inst, judge, config.filter,
                                   config.judge);
    } catch (const JudgeUnavailable& e) {
      entry.error = e.what();
      entry.verdict.reset();
      return;
    }
    if (entry.verdict->outcome == Outcome::kKept) return;
  }
}

void rejudge(const Instance& inst, llm::ChatClient* judge,
             const PipelineConfig& config, PipelineEntry& entry) {
  try {
    entry.verdict = filter_trace(entry.record, inst, judge, config.filter,
                                 config.judge);
    entry.error.reset();
  } catch (const JudgeUnavailable& e) {
    entry.error = e.what();
  }
}

template <typename Fn>
void run_workers(const std::vector<std::size_t>& todo, std::size_t max_in_flight,
                 Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) fn(todo[i]);
  };
  const std::size_t n_threads =
      std::max<std::size_t>(1, std::min(max_in_flight, todo.size()));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
}

}  // namespace

PipelineResult run_pipeline(const std::vector<Instance>& instances,
                            llm::ChatClient& generator, llm::ChatClient* judge,
                            const PipelineConfig& config) {
  PipelineResult result;
  result.entries.resize(instances.size());
  std::vector<std::size_t> todo(instances.size());
  for (std::size_t i = 0; i < todo.size(); ++i) todo[i] = i;
  run_workers(todo, config.max_in_flight, [&](std::size_t i) {
    process(instances[i], generator, judge, config, result.entries[i]);
  });

  // Records whose judge call failed get further judge passes. Generation
  // failures are not retried here; the client already retried.
  for (std::size_t round = 0; round < config.filter.judge_retry_rounds; ++round) {
    todo.clear();
    for (std::size_t i = 0; i < result.entries.size(); ++i) {
      const auto& e = result.entries[i];
      if (!e.verdict && e.error && e.error->rfind("generator:", 0) != 0) {
        todo.push_back(i);
      }
    }
    if (todo.empty()) break;
    run_workers(todo, config.max_in_flight, [&](std::size_t i) {
      rejudge(instances[i], judge, config, result.entries[i]);
    });
  }
  return result;
}

std::string traces_jsonl(const PipelineResult& result) {
  std::string out;
  for (const auto& e : result.entries) {
    if (!e.verdict) continue;
    json j = json::object();
    j["instance_id"] = e.record.instance_id;
    j["reasoning"] = e.record.reasoning;
    j["answer"] = e.record.answer;
    j["generator_model"] = e.record.generator_model;
    j["verdict"] = e.verdict->outcome == Outcome::kKept ? "kept" : "rejected";
    j["reason"] = e.verdict->reason ? json(to_string(*e.verdict->reason))
                                    : json(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace tabreason::traces
