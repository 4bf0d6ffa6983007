#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabreason/dataset.hpp"
#include "tabreason/llm_client.hpp"
#include "tabreason/rewards.hpp"
#include "tabreason/trace_pipeline.hpp"

namespace tabreason::eval {

struct Prediction {
  std::string instance_id;
  std::string response_text;
  std::string model_tag;
};

std::vector<Prediction> parse_predictions(const std::string& jsonl);
std::vector<Prediction> load_predictions(const std::string& path);
std::string predictions_to_jsonl(const std::vector<Prediction>& predictions);

enum class JudgeMode { kLlm, kRule };
std::string to_string(JudgeMode m);

struct DatasetScore {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::string model_tag;
  std::map<std::string, DatasetScore> per_dataset;
  double average = 0.0;  // unweighted mean of dataset accuracies
  JudgeMode judge_mode = JudgeMode::kRule;
  // Verdicts that fell back to the rule matcher.
  std::size_t fallback_count = 0;
};

class UnknownInstance : public Error {
 public:
  explicit UnknownInstance(const std::string& id)
      : Error("prediction for unknown instance: " + id), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

llm::ChatRequest judge_request(const table::Instance& instance,
                               const Prediction& prediction,
                               const traces::ModelSettings& settings = {
                                   "qwen2.5-72b-instruct", 0.0, 512});

struct Verdict {
  bool correct = false;
  bool used_fallback = false;
};

/// Parses CORRECT / INCORRECT from the last line. Unparseable output gets one
/// retry; after that, or on a client error, the rule matcher decides.
Verdict judge_verdict(llm::ChatClient& client, const table::Instance& instance,
                      const Prediction& prediction,
                      const rewards::MatchConfig& match = {},
                      const traces::ModelSettings& settings = {
                          "qwen2.5-72b-instruct", 0.0, 512});

struct EvalOptions {
  rewards::MatchConfig match;
  traces::ModelSettings judge_settings{"qwen2.5-72b-instruct", 0.0, 512};
  std::size_t max_in_flight = 8;
};

/// Scores every instance in `instances`; instances without a prediction
/// count as incorrect. `judge == nullptr` selects rule mode.
EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const table::InstanceIndex& instances,
                    llm::ChatClient* judge, const EvalOptions& options = {});

/// Percentages with two decimals, e.g. 0.755 -> "75.50".
std::string format_accuracy(double accuracy);

/// Rows = model tags, columns = datasets + Average. Both the markdown and the
/// CSV renderings read the same rendered strings.
struct ReportTable {
  std::vector<std::string> datasets;
  struct Row {
    std::string model_tag;
    std::map<std::string, std::string> cells;  // dataset -> rendered value
    std::string average;
    std::string judge_mode;
  };
  std::vector<Row> rows;
};

ReportTable to_table(const std::vector<EvalReport>& reports);

/// Writes `<base>.md` and `<base>.csv`.
void emit_report(const EvalReport& report, const std::string& base_path);

/// Merging keeps rows in input order; datasets missing from a run show "-".
ReportTable parse_report_csv(const std::string& csv);
ReportTable merge_reports(const std::vector<ReportTable>& tables);
std::string render_table_markdown(const ReportTable& table);
std::string render_table_csv(const ReportTable& table);

}  // namespace tabreason::eval
