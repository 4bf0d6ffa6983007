#include "tabreason/eval_harness.hpp"

#include <atomic>
#include <cstdio>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "tabreason/prompts.hpp"

namespace tabreason::eval {

using nlohmann::json;
using table::Instance;

std::vector<Prediction> parse_predictions(const std::string& jsonl) {
  std::vector<Prediction> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', start);
    if (nl == std::string::npos) nl = jsonl.size();
    ++line_no;
    const std::string line = trim(jsonl.substr(start, nl - start));
    start = nl + 1;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("instance_id").get<std::string>(),
                     j.at("response_text").get<std::string>(),
                     j.value("model_tag", std::string("model"))});
    } catch (const json::exception& e) {
      throw table::SchemaError(line_no, "prediction", e.what());
    }
  }
  return out;
}

std::vector<Prediction> load_predictions(const std::string& path) {
  return parse_predictions(read_file(path));
}

std::string predictions_to_jsonl(const std::vector<Prediction>& predictions) {
  std::string out;
  for (const auto& p : predictions) {
    json j = json::object();
    j["instance_id"] = p.instance_id;
    j["response_text"] = p.response_text;
    j["model_tag"] = p.model_tag;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string to_string(JudgeMode m) { return m == JudgeMode::kLlm ? "llm" : "rule"; }

llm::ChatRequest judge_request(const Instance& instance,
                               const Prediction& prediction,
                               const traces::ModelSettings& settings) {
  const auto& tmpl = prompts::answer_judge_v1();
  std::string golds = prompts::kGoldListLabel;
  for (const auto& g : instance.gold_answers) golds += "- " + g + "\n";
  std::string pred;
  if (auto ans = rewards::extract_answer(prediction.response_text)) {
    pred = std::string(prompts::kExtractedLabel) + *ans;
  } else {
    pred = std::string(prompts::kFullResponseLabel) + prediction.response_text;
  }
  llm::ChatRequest req;
  req.model = settings.model;
  req.temperature = settings.temperature;
  req.max_tokens = settings.max_tokens;
  req.system = tmpl.system;
  req.user = prompts::fill(tmpl.user, {{"question", instance.question},
                                       {"golds", golds},
                                       {"prediction", pred}});
  return req;
}

Verdict judge_verdict(llm::ChatClient& client, const Instance& instance,
                      const Prediction& prediction,
                      const rewards::MatchConfig& match,
                      const traces::ModelSettings& settings) {
  const auto req = judge_request(instance, prediction, settings);
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string reply;
    try {
      reply = client.chat(req).text;
    } catch (const llm::ClientError&) {
      break;  // the client has already retried transport failures
    }
    const std::string token = prompts::last_line_token(reply);
    if (token == "CORRECT") return {true, false};
    if (token == "INCORRECT") return {false, false};
  }
  const bool rule = rewards::accuracy_reward(prediction.response_text,
                                             instance.gold_answers, match) == 1;
  return {rule, true};
}

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const table::InstanceIndex& instances,
                    llm::ChatClient* judge, const EvalOptions& options) {
  std::map<std::string, const Prediction*> by_id;
  std::set<std::string> tags;
  for (const auto& p : predictions) {
    if (!instances.count(p.instance_id)) throw UnknownInstance(p.instance_id);
    if (!by_id.emplace(p.instance_id, &p).second) {
      throw Error("duplicate prediction for instance " + p.instance_id);
    }
    tags.insert(p.model_tag);
  }
  if (tags.size() > 1) throw Error("predictions mix several model tags");

  EvalReport report;
  report.model_tag = tags.empty() ? "model" : *tags.begin();
  report.judge_mode = judge ? JudgeMode::kLlm : JudgeMode::kRule;

  // Verdicts computed (possibly in parallel) into slots keyed by instance
  // order, then aggregated serially.
  std::vector<const Instance*> order;
  for (const auto& [id, inst] : instances) order.push_back(&inst);
  std::vector<Verdict> verdicts(order.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto it = by_id.find(order[i]->id);
    if (it == by_id.end()) continue;  // missing prediction: incorrect
    if (judge == nullptr) {
      verdicts[i].correct = rewards::accuracy_reward(it->second->response_text,
                                                     order[i]->gold_answers,
                                                     options.match) == 1;
    } else {
      todo.push_back(i);
    }
  }
  if (!todo.empty()) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t k = next++; k < todo.size(); k = next++) {
        const std::size_t i = todo[k];
        verdicts[i] = judge_verdict(*judge, *order[i], *by_id.at(order[i]->id),
                                    options.match, options.judge_settings);
      }
    };
    const std::size_t n_threads =
        std::max<std::size_t>(1, std::min(options.max_in_flight, todo.size()));
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& score = report.per_dataset[order[i]->dataset];
    ++score.n;
    score.correct += verdicts[i].correct ? 1 : 0;
    report.fallback_count += verdicts[i].used_fallback ? 1 : 0;
  }
  double sum = 0.0;
  for (auto& [name, score] : report.per_dataset) {
    score.accuracy = static_cast<double>(score.correct) / static_cast<double>(score.n);
    sum += score.accuracy;
  }
  if (!report.per_dataset.empty()) {
    report.average = sum / static_cast<double>(report.per_dataset.size());
  }
  return report;
}

std::string format_accuracy(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", accuracy * 100.0);
  return buf;
}

// ---------------------------------------------------------------------------
// Report tables

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

ReportTable to_table(const std::vector<EvalReport>& reports) {
  ReportTable t;
  std::set<std::string> seen;
  for (const auto& r : reports) {
    for (const auto& [name, score] : r.per_dataset) {
      if (seen.insert(name).second) t.datasets.push_back(name);
    }
  }
  for (const auto& r : reports) {
    ReportTable::Row row;
    row.model_tag = r.model_tag;
    for (const auto& [name, score] : r.per_dataset) {
      row.cells[name] = format_accuracy(score.accuracy);
    }
    row.average = format_accuracy(r.average);
    row.judge_mode = to_string(r.judge_mode);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string render_table_markdown(const ReportTable& t) {
  std::string out = "| Model |";
  for (const auto& d : t.datasets) out += " " + d + " |";
  out += " Average |\n|---|";
  for (std::size_t i = 0; i < t.datasets.size(); ++i) out += "---|";
  out += "---|\n";
  for (const auto& row : t.rows) {
    out += "| " + row.model_tag + " |";
    for (const auto& d : t.datasets) {
      auto it = row.cells.find(d);
      out += " " + (it == row.cells.end() ? std::string("-") : it->second) + " |";
    }
    out += " " + row.average + " |\n";
  }
  return out;
}

std::string render_table_csv(const ReportTable& t) {
  std::string out = "model_tag";
  for (const auto& d : t.datasets) out += "," + csv_field(d);
  out += ",average,judge_mode\n";
  for (const auto& row : t.rows) {
    out += csv_field(row.model_tag);
    for (const auto& d : t.datasets) {
      auto it = row.cells.find(d);
      out += "," + (it == row.cells.end() ? std::string("-") : it->second);
    }
    out += "," + row.average + "," + row.judge_mode + "\n";
  }
  return out;
}

void emit_report(const EvalReport& report, const std::string& base_path) {
  const ReportTable t = to_table({report});
  write_file(base_path + ".md", render_table_markdown(t));
  write_file(base_path + ".csv", render_table_csv(t));
}

ReportTable parse_report_csv(const std::string& csv) {
  const auto rows = parse_csv(csv);
  if (rows.empty()) throw Error("report csv is empty");
  const auto& header = rows.front();
  if (header.size() < 3 || header.front() != "model_tag" ||
      header[header.size() - 2] != "average" || header.back() != "judge_mode") {
    throw Error("report csv header must be model_tag,<datasets...>,average,judge_mode");
  }
  ReportTable t;
  t.datasets.assign(header.begin() + 1, header.end() - 2);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) {
      throw Error("report csv row " + std::to_string(r + 1) + " is ragged");
    }
    ReportTable::Row row;
    row.model_tag = rows[r].front();
    for (std::size_t c = 0; c < t.datasets.size(); ++c) {
      if (rows[r][c + 1] != "-") row.cells[t.datasets[c]] = rows[r][c + 1];
    }
    row.average = rows[r][header.size() - 2];
    row.judge_mode = rows[r].back();
    t.rows.push_back(std::move(row));
  }
  return t;
}

ReportTable merge_reports(const std::vector<ReportTable>& tables) {
  ReportTable out;
  std::set<std::string> seen;
  for (const auto& t : tables) {
    for (const auto& d : t.datasets) {
      if (seen.insert(d).second) out.datasets.push_back(d);
    }
    out.rows.insert(out.rows.end(), t.rows.begin(), t.rows.end());
  }
  return out;
}

}  // namespace tabreason::eval
