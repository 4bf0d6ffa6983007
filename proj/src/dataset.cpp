#include "tabreason/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tabreason::table {

using nlohmann::json;

std::string to_string(TaskType t) {
  return t == TaskType::kQa ? "qa" : "fact_verification";
}

std::optional<TaskType> task_type_from_string(const std::string& s) {
  if (s == "qa") return TaskType::kQa;
  if (s == "fact_verification") return TaskType::kFactVerification;
  return std::nullopt;
}

namespace {

// Cell text is kept on one line so markdown rows stay one per line.
std::string flatten_newlines(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_break = false;
  for (char c : s) {
    if (c == '\n' || c == '\r') {
      if (!in_break) out += ' ';
      in_break = true;
    } else {
      out += c;
      in_break = false;
    }
  }
  return out;
}

Cell cell_from_json(const json& v, std::size_t line) {
  if (v.is_null()) return Cell::empty();
  if (v.is_string()) {
    std::string s = trim(flatten_newlines(v.get<std::string>()));
    if (s.empty()) return Cell::empty();
    return Cell::text(std::move(s));
  }
  if (v.is_number_integer()) {
    return Cell::number(Decimal::from_int(v.get<std::int64_t>()));
  }
  if (v.is_number_float()) {
    if (auto d = Decimal::from_double(v.get<double>())) return Cell::number(*d);
    throw SchemaError(line, "table.rows", "number not representable");
  }
  throw SchemaError(line, "table.rows", "cell must be string, number or null");
}

json cell_to_json(const Cell& c) {
  if (c.is_empty()) return nullptr;
  if (c.is_text()) return c.as_text();
  const Decimal& d = c.as_number();
  if (d.is_integer()) return d.unscaled();
  return d.to_double();
}

const json& require(const json& j, const char* field, std::size_t line) {
  auto it = j.find(field);
  if (it == j.end()) throw SchemaError(line, field, "missing");
  return *it;
}

std::string require_string(const json& j, const char* field,
                           std::size_t line) {
  const json& v = require(j, field, line);
  if (!v.is_string()) throw SchemaError(line, field, "expected string");
  return v.get<std::string>();
}

bool is_fact_label(const std::string& s) {
  static const std::set<std::string> kLabels = {"true", "false", "entail",
                                                "contradict", "neutral"};
  return kLabels.count(to_lower(trim(s))) > 0;
}

}  // namespace

Instance instance_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw SchemaError(line, "<root>", "expected object");
  static const std::set<std::string> kKnown = {
      "id",           "dataset",   "table", "question",
      "gold_answers", "task_type", "image_ref"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKnown.count(it.key())) throw SchemaError(line, it.key(), "unknown");
  }

  Instance inst{
      .id = require_string(j, "id", line),
      .dataset = require_string(j, "dataset", line),
      .table = {},
      .question = require_string(j, "question", line),
      .gold_answers = {},
      .task_type = TaskType::kQa,
      .image_ref = std::nullopt,
  };
  if (inst.id.empty()) throw SchemaError(line, "id", "empty");

  const json& t = require(j, "table", line);
  if (!t.is_object()) throw SchemaError(line, "table", "expected object");
  const json& hj = require(t, "headers", line);
  if (!hj.is_array()) throw SchemaError(line, "table.headers", "expected array");
  std::vector<std::string> headers;
  for (const auto& h : hj) {
    if (!h.is_string()) {
      throw SchemaError(line, "table.headers", "expected string");
    }
    std::string s = trim(flatten_newlines(h.get<std::string>()));
    if (s.empty()) throw SchemaError(line, "table.headers", "blank header");
    headers.push_back(std::move(s));
  }
  if (headers.empty()) throw SchemaError(line, "table.headers", "zero columns");
  const json& rj = require(t, "rows", line);
  if (!rj.is_array()) throw SchemaError(line, "table.rows", "expected array");
  std::vector<std::vector<Cell>> rows;
  for (const auto& r : rj) {
    if (!r.is_array()) {
      // Nested header levels show up as objects or nested arrays.
      throw SchemaError(line, "table.rows", "expected array of cells");
    }
    if (r.size() != headers.size()) {
      throw SchemaError(line, "table.rows",
                        "ragged row: " + std::to_string(r.size()) +
                            " cells, expected " +
                            std::to_string(headers.size()));
    }
    std::vector<Cell> row;
    for (const auto& c : r) row.push_back(cell_from_json(c, line));
    rows.push_back(std::move(row));
  }
  inst.table = Table(std::move(headers), std::move(rows));

  const json& gj = require(j, "gold_answers", line);
  if (!gj.is_array() || gj.empty()) {
    throw SchemaError(line, "gold_answers", "expected non-empty array");
  }
  for (const auto& g : gj) {
    if (!g.is_string()) throw SchemaError(line, "gold_answers", "expected string");
    inst.gold_answers.push_back(g.get<std::string>());
  }

  const auto tt = task_type_from_string(require_string(j, "task_type", line));
  if (!tt) throw SchemaError(line, "task_type", "expected qa|fact_verification");
  inst.task_type = *tt;
  if (inst.task_type == TaskType::kFactVerification) {
    for (const auto& g : inst.gold_answers) {
      if (!is_fact_label(g)) {
        throw SchemaError(line, "gold_answers",
                          "fact verification label '" + g + "' not allowed");
      }
    }
  }

  if (auto it = j.find("image_ref"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw SchemaError(line, "image_ref", "expected string");
    inst.image_ref = it->get<std::string>();
  }
  return inst;
}

json instance_to_json(const Instance& inst) {
  json rows = json::array();
  for (const auto& r : inst.table.rows()) {
    json row = json::array();
    for (const auto& c : r) row.push_back(cell_to_json(c));
    rows.push_back(std::move(row));
  }
  // Field order is fixed so exports are byte-stable.
  json j = json::object();
  j["id"] = inst.id;
  j["dataset"] = inst.dataset;
  j["table"] = {{"headers", inst.table.headers()}, {"rows", std::move(rows)}};
  j["question"] = inst.question;
  j["gold_answers"] = inst.gold_answers;
  j["task_type"] = to_string(inst.task_type);
  j["image_ref"] = inst.image_ref ? json(*inst.image_ref) : json(nullptr);
  return j;
}

std::vector<Instance> parse_instances(const std::string& jsonl) {
  std::vector<Instance> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', start);
    if (nl == std::string::npos) nl = jsonl.size();
    ++line_no;
    const std::string line = trim(jsonl.substr(start, nl - start));
    start = nl + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(line_no, "<json>", e.what());
    }
    out.push_back(instance_from_json(j, line_no));
  }
  return out;
}

std::vector<Instance> load_instances(const std::string& path) {
  return parse_instances(read_file(path));
}

std::string instances_to_jsonl(const std::vector<Instance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += instance_to_json(inst).dump();
    out += '\n';
  }
  return out;
}

std::vector<Instance> sample_instances(const std::vector<Instance>& instances,
                                       std::size_t n, std::uint64_t seed) {
  if (n > instances.size()) throw InsufficientData(n, instances.size());
  std::vector<std::size_t> idx(instances.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots are the sample.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  std::vector<Instance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(instances[idx[i]]);
  return out;
}

std::vector<Instance> sample_per_dataset(const std::vector<Instance>& instances,
                                         std::size_t n_per_dataset,
                                         std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<Instance>> groups;
  for (const auto& inst : instances) {
    auto [it, inserted] = groups.try_emplace(inst.dataset);
    if (inserted) order.push_back(inst.dataset);
    it->second.push_back(inst);
  }
  std::vector<Instance> out;
  for (const auto& name : order) {
    auto part = sample_instances(groups[name], n_per_dataset,
                                 seed ^ fnv1a64(name));
    for (auto& inst : part) out.push_back(std::move(inst));
  }
  return out;
}

InstanceIndex index_by_id(const std::vector<Instance>& instances) {
  InstanceIndex idx;
  for (const auto& inst : instances) {
    if (!idx.emplace(inst.id, inst).second) {
      throw std::invalid_argument("duplicate instance id: " + inst.id);
    }
  }
  return idx;
}

}  // namespace tabreason::table
