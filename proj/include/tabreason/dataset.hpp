#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabreason/table.hpp"

namespace tabreason::table {

enum class TaskType { kQa, kFactVerification };

std::string to_string(TaskType t);
std::optional<TaskType> task_type_from_string(const std::string& s);

struct Instance {
  std::string id;
  std::string dataset;
  Table table;
  std::string question;
  std::vector<std::string> gold_answers;
  TaskType task_type = TaskType::kQa;
  // Opaque reference to a table image. Carried through, never opened.
  std::optional<std::string> image_ref;
};

class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& field,
              const std::string& detail)
      : Error("schema error at line " + std::to_string(line) + ", field '" +
              field + "': " + detail),
        line_(line),
        field_(field) {}
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class InsufficientData : public Error {
 public:
  InsufficientData(std::size_t requested, std::size_t available)
      : Error("requested " + std::to_string(requested) + " instances, only " +
              std::to_string(available) + " available") {}
};

/// Parses one JSONL object; `line` is used for error reporting only.
Instance instance_from_json(const nlohmann::json& j, std::size_t line = 0);
nlohmann::json instance_to_json(const Instance& inst);

std::vector<Instance> load_instances(const std::string& path);
std::vector<Instance> parse_instances(const std::string& jsonl);
std::string instances_to_jsonl(const std::vector<Instance>& instances);

/// Uniform sample without replacement, deterministic per seed.
std::vector<Instance> sample_instances(const std::vector<Instance>& instances,
                                       std::size_t n, std::uint64_t seed);

/// sample_instances applied to each dataset separately (datasets in order of
/// first appearance), concatenated.
std::vector<Instance> sample_per_dataset(const std::vector<Instance>& instances,
                                         std::size_t n_per_dataset,
                                         std::uint64_t seed);

using InstanceIndex = std::map<std::string, Instance>;
InstanceIndex index_by_id(const std::vector<Instance>& instances);

}  // namespace tabreason::table
