#include "tabreason/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <regex>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tabreason/rewards.hpp"

namespace tabreason::synth {

using table::Cell;
using table::Instance;
using table::Table;
using table::TaskType;

namespace {

constexpr const char* kKeyHeader = "name";
const std::vector<std::string> kNames = {
    "alice", "bob",   "carol", "dave", "erin",  "frank",
    "grace", "heidi", "ivan",  "judy", "mallory", "oscar"};
const std::vector<std::string> kColumns = {
    "score", "points", "goals", "wins", "laps", "votes", "sales", "hours"};

struct KindName {
  QuestionKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {QuestionKind::kLookup, "lookup"},
    {QuestionKind::kColumnSum, "column_sum"},
    {QuestionKind::kColumnMean, "column_mean"},
    {QuestionKind::kColumnMax, "column_max"},
    {QuestionKind::kColumnMin, "column_min"},
    {QuestionKind::kCountWhere, "count_where"},
    {QuestionKind::kCompareTwoCells, "compare_two_cells"},
    {QuestionKind::kFactVerify, "fact_verify"},
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

// Hundredths -> canonical decimal string ("1250" -> "12.5").
std::string from_hundredths(std::int64_t h) {
  return Decimal::from_parts(h, 2).to_string();
}

// Mean of integers rounded half-up to hundredths.
std::int64_t mean_hundredths(std::int64_t sum, std::int64_t n) {
  return (200 * sum + n) / (2 * n);
}

struct Grid {
  std::vector<std::string> keys;
  std::vector<std::string> cols;
  std::vector<std::vector<std::int64_t>> values;  // [row][numeric col]

  std::int64_t column_sum(std::size_t c) const {
    std::int64_t s = 0;
    for (const auto& r : values) s += r[c];
    return s;
  }
  std::int64_t column_max(std::size_t c) const {
    std::int64_t m = values[0][c];
    for (const auto& r : values) m = std::max(m, r[c]);
    return m;
  }
  std::int64_t column_min(std::size_t c) const {
    std::int64_t m = values[0][c];
    for (const auto& r : values) m = std::min(m, r[c]);
    return m;
  }
  std::int64_t count_above(std::size_t c, std::int64_t t) const {
    std::int64_t n = 0;
    for (const auto& r : values) n += r[c] > t ? 1 : 0;
    return n;
  }

  Table to_table() const {
    std::vector<std::string> headers{kKeyHeader};
    headers.insert(headers.end(), cols.begin(), cols.end());
    std::vector<std::vector<Cell>> rows;
    for (std::size_t r = 0; r < keys.size(); ++r) {
      std::vector<Cell> row{Cell::text(keys[r])};
      for (auto v : values[r]) row.push_back(Cell::number(Decimal::from_int(v)));
      rows.push_back(std::move(row));
    }
    return Table(std::move(headers), std::move(rows));
  }
};

// Picks up to kMaxDistractors entries of `pool` that differ from the gold
// and from each other under answer normalization.
std::vector<std::string> pick_candidates(const std::string& gold,
                                         std::vector<std::string> pool,
                                         Rng& rng, std::size_t* gold_index) {
  shuffle(pool, rng);
  std::vector<std::string> chosen{gold};
  for (const auto& p : pool) {
    if (chosen.size() > kMaxDistractors) break;
    const bool dup = std::any_of(chosen.begin(), chosen.end(),
                                 [&](const std::string& c) {
                                   return rewards::answer_matches(p, c);
                                 });
    if (!dup) chosen.push_back(p);
  }
  shuffle(chosen, rng);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (chosen[i] == gold) *gold_index = i;
  }
  return chosen;
}

std::vector<std::string> ints(std::initializer_list<std::int64_t> vs) {
  std::vector<std::string> out;
  for (auto v : vs) out.push_back(std::to_string(v));
  return out;
}

}  // namespace

std::string to_string(QuestionKind k) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == k) return kn.name;
  }
  throw std::logic_error("unknown QuestionKind");
}

std::optional<QuestionKind> kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames) {
    if (s == kn.name) return kn.kind;
  }
  return std::nullopt;
}

SyntheticTask generate_task(std::uint64_t seed, QuestionKind kind,
                            std::size_t n_rows, std::size_t n_cols) {
  if (n_rows < 2 || n_rows > 10 || n_cols < 2 || n_cols > 6) {
    throw std::invalid_argument("generate_task: need 2<=rows<=10, 2<=cols<=6");
  }
  Rng rng(seed);
  Grid g;
  g.keys = kNames;
  shuffle(g.keys, rng);
  g.keys.resize(n_rows);
  g.cols = kColumns;
  shuffle(g.cols, rng);
  g.cols.resize(n_cols - 1);
  g.values.assign(n_rows, std::vector<std::int64_t>(n_cols - 1));
  for (auto& row : g.values) {
    for (auto& v : row) v = rng.between(0, 99);
  }

  const std::size_t col = rng.below(g.cols.size());
  const std::size_t row = rng.below(n_rows);
  const std::string& header = g.cols[col];
  std::string question;
  std::string gold;
  std::vector<std::string> pool;

  // Values of the queried column and of the queried row, minus the gold cell.
  auto column_cells = [&] {
    std::vector<std::string> out;
    for (std::size_t r = 0; r < n_rows; ++r) {
      out.push_back(std::to_string(g.values[r][col]));
    }
    return out;
  };
  auto other_column_stats = [&](auto stat) {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < g.cols.size(); ++c) {
      if (c != col) out.push_back(stat(c));
    }
    return out;
  };
  auto append = [](std::vector<std::string>& dst,
                   const std::vector<std::string>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  };

  switch (kind) {
    case QuestionKind::kLookup: {
      const std::int64_t v = g.values[row][col];
      question = "What is the " + header + " of " + g.keys[row] + "?";
      gold = std::to_string(v);
      append(pool, column_cells());
      for (auto x : g.values[row]) pool.push_back(std::to_string(x));
      append(pool, ints({v + 1, v - 1, v + 10}));
      break;
    }
    case QuestionKind::kColumnSum: {
      const std::int64_t s = g.column_sum(col);
      question = "What is the sum of " + header + " across all rows?";
      gold = std::to_string(s);
      append(pool, other_column_stats(
                       [&](std::size_t c) { return std::to_string(g.column_sum(c)); }));
      append(pool, ints({s + 1, s - 1, s + 10, s - 10, s - g.values[row][col]}));
      append(pool, column_cells());
      break;
    }
    case QuestionKind::kColumnMean: {
      const auto n = static_cast<std::int64_t>(n_rows);
      const std::int64_t h = mean_hundredths(g.column_sum(col), n);
      question = "What is the mean of " + header + " across all rows?";
      gold = from_hundredths(h);
      append(pool, other_column_stats([&](std::size_t c) {
               return from_hundredths(mean_hundredths(g.column_sum(c), n));
             }));
      for (auto d : {100, -100, 50, -50, 1000}) pool.push_back(from_hundredths(h + d));
      pool.push_back(std::to_string(g.column_sum(col)));
      break;
    }
    case QuestionKind::kColumnMax:
    case QuestionKind::kColumnMin: {
      const bool is_max = kind == QuestionKind::kColumnMax;
      const std::int64_t m = is_max ? g.column_max(col) : g.column_min(col);
      question = std::string("What is the ") + (is_max ? "maximum " : "minimum ") +
                 header + " in the table?";
      gold = std::to_string(m);
      append(pool, column_cells());
      pool.push_back(std::to_string(is_max ? g.column_min(col) : g.column_max(col)));
      append(pool, other_column_stats([&](std::size_t c) {
               return std::to_string(is_max ? g.column_max(c) : g.column_min(c));
             }));
      append(pool, ints({m + 1, m - 1}));
      break;
    }
    case QuestionKind::kCountWhere: {
      const std::int64_t t = rng.between(10, 89);
      const std::int64_t c = g.count_above(col, t);
      question = "How many rows have " + header + " greater than " +
                 std::to_string(t) + "?";
      gold = std::to_string(c);
      const auto n = static_cast<std::int64_t>(n_rows);
      for (std::int64_t k = 0; k <= n; ++k) pool.push_back(std::to_string(k));
      append(pool, ints({c + 1, c + 2, c + 3, c + 4, c + 5}));
      break;
    }
    case QuestionKind::kCompareTwoCells: {
      std::size_t other = rng.below(n_rows - 1);
      if (other >= row) ++other;
      if (rng.bernoulli(0.25)) g.values[other][col] = g.values[row][col];
      const std::int64_t a = g.values[row][col];
      const std::int64_t b = g.values[other][col];
      question = "Who has the larger " + header + ", " + g.keys[row] + " or " +
                 g.keys[other] + "?";
      gold = a > b ? g.keys[row] : (b > a ? g.keys[other] : kTieAnswer);
      pool = {g.keys[row], g.keys[other], kTieAnswer};
      for (const auto& k : g.keys) pool.push_back(k);
      break;
    }
    case QuestionKind::kFactVerify: {
      const std::int64_t actual = g.values[row][col];
      std::int64_t claimed = actual;
      if (rng.bernoulli(0.5)) {
        std::int64_t delta = rng.between(1, 9);
        claimed = rng.bernoulli(0.5) ? actual + delta : actual - delta;
      }
      question = "True or false: the " + header + " of " + g.keys[row] +
                 " is " + std::to_string(claimed) + ".";
      gold = claimed == actual ? "true" : "false";
      pool = {"true", "false"};
      break;
    }
  }

  SyntheticTask task;
  task.kind = kind;
  task.candidates = pick_candidates(gold, std::move(pool), rng, &task.gold_index);
  const bool fv = kind == QuestionKind::kFactVerify;
  task.instance = Instance{
      .id = "syn-" + hex64(seed),
      .dataset = fv ? "synthetic_tfv" : "synthetic_qa",
      .table = g.to_table(),
      .question = std::move(question),
      .gold_answers = {gold},
      .task_type = fv ? TaskType::kFactVerification : TaskType::kQa,
      .image_ref = std::nullopt,
  };
  return task;
}

// The oracle deliberately re-derives everything from the rendered question
// and the table cells.
std::string oracle_answer(const SyntheticTask& task) {
  const Table& t = task.instance.table;
  const std::string& q = task.instance.question;

  auto column_of = [&](const std::string& header) -> std::size_t {
    for (std::size_t c = 0; c < t.num_cols(); ++c) {
      if (t.headers()[c] == header) return c;
    }
    throw std::runtime_error("oracle: no column '" + header + "'");
  };
  auto row_of = [&](const std::string& key) -> std::size_t {
    for (std::size_t r = 0; r < t.num_rows(); ++r) {
      if (t.at(r, 0).display() == key) return r;
    }
    throw std::runtime_error("oracle: no row '" + key + "'");
  };
  auto value = [&](std::size_t r, std::size_t c) {
    return t.at(r, c).as_number().unscaled();
  };
  auto match = [&](const char* pattern) {
    std::smatch m;
    if (!std::regex_match(q, m, std::regex(pattern))) {
      throw std::runtime_error("oracle: question does not parse: " + q);
    }
    return m;
  };

  switch (task.kind) {
    case QuestionKind::kLookup: {
      auto m = match(R"(What is the (\w+) of (\w+)\?)");
      return t.at(row_of(m[2]), column_of(m[1])).display();
    }
    case QuestionKind::kColumnSum:
    case QuestionKind::kColumnMean: {
      auto m = match(R"(What is the (sum|mean) of (\w+) across all rows\?)");
      const std::size_t c = column_of(m[2]);
      std::int64_t s = 0;
      for (std::size_t r = 0; r < t.num_rows(); ++r) s += value(r, c);
      if (m[1] == "sum") return std::to_string(s);
      // Long division to two places, half-up.
      const auto n = static_cast<std::int64_t>(t.num_rows());
      std::int64_t whole = s / n;
      std::int64_t rem = s % n;
      std::int64_t d1 = rem * 10 / n;
      rem = rem * 10 % n;
      std::int64_t d2 = rem * 10 / n;
      rem = rem * 10 % n;
      if (2 * rem >= n) ++d2;
      if (d2 == 10) { d2 = 0; ++d1; }
      if (d1 == 10) { d1 = 0; ++whole; }
      char buf[64];
      std::snprintf(buf, sizeof buf, "%lld.%lld%lld",
                    static_cast<long long>(whole), static_cast<long long>(d1),
                    static_cast<long long>(d2));
      std::string out = buf;
      while (out.back() == '0') out.pop_back();
      if (out.back() == '.') out.pop_back();
      return out;
    }
    case QuestionKind::kColumnMax:
    case QuestionKind::kColumnMin: {
      auto m = match(R"(What is the (maximum|minimum) (\w+) in the table\?)");
      const std::size_t c = column_of(m[2]);
      std::int64_t best = value(0, c);
      for (std::size_t r = 1; r < t.num_rows(); ++r) {
        best = m[1] == "maximum" ? std::max(best, value(r, c))
                                 : std::min(best, value(r, c));
      }
      return std::to_string(best);
    }
    case QuestionKind::kCountWhere: {
      auto m = match(R"(How many rows have (\w+) greater than (-?\d+)\?)");
      const std::size_t c = column_of(m[1]);
      const std::int64_t threshold = std::stoll(m[2]);
      std::int64_t n = 0;
      for (std::size_t r = 0; r < t.num_rows(); ++r) {
        if (value(r, c) > threshold) ++n;
      }
      return std::to_string(n);
    }
    case QuestionKind::kCompareTwoCells: {
      auto m = match(R"(Who has the larger (\w+), (\w+) or (\w+)\?)");
      const std::size_t c = column_of(m[1]);
      const std::int64_t a = value(row_of(m[2]), c);
      const std::int64_t b = value(row_of(m[3]), c);
      if (a == b) return kTieAnswer;
      return a > b ? m[2].str() : m[3].str();
    }
    case QuestionKind::kFactVerify: {
      auto m = match(R"(True or false: the (\w+) of (\w+) is (-?\d+)\.)");
      const std::int64_t actual = value(row_of(m[2]), column_of(m[1]));
      return actual == std::stoll(m[3]) ? "true" : "false";
    }
  }
  throw std::logic_error("oracle: unknown kind");
}

KindMix uniform_mix() {
  KindMix mix;
  for (auto k : kAllKinds) mix[k] = 1.0;
  return mix;
}

std::vector<SyntheticTask> make_suite(std::uint64_t seed, std::size_t n,
                                      const KindMix& mix) {
  double total = 0.0;
  for (const auto& [k, w] : mix) {
    if (w < 0.0) throw std::invalid_argument("make_suite: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("make_suite: zero weights");

  Rng rng(seed);
  std::vector<SyntheticTask> suite;
  suite.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    QuestionKind kind = mix.rbegin()->first;
    for (const auto& [k, w] : mix) {
      if (w > 0.0 && u < w) {
        kind = k;
        break;
      }
      u -= w;
    }
    const auto rows = static_cast<std::size_t>(rng.between(3, 10));
    const auto cols = static_cast<std::size_t>(rng.between(2, 6));
    SyntheticTask task = generate_task(rng.next_u64(), kind, rows, cols);
    char id[64];
    std::snprintf(id, sizeof id, "syn-%s-%05zu", hex64(seed).substr(8).c_str(), i);
    task.instance.id = id;
    suite.push_back(std::move(task));
  }
  return suite;
}

std::string candidates_to_jsonl(const std::vector<SyntheticTask>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    nlohmann::json j = nlohmann::json::object();
    j["id"] = t.instance.id;
    j["candidates"] = t.candidates;
    j["gold_index"] = t.gold_index;
    j["kind"] = to_string(t.kind);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string instances_to_jsonl(const std::vector<SyntheticTask>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    out += table::instance_to_json(t.instance).dump();
    out += '\n';
  }
  return out;
}

std::vector<SyntheticTask> join_suite(
    const std::vector<table::Instance>& instances,
    const std::string& candidates_jsonl) {
  std::map<std::string, nlohmann::json> sidecar;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < candidates_jsonl.size()) {
    std::size_t nl = candidates_jsonl.find('\n', start);
    if (nl == std::string::npos) nl = candidates_jsonl.size();
    ++line_no;
    const std::string line = trim(candidates_jsonl.substr(start, nl - start));
    start = nl + 1;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw table::SchemaError(line_no, "<json>", e.what());
    }
    if (!j.contains("id") || !j["id"].is_string()) {
      throw table::SchemaError(line_no, "id", "missing");
    }
    std::string id = j["id"].get<std::string>();
    sidecar[std::move(id)] = std::move(j);
  }

  std::vector<SyntheticTask> out;
  for (const auto& inst : instances) {
    auto it = sidecar.find(inst.id);
    if (it == sidecar.end()) {
      throw std::invalid_argument("no candidates for instance " + inst.id);
    }
    const auto& j = it->second;
    SyntheticTask task;
    task.instance = inst;
    const auto kind = kind_from_string(j.value("kind", ""));
    if (!kind) throw std::invalid_argument("bad kind for " + inst.id);
    task.kind = *kind;
    task.candidates = j.at("candidates").get<std::vector<std::string>>();
    task.gold_index = j.at("gold_index").get<std::size_t>();
    if (task.candidates.size() < 2 || task.gold_index >= task.candidates.size()) {
      throw std::invalid_argument("bad candidate set for " + inst.id);
    }
    out.push_back(std::move(task));
  }
  return out;
}

std::vector<SyntheticTask> load_suite(const std::string& instances_path,
                                      const std::string& candidates_path) {
  return join_suite(table::load_instances(instances_path),
                    read_file(candidates_path));
}

}  // namespace tabreason::synth
