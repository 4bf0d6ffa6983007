#include "tabreason/config.hpp"

#include <charconv>
#include <limits>
#include <sstream>

namespace tabreason::config {

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string unquote(const std::string& raw, const std::string& key) {
  if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') return raw;
  std::string out;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    if (raw[i] == '\\') {
      if (i + 2 >= raw.size()) throw ConfigError(key + ": dangling escape");
      ++i;
    }
    out += raw[i];
  }
  return out;
}

template <typename T>
T parse_uint(const std::string& v, const std::string& key) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& v, const std::string& key) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string join_set(const std::set<std::string>& s) {
  std::string out;
  for (const auto& x : s) {
    if (!out.empty()) out += ' ';
    out += x;
  }
  return out;
}

std::set<std::string> split_set(const std::string& v) {
  std::set<std::string> out;
  std::istringstream in(v);
  for (std::string w; in >> w;) out.insert(w);
  return out;
}

// Field binders. Each returns an Entry for a member reached through `f`.
template <typename F>
Entry str(std::string key, std::string doc, F f) {
  return {std::move(key), std::move(doc),
          [f](const PipelineConfig& c) { return quote(f(const_cast<PipelineConfig&>(c))); },
          [f](PipelineConfig& c, const std::string& v) { f(c) = v; }};
}

template <typename F>
Entry uint(std::string key, std::string doc, F f) {
  return {std::move(key), std::move(doc),
          [f](const PipelineConfig& c) {
            return std::to_string(f(const_cast<PipelineConfig&>(c)));
          },
          [f, key](PipelineConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(f(c))>;
            f(c) = parse_uint<T>(v, key);
          }};
}

template <typename F>
Entry real(std::string key, std::string doc, F f) {
  return {std::move(key), std::move(doc),
          [f](const PipelineConfig& c) {
            return format_double(f(const_cast<PipelineConfig&>(c)));
          },
          [f, key](PipelineConfig& c, const std::string& v) { f(c) = parse_double(v, key); }};
}

template <typename F>
Entry boolean(std::string key, std::string doc, F f) {
  return {std::move(key), std::move(doc),
          [f](const PipelineConfig& c) {
            return std::string(f(const_cast<PipelineConfig&>(c)) ? "true" : "false");
          },
          [f, key](PipelineConfig& c, const std::string& v) { f(c) = parse_bool(v, key); }};
}

template <typename F>
Entry millis(std::string key, std::string doc, F f) {
  return {std::move(key), std::move(doc),
          [f](const PipelineConfig& c) {
            return std::to_string(f(const_cast<PipelineConfig&>(c)).count());
          },
          [f, key](PipelineConfig& c, const std::string& v) {
            f(c) = std::chrono::milliseconds(parse_uint<std::int64_t>(v, key));
          }};
}

void client_entries(std::vector<Entry>& out, const std::string& sec,
                    ClientSection PipelineConfig::*member) {
  auto s = [member](PipelineConfig& c) -> ClientSection& { return c.*member; };
  out.push_back(str(sec + ".backend", "mock or http",
                    [s](PipelineConfig& c) -> auto& { return s(c).backend; }));
  out.push_back(str(sec + ".endpoint_url", "base URL of an OpenAI-compatible server",
                    [s](PipelineConfig& c) -> auto& { return s(c).client.endpoint_url; }));
  out.push_back(str(sec + ".api_key_env_var", "environment variable holding the API key",
                    [s](PipelineConfig& c) -> auto& { return s(c).client.api_key_env_var; }));
  out.push_back(str(sec + ".model", "model name sent with each request",
                    [s](PipelineConfig& c) -> auto& { return s(c).model.model; }));
  out.push_back(real(sec + ".temperature", "sampling temperature",
                     [s](PipelineConfig& c) -> auto& { return s(c).model.temperature; }));
  out.push_back(uint(sec + ".max_tokens", "completion token cap",
                     [s](PipelineConfig& c) -> auto& { return s(c).model.max_tokens; }));
  out.push_back(millis(sec + ".timeout_ms", "per-request timeout",
                       [s](PipelineConfig& c) -> auto& { return s(c).client.timeout; }));
  out.push_back(uint(sec + ".max_retries", "retries after a transient failure",
                     [s](PipelineConfig& c) -> auto& { return s(c).client.max_retries; }));
  out.push_back(uint(sec + ".max_in_flight", "concurrent request cap",
                     [s](PipelineConfig& c) -> auto& { return s(c).client.max_in_flight; }));
  out.push_back(millis(sec + ".backoff_ms", "first retry delay, doubled per attempt",
                       [s](PipelineConfig& c) -> auto& { return s(c).client.backoff_initial; }));
}

std::vector<Entry> build_entries() {
  using C = PipelineConfig;
  std::vector<Entry> e;
  e.push_back(str("data.instances", "instance JSONL used when --in/--instances is absent",
                  [](C& c) -> auto& { return c.instances_path; }));
  e.push_back(uint("data.n_per_dataset", "instances sampled per dataset (0 = all)",
                   [](C& c) -> auto& { return c.n_per_dataset; }));
  e.push_back(uint("data.seed", "sampling seed",
                   [](C& c) -> auto& { return c.data_seed; }));

  client_entries(e, "generator", &C::generator);
  client_entries(e, "judge", &C::judge);
  e.push_back(boolean("judge.filter_traces", "run the coherence judge on traces",
                      [](C& c) -> auto& { return c.judge_traces; }));

  e.push_back(uint("mock.seed", "seed for the mock client",
                   [](C& c) -> auto& { return c.mock_seed; }));
  e.push_back(real("mock.consistency_rate", "probability a mock trace reaches the gold",
                   [](C& c) -> auto& { return c.mock.consistency_rate; }));
  e.push_back(real("mock.verbosity_rate", "probability a mock trace is over length",
                   [](C& c) -> auto& { return c.mock.verbosity_rate; }));
  e.push_back(real("mock.judge_agree_rate", "probability the mock judge agrees with the rule",
                   [](C& c) -> auto& { return c.mock.judge_agree_rate; }));
  e.push_back(uint("mock.verbose_tokens", "length of an over-length mock trace",
                   [](C& c) -> auto& { return c.mock.verbose_tokens; }));

  e.push_back(uint("filter.max_tokens", "reasoning token limit",
                   [](C& c) -> auto& { return c.filter.max_tokens; }));
  e.push_back(uint("filter.judge_retry_rounds", "extra passes for failed judge calls",
                   [](C& c) -> auto& { return c.filter.judge_retry_rounds; }));
  e.push_back(uint("filter.generation_retries", "regenerations after a rejection",
                   [](C& c) -> auto& { return c.generation_retries; }));

  e.push_back(real("match.numeric_rel_tol", "relative tolerance for numeric answers",
                   [](C& c) -> auto& { return c.match.numeric_rel_tol; }));
  e.push_back(boolean("match.case_insensitive", "fold case before comparing",
                      [](C& c) -> auto& { return c.match.case_insensitive; }));
  e.push_back(str("match.multi_answer_separator", "separator between answer parts",
                  [](C& c) -> auto& { return c.match.multi_answer_separator; }));
  e.push_back(str("match.edge_punctuation", "characters trimmed from part edges",
                  [](C& c) -> auto& { return c.match.edge_punctuation; }));
  e.push_back({"match.strip_chars", "space-separated strings removed before comparing",
               [](const C& c) { return quote(join_set(c.match.strip_chars)); },
               [](C& c, const std::string& v) { c.match.strip_chars = split_set(v); }});

  e.push_back(real("reward.accuracy_weight", "weight of the accuracy reward",
                   [](C& c) -> auto& { return c.weights.accuracy; }));
  e.push_back(real("reward.format_weight", "weight of the format reward",
                   [](C& c) -> auto& { return c.weights.format; }));

  e.push_back(uint("grpo.group_size", "responses sampled per question",
                   [](C& c) -> auto& { return c.grpo.group_size; }));
  e.push_back(real("grpo.clip_eps", "ratio clip range",
                   [](C& c) -> auto& { return c.grpo.clip_eps; }));
  e.push_back(real("grpo.kl_beta", "KL penalty coefficient",
                   [](C& c) -> auto& { return c.grpo.kl_beta; }));
  e.push_back(real("grpo.learning_rate", "step size",
                   [](C& c) -> auto& { return c.grpo.learning_rate; }));
  e.push_back(uint("grpo.iterations", "policy updates",
                   [](C& c) -> auto& { return c.grpo.iterations; }));
  e.push_back(uint("grpo.batch_size", "questions per update",
                   [](C& c) -> auto& { return c.grpo.batch_size; }));
  e.push_back(real("grpo.std_epsilon", "groups with smaller reward std get zero advantage",
                   [](C& c) -> auto& { return c.grpo.std_epsilon; }));
  e.push_back(uint("grpo.seed", "sampling seed",
                   [](C& c) -> auto& { return c.grpo.seed; }));

  e.push_back(real("sft.learning_rate", "supervised step size",
                   [](C& c) -> auto& { return c.sft_lr; }));
  e.push_back(uint("sft.epochs", "full-batch supervised steps",
                   [](C& c) -> auto& { return c.sft_epochs; }));

  e.push_back(uint("policy.dim", "hashed feature dimension",
                   [](C& c) -> auto& { return c.policy_dim; }));

  e.push_back(str("output.dir", "default output directory",
                  [](C& c) -> auto& { return c.output_dir; }));
  return e;
}

const Entry* find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

void set_key(PipelineConfig& cfg, const std::string& key, const std::string& raw) {
  const Entry* e = find_entry(key);
  if (e == nullptr) throw ConfigError("unknown config key: " + key);
  e->set(cfg, unquote(raw, key));
}

}  // namespace

const std::vector<Entry>& entries() {
  static const std::vector<Entry> all = build_entries();
  return all;
}

void PipelineConfig::finalize() {
  for (const auto* sec : {&generator, &judge}) {
    if (sec->backend != "mock" && sec->backend != "http") {
      throw ConfigError("backend must be mock or http, got '" + sec->backend + "'");
    }
  }
  if (policy_dim == 0) throw ConfigError("policy.dim must be positive");
  if (sft_lr <= 0) throw ConfigError("sft.learning_rate must be positive");
  grpo.match = match;
  grpo.weights = weights;
  filter.match = match;
  try {
    match.validate();
    grpo.validate();
    mock.validate();
    generator.client.validate();
    judge.client.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

void apply_text(PipelineConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string section;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    // A '#' inside a quoted value is literal.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '\\' && quoted) {
        ++i;
      } else if (line[i] == '"') {
        quoted = !quoted;
      } else if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string name = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string key = section.empty() ? name : section + "." + name;
    try {
      set_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_file(PipelineConfig& cfg, const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  apply_text(cfg, text);
}

void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string dump(const PipelineConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& e : entries()) {
    const auto dot = e.key.find('.');
    const std::string sec = e.key.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += e.key.substr(dot + 1) + " = " + e.get(cfg) + "\n";
  }
  return out;
}

}  // namespace tabreason::config
