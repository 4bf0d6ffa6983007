#include "tabreason/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tabreason/rewards.hpp"

namespace tabreason::policy {

using synth::QuestionKind;
using synth::SyntheticTask;

SparseVec SparseVec::from_unsorted(std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.first < b.first; });
  SparseVec out;
  for (const auto& e : entries) {
    if (!out.entries_.empty() && out.entries_.back().first == e.first) {
      out.entries_.back().second += e.second;
    } else {
      out.entries_.push_back(e);
    }
  }
  std::erase_if(out.entries_, [](const Entry& e) { return e.second == 0.0; });
  return out;
}

double SparseVec::at(std::uint32_t bucket) const {
  auto it = std::lower_bound(
      entries_.begin(), entries_.end(), bucket,
      [](const Entry& e, std::uint32_t b) { return e.first < b; });
  return (it != entries_.end() && it->first == bucket) ? it->second : 0.0;
}

double SparseVec::dot(std::span<const double> dense) const {
  double s = 0.0;
  for (const auto& [i, v] : entries_) s += dense[i] * v;
  return s;
}

void SparseVec::axpy_into(double a, std::span<double> dense) const {
  for (const auto& [i, v] : entries_) dense[i] += a * v;
}

// ---------------------------------------------------------------------------
// Features

namespace {

struct QuestionView {
  std::set<std::string> tokens;
  std::vector<std::string> ordered_tokens;
  std::vector<std::int64_t> numbers;
  std::vector<std::size_t> mentioned_rows;
  std::vector<std::size_t> mentioned_cols;  // numeric columns only
  bool has(const std::string& t) const { return tokens.count(t) > 0; }
  bool has_phrase(const std::string& a, const std::string& b) const {
    for (std::size_t i = 0; i + 1 < ordered_tokens.size(); ++i) {
      if (ordered_tokens[i] == a && ordered_tokens[i + 1] == b) return true;
    }
    return false;
  }
};

QuestionView analyze(const SyntheticTask& task) {
  QuestionView v;
  const std::string q = to_lower(task.instance.question);
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    v.tokens.insert(cur);
    v.ordered_tokens.push_back(cur);
    if (auto d = Decimal::parse(cur); d && d->is_integer()) {
      v.numbers.push_back(d->unscaled());
    }
    cur.clear();
  };
  for (std::size_t i = 0; i < q.size(); ++i) {
    const char c = q[i];
    const bool alnum = std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    const bool minus = c == '-' && cur.empty() && i + 1 < q.size() &&
                       std::isdigit(static_cast<unsigned char>(q[i + 1]));
    if (alnum || minus) {
      cur += c;
    } else {
      flush();
    }
  }
  flush();

  const auto& t = task.instance.table;
  for (std::size_t r = 0; r < t.num_rows(); ++r) {
    const auto& key = t.at(r, 0);
    if (key.is_text() && v.has(to_lower(key.as_text()))) {
      v.mentioned_rows.push_back(r);
    }
  }
  for (std::size_t c = 0; c < t.num_cols(); ++c) {
    if (!v.has(to_lower(t.headers()[c]))) continue;
    bool numeric = t.num_rows() > 0;
    for (std::size_t r = 0; r < t.num_rows(); ++r) {
      numeric = numeric && t.at(r, c).is_number();
    }
    if (numeric) v.mentioned_cols.push_back(c);
  }
  return v;
}

std::optional<Decimal> cell_number(const table::Table& t, std::size_t r,
                                   std::size_t c) {
  const auto& cell = t.at(r, c);
  if (cell.is_number()) return cell.as_number();
  return std::nullopt;
}

enum class AnswerType { kNumber, kBoolean, kName };

AnswerType answer_type_of(const std::string& candidate) {
  const auto canon = rewards::normalize_answer(candidate);
  if (canon.parts.size() == 1) {
    if (std::holds_alternative<double>(canon.parts[0])) return AnswerType::kNumber;
    if (std::holds_alternative<rewards::TruthClass>(canon.parts[0])) {
      return AnswerType::kBoolean;
    }
  }
  return AnswerType::kName;
}

AnswerType expected_type(QuestionKind k) {
  switch (k) {
    case QuestionKind::kCompareTwoCells:
      return AnswerType::kName;
    case QuestionKind::kFactVerify:
      return AnswerType::kBoolean;
    default:
      return AnswerType::kNumber;
  }
}

bool numeric_equals(const std::string& candidate, const std::string& value) {
  return rewards::answer_matches(candidate, value);
}

std::vector<std::string> names_for(const SyntheticTask& task,
                                   const QuestionView& qv,
                                   std::size_t candidate_index) {
  const std::string& cand = task.candidates.at(candidate_index);
  const auto& t = task.instance.table;
  std::vector<std::string> names;
  names.push_back("rank:" + std::to_string(candidate_index));

  bool in_table = false;
  for (std::size_t r = 0; r < t.num_rows() && !in_table; ++r) {
    for (std::size_t c = 0; c < t.num_cols() && !in_table; ++c) {
      const std::string d = t.at(r, c).display();
      in_table = !d.empty() && rewards::answer_matches(cand, d);
    }
  }
  if (in_table) names.push_back("in_table");

  if (answer_type_of(cand) == expected_type(task.kind)) {
    names.push_back("type_match");
  }

  // Aggregates over columns named in the question, gated on the op keyword.
  const bool kw_sum = qv.has("sum") || qv.has("total");
  const bool kw_mean = qv.has("mean") || qv.has("average");
  const bool kw_max = qv.has("maximum") || qv.has("largest") || qv.has("highest");
  const bool kw_min = qv.has("minimum") || qv.has("smallest") || qv.has("lowest");
  const bool kw_count = qv.has_phrase("how", "many");
  for (std::size_t c : qv.mentioned_cols) {
    std::int64_t sum = 0;
    std::int64_t mx = std::numeric_limits<std::int64_t>::min();
    std::int64_t mn = std::numeric_limits<std::int64_t>::max();
    bool integral = true;
    for (std::size_t r = 0; r < t.num_rows(); ++r) {
      const auto d = cell_number(t, r, c);
      integral = integral && d && d->is_integer();
      if (!integral) break;
      sum += d->unscaled();
      mx = std::max(mx, d->unscaled());
      mn = std::min(mn, d->unscaled());
    }
    if (!integral || t.num_rows() == 0) continue;
    const auto n = static_cast<std::int64_t>(t.num_rows());
    if (kw_sum && numeric_equals(cand, std::to_string(sum))) {
      names.push_back("agg:sum");
    }
    if (kw_mean) {
      const std::int64_t h = (200 * sum + n) / (2 * n);
      if (numeric_equals(cand, Decimal::from_parts(h, 2).to_string())) {
        names.push_back("agg:mean");
      }
    }
    if (kw_max && numeric_equals(cand, std::to_string(mx))) {
      names.push_back("agg:max");
    }
    if (kw_min && numeric_equals(cand, std::to_string(mn))) {
      names.push_back("agg:min");
    }
    if (kw_count) {
      for (auto threshold : qv.numbers) {
        std::int64_t k = 0;
        for (std::size_t r = 0; r < t.num_rows(); ++r) {
          if (cell_number(t, r, c)->unscaled() > threshold) ++k;
        }
        if (numeric_equals(cand, std::to_string(k))) {
          names.push_back("agg:count");
          break;
        }
      }
    }
  }

  // Cells addressed by a mentioned row and a mentioned column.
  bool addressed = false;
  for (std::size_t r : qv.mentioned_rows) {
    for (std::size_t c : qv.mentioned_cols) {
      addressed = addressed ||
                  rewards::answer_matches(cand, t.at(r, c).display());
    }
  }
  if (addressed) names.push_back("cell_at_mention");

  if (qv.has("larger") && qv.mentioned_rows.size() == 2 &&
      !qv.mentioned_cols.empty()) {
    const std::size_t c = qv.mentioned_cols.front();
    const std::size_t r0 = qv.mentioned_rows[0];
    const std::size_t r1 = qv.mentioned_rows[1];
    const double a = cell_number(t, r0, c).value_or(Decimal()).to_double();
    const double b = cell_number(t, r1, c).value_or(Decimal()).to_double();
    const std::string lc = to_lower(trim(cand));
    if (a == b && lc == synth::kTieAnswer) names.push_back("cmp_tie");
    if (a > b && lc == to_lower(t.at(r0, 0).display())) names.push_back("cmp_winner");
    if (b > a && lc == to_lower(t.at(r1, 0).display())) names.push_back("cmp_winner");
  }

  if (answer_type_of(cand) == AnswerType::kBoolean &&
      qv.mentioned_rows.size() == 1 && qv.mentioned_cols.size() == 1 &&
      !qv.numbers.empty()) {
    const auto actual =
        cell_number(t, qv.mentioned_rows[0], qv.mentioned_cols[0]);
    const bool holds = actual && actual->is_integer() &&
                       actual->unscaled() == qv.numbers.back();
    const bool says_true =
        rewards::answer_matches(cand, "true");
    if (holds == says_true) names.push_back("claim_consistent");
  }
  return names;
}

}  // namespace

std::uint32_t feature_bucket(std::string_view name, std::uint32_t dim) {
  return static_cast<std::uint32_t>(fnv1a64(name) % dim);
}

std::vector<std::string> feature_names(const SyntheticTask& task,
                                       std::size_t candidate_index) {
  if (candidate_index >= task.candidates.size()) {
    throw std::out_of_range("candidate index");
  }
  return names_for(task, analyze(task), candidate_index);
}

namespace {
SparseVec hash_names(const std::vector<std::string>& names, std::uint32_t dim) {
  std::vector<SparseVec::Entry> entries;
  entries.reserve(names.size());
  for (const auto& n : names) entries.emplace_back(feature_bucket(n, dim), 1.0);
  return SparseVec::from_unsorted(std::move(entries));
}
}  // namespace

SparseVec featurize(const SyntheticTask& task, std::size_t candidate_index,
                    std::uint32_t dim) {
  return hash_names(feature_names(task, candidate_index), dim);
}

FeaturizedTask featurize_task(const SyntheticTask& task, std::uint32_t dim) {
  const QuestionView qv = analyze(task);
  FeaturizedTask ft;
  ft.task = &task;
  for (std::size_t k = 0; k < task.candidates.size(); ++k) {
    ft.features.push_back(hash_names(names_for(task, qv, k), dim));
  }
  return ft;
}

// ---------------------------------------------------------------------------
// Responses

std::string render_response(const SyntheticTask& task,
                            std::size_t candidate_index, bool well_formed) {
  const std::string& cand = task.candidates.at(candidate_index);
  std::string text = "<think>Reading the table to answer: " +
                     task.instance.question + " The answer is " + cand +
                     ".</think><answer>" + cand;
  if (well_formed) text += "</answer>";
  return text;
}

Response make_response(const SyntheticTask& task, std::size_t candidate_index,
                       bool well_formed) {
  return {candidate_index, well_formed,
          render_response(task, candidate_index, well_formed)};
}

// ---------------------------------------------------------------------------
// Gradients

void GradientAccumulator::add(const Gradient& g, double scale) {
  add_weights(g.weights, scale);
  format_ += scale * g.format;
}

void GradientAccumulator::add_weights(const SparseVec& v, double scale) {
  for (const auto& [i, x] : v.entries()) entries_.emplace_back(i, scale * x);
}

Gradient GradientAccumulator::finish(double scale) const {
  // Stable sort keeps insertion order within a bucket, so the summation
  // order is fixed by the order of add() calls.
  auto entries = entries_;
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<SparseVec::Entry> merged;
  for (const auto& e : entries) {
    if (!merged.empty() && merged.back().first == e.first) {
      merged.back().second += e.second;
    } else {
      merged.push_back(e);
    }
  }
  for (auto& e : merged) e.second *= scale;
  return {SparseVec::from_unsorted(std::move(merged)), format_ * scale};
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------
// Policy

LinearSoftmaxPolicy::LinearSoftmaxPolicy(std::uint32_t dim)
    : weights_(dim, 0.0) {
  if (dim == 0) throw std::invalid_argument("policy dimension must be > 0");
}

std::vector<double> LinearSoftmaxPolicy::scores(const FeaturizedTask& ft) const {
  std::vector<double> s;
  s.reserve(ft.features.size());
  for (const auto& f : ft.features) s.push_back(f.dot(weights_));
  return s;
}

std::vector<double> LinearSoftmaxPolicy::candidate_probs(
    const FeaturizedTask& ft) const {
  std::vector<double> s = scores(ft);
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (auto& x : s) {
    x = std::exp(x - mx);
    z += x;
  }
  for (auto& x : s) x /= z;
  return s;
}

double LinearSoftmaxPolicy::logp(const FeaturizedTask& ft,
                                 const Response& r) const {
  const std::vector<double> s = scores(ft);
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double x : s) z += std::exp(x - mx);
  const double log_softmax = s.at(r.candidate_index) - mx - std::log(z);
  const double fmt = r.well_formed ? log_sigmoid(format_logit_)
                                   : log_sigmoid(-format_logit_);
  return log_softmax + fmt;
}

Gradient LinearSoftmaxPolicy::grad_logp(const FeaturizedTask& ft,
                                        const Response& r) const {
  const std::vector<double> p = candidate_probs(ft);
  GradientAccumulator acc;
  acc.add_weights(ft.features.at(r.candidate_index), 1.0);
  for (std::size_t k = 0; k < p.size(); ++k) acc.add_weights(ft.features[k], -p[k]);
  const double sb = sigmoid(format_logit_);
  acc.add_format(r.well_formed ? 1.0 - sb : -sb);
  return acc.finish();
}

void LinearSoftmaxPolicy::apply(const Gradient& g, double step) {
  g.weights.axpy_into(step, weights_);
  format_logit_ += step * g.format;
}

std::string LinearSoftmaxPolicy::serialize() const {
  nlohmann::json j = nlohmann::json::object();
  j["version"] = 1;
  j["dim"] = dim();
  j["format_logit"] = format_logit_;
  nlohmann::json w = nlohmann::json::array();
  for (std::uint32_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i] != 0.0) w.push_back({i, weights_[i]});
  }
  j["weights"] = std::move(w);
  return j.dump() + "\n";
}

LinearSoftmaxPolicy LinearSoftmaxPolicy::deserialize(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("version").get<int>() != 1) {
    throw Error("unsupported policy checkpoint version");
  }
  LinearSoftmaxPolicy p(j.at("dim").get<std::uint32_t>());
  p.format_logit_ = j.at("format_logit").get<double>();
  for (const auto& e : j.at("weights")) {
    const auto i = e.at(0).get<std::uint32_t>();
    if (i >= p.weights_.size()) throw Error("checkpoint bucket out of range");
    p.weights_[i] = e.at(1).get<double>();
  }
  for (double w : p.weights_) {
    if (!std::isfinite(w)) throw Error("non-finite weight in checkpoint");
  }
  if (!std::isfinite(p.format_logit_)) throw Error("non-finite format logit");
  return p;
}

double logp(const LinearSoftmaxPolicy& p, const SyntheticTask& task,
            const Response& r) {
  return p.logp(featurize_task(task, p.dim()), r);
}

Gradient grad_logp(const LinearSoftmaxPolicy& p, const SyntheticTask& task,
                   const Response& r) {
  return p.grad_logp(featurize_task(task, p.dim()), r);
}

std::vector<SampledResponse> sample_group(const LinearSoftmaxPolicy& p,
                                          const FeaturizedTask& ft,
                                          std::size_t group_size, Rng& rng) {
  if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
  const std::vector<double> probs = p.candidate_probs(ft);
  const double p_fmt = sigmoid(p.format_logit());
  std::vector<SampledResponse> out;
  out.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cdf = probs[0];
    while (u >= cdf && k + 1 < probs.size()) cdf += probs[++k];
    const bool wf = rng.uniform() < p_fmt;
    Response r = make_response(*ft.task, k, wf);
    const double lp = p.logp(ft, r);
    out.push_back({std::move(r), lp});
  }
  return out;
}

Response greedy_response(const LinearSoftmaxPolicy& p, const FeaturizedTask& ft) {
  const std::vector<double> s = p.scores(ft);
  std::size_t best = 0;
  for (std::size_t k = 1; k < s.size(); ++k) {
    if (s[k] > s[best]) best = k;
  }
  return make_response(*ft.task, best, sigmoid(p.format_logit()) >= 0.5);
}

double sft_loss(const LinearSoftmaxPolicy& p,
                std::span<const SftExample> examples) {
  double total = 0.0;
  for (const auto& ex : examples) {
    total -= p.logp(*ex.task, Response{ex.gold_index, true, {}});
  }
  return total / static_cast<double>(examples.size());
}

SftReport sft_fit(LinearSoftmaxPolicy& p, std::span<const SftExample> examples,
                  double lr, std::size_t epochs) {
  if (examples.empty()) throw std::invalid_argument("sft_fit: no examples");
  if (!(lr > 0.0)) throw std::invalid_argument("sft_fit: lr must be > 0");
  SftReport report;
  const double inv_n = 1.0 / static_cast<double>(examples.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    report.loss.push_back(sft_loss(p, examples));
    GradientAccumulator acc;
    for (const auto& ex : examples) {
      acc.add(p.grad_logp(*ex.task, Response{ex.gold_index, true, {}}), inv_n);
    }
    p.apply(acc.finish(), lr);
  }
  report.loss.push_back(sft_loss(p, examples));
  return report;
}

}  // namespace tabreason::policy
