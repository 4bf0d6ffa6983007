#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tabreason/common.hpp"
#include "tabreason/synthetic.hpp"

namespace tabreason::policy {

inline constexpr std::uint32_t kDefaultDim = 65536;

/// Sorted (bucket, value) pairs with unique buckets.
class SparseVec {
 public:
  using Entry = std::pair<std::uint32_t, double>;

  SparseVec() = default;
  /// Sorts and sums duplicate buckets; zeros are dropped.
  static SparseVec from_unsorted(std::vector<Entry> entries);

  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  double at(std::uint32_t bucket) const;

  double dot(std::span<const double> dense) const;
  void axpy_into(double a, std::span<double> dense) const;

  friend bool operator==(const SparseVec&, const SparseVec&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Named features before hashing, for inspection and tests.
std::vector<std::string> feature_names(const synth::SyntheticTask& task,
                                       std::size_t candidate_index);

/// Hashes a feature name into [0, dim) with FNV-1a 64.
std::uint32_t feature_bucket(std::string_view name, std::uint32_t dim);

/// Binary features of one (task, candidate) pair, hashed into `dim` buckets.
/// Reads the question, table and candidate strings; never the gold index.
SparseVec featurize(const synth::SyntheticTask& task,
                    std::size_t candidate_index,
                    std::uint32_t dim = kDefaultDim);

/// All candidates of a task featurized once, plus what rendering needs.
struct FeaturizedTask {
  const synth::SyntheticTask* task = nullptr;
  std::vector<SparseVec> features;

  std::size_t num_candidates() const { return features.size(); }
};

FeaturizedTask featurize_task(const synth::SyntheticTask& task,
                              std::uint32_t dim = kDefaultDim);

struct Response {
  std::size_t candidate_index = 0;
  bool well_formed = true;
  std::string text;

  friend bool operator==(const Response&, const Response&) = default;
};

/// "<think>...</think><answer>c</answer>", or with the closing </answer>
/// dropped when malformed.
std::string render_response(const synth::SyntheticTask& task,
                            std::size_t candidate_index, bool well_formed);
Response make_response(const synth::SyntheticTask& task,
                       std::size_t candidate_index, bool well_formed);

/// Gradient of a scalar with respect to (weights, format_logit).
struct Gradient {
  SparseVec weights;
  double format = 0.0;
};

/// Accumulates scaled gradients; result is independent of insertion order
/// up to floating-point summation order.
class GradientAccumulator {
 public:
  void add(const Gradient& g, double scale);
  void add_weights(const SparseVec& v, double scale);
  void add_format(double v) { format_ += v; }
  Gradient finish(double scale = 1.0) const;

 private:
  std::vector<SparseVec::Entry> entries_;
  double format_ = 0.0;
};

double sigmoid(double x);
double log_sigmoid(double x);

class LinearSoftmaxPolicy {
 public:
  explicit LinearSoftmaxPolicy(std::uint32_t dim = kDefaultDim);

  std::uint32_t dim() const { return static_cast<std::uint32_t>(weights_.size()); }
  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_weights() { return weights_; }
  double format_logit() const { return format_logit_; }
  void set_format_logit(double b) { format_logit_ = b; }

  std::vector<double> scores(const FeaturizedTask& ft) const;
  std::vector<double> candidate_probs(const FeaturizedTask& ft) const;

  double logp(const FeaturizedTask& ft, const Response& r) const;
  Gradient grad_logp(const FeaturizedTask& ft, const Response& r) const;

  /// theta <- theta + step * g
  void apply(const Gradient& g, double step);

  std::string serialize() const;
  static LinearSoftmaxPolicy deserialize(const std::string& text);

  friend bool operator==(const LinearSoftmaxPolicy&,
                         const LinearSoftmaxPolicy&) = default;

 private:
  std::vector<double> weights_;
  double format_logit_ = 0.0;
};

// Convenience overloads that featurize on the fly.
double logp(const LinearSoftmaxPolicy& p, const synth::SyntheticTask& task,
            const Response& r);
Gradient grad_logp(const LinearSoftmaxPolicy& p,
                   const synth::SyntheticTask& task, const Response& r);

struct SampledResponse {
  Response response;
  double logp = 0.0;
};

std::vector<SampledResponse> sample_group(const LinearSoftmaxPolicy& p,
                                          const FeaturizedTask& ft,
                                          std::size_t group_size, Rng& rng);

/// Argmax candidate (lowest index on ties), well-formed iff sigmoid(b) >= 0.5.
Response greedy_response(const LinearSoftmaxPolicy& p, const FeaturizedTask& ft);

struct SftExample {
  const FeaturizedTask* task;
  std::size_t gold_index;
};

struct SftReport {
  // Mean negative log-likelihood before each epoch, plus the final value.
  std::vector<double> loss;
};

/// Full-batch gradient ascent on the mean of
/// log softmax(scores)[gold] + log sigmoid(b); one step per epoch.
SftReport sft_fit(LinearSoftmaxPolicy& p, std::span<const SftExample> examples,
                  double lr, std::size_t epochs);

double sft_loss(const LinearSoftmaxPolicy& p,
                std::span<const SftExample> examples);

}  // namespace tabreason::policy
