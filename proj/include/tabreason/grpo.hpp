#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabreason/policy.hpp"
#include "tabreason/rewards.hpp"

namespace tabreason::grpo {

struct GrpoConfig {
  std::size_t group_size = 16;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  double learning_rate = 0.05;
  std::size_t iterations = 500;
  std::size_t batch_size = 16;
  double std_epsilon = 1e-8;
  std::uint64_t seed = 0;
  rewards::RewardWeights weights;
  rewards::MatchConfig match;

  void validate() const;
};

class GroupTooSmall : public Error {
 public:
  explicit GroupTooSmall(std::size_t g)
      : Error("group of size " + std::to_string(g) + " is too small (need >= 2)") {}
};

/// (r_i - mean) / std with population std; all zeros when std < std_epsilon.
std::vector<double> compute_advantages(std::span<const double> rewards,
                                       double std_epsilon = 1e-8);

/// r - log r - 1 with r = exp(logp_ref - logp_theta).
double kl_estimate(double logp_theta, double logp_ref);

/// min(rho * A, clip(rho, 1 - eps, 1 + eps) * A), rho = exp(logp_theta - logp_old).
double surrogate_term(double logp_theta, double logp_old, double advantage,
                      double clip_eps);

/// True when the clipped branch is strictly below the unclipped one, i.e. the
/// response contributes no surrogate gradient.
bool clip_active(double logp_theta, double logp_old, double advantage,
                 double clip_eps);

struct GroupMember {
  policy::Response response;
  double logp_old = 0.0;
  double logp_ref = 0.0;
  double reward = 0.0;
};

struct Group {
  std::string task_id;
  std::vector<GroupMember> members;

  std::vector<double> rewards() const;
};

double group_objective(const Group& group, const policy::FeaturizedTask& task,
                       const policy::LinearSoftmaxPolicy& policy,
                       const GrpoConfig& config);

policy::Gradient group_gradient(const Group& group,
                                const policy::FeaturizedTask& task,
                                const policy::LinearSoftmaxPolicy& policy,
                                const GrpoConfig& config);

struct StepStats {
  double mean_reward = 0.0;
  double mean_abs_advantage = 0.0;
  double kl_mean = 0.0;
  double clip_frac = 0.0;
  double format_rate = 0.0;
  double accuracy_rate = 0.0;
};

/// One sampling round and one ascent step. `reference` stays fixed.
StepStats grpo_step(policy::LinearSoftmaxPolicy& policy,
                    const policy::LinearSoftmaxPolicy& reference,
                    std::span<const policy::FeaturizedTask* const> batch,
                    const GrpoConfig& config, Rng& rng);

struct EvalSummary {
  std::size_t n = 0;
  double accuracy = 0.0;
  double format_rate = 0.0;
};

/// Greedy decoding scored with accuracy_reward / format_reward.
EvalSummary greedy_eval(const policy::LinearSoftmaxPolicy& policy,
                        std::span<const policy::FeaturizedTask> tasks,
                        const rewards::MatchConfig& match = {});

struct TrainingReport {
  EvalSummary initial;
  std::vector<StepStats> steps;
  EvalSummary final_eval;
};

/// Runs config.iterations steps over shuffled mini-batches of `suite`.
/// The reference policy is the policy as passed in.
TrainingReport train(policy::LinearSoftmaxPolicy& policy,
                     std::span<const policy::FeaturizedTask> suite,
                     std::span<const policy::FeaturizedTask> heldout,
                     const GrpoConfig& config);

/// One JSON object per line: iter, mean_reward, accuracy, format_rate, kl,
/// clip_frac.
std::string report_to_jsonl(const TrainingReport& report);
std::string summary_json(const TrainingReport& report);

}  // namespace tabreason::grpo
