#include "tabreason/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tabreason::grpo {

using policy::FeaturizedTask;
using policy::Gradient;
using policy::GradientAccumulator;
using policy::LinearSoftmaxPolicy;

void GrpoConfig::validate() const {
  if (group_size < 2) throw GroupTooSmall(group_size);
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("clip_eps must be in (0, 1)");
  }
  if (!(kl_beta >= 0.0)) throw std::invalid_argument("kl_beta must be >= 0");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning_rate must be > 0");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(std_epsilon >= 0.0)) {
    throw std::invalid_argument("std_epsilon must be >= 0");
  }
  match.validate();
}

std::vector<double> compute_advantages(std::span<const double> rewards,
                                       double std_epsilon) {
  const std::size_t g = rewards.size();
  if (g < 2) throw GroupTooSmall(g);
  const double n = static_cast<double>(g);
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(g, 0.0);
  if (sd < std_epsilon) return adv;
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

double kl_estimate(double logp_theta, double logp_ref) {
  const double d = logp_ref - logp_theta;
  // r - log r - 1 = expm1(d) - d, which keeps precision near d = 0.
  return std::expm1(d) - d;
}

double surrogate_term(double logp_theta, double logp_old, double advantage,
                      double clip_eps) {
  const double rho = std::exp(logp_theta - logp_old);
  const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(rho * advantage, clipped * advantage);
}

bool clip_active(double logp_theta, double logp_old, double advantage,
                 double clip_eps) {
  const double rho = std::exp(logp_theta - logp_old);
  const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
  return clipped * advantage < rho * advantage;
}

std::vector<double> Group::rewards() const {
  std::vector<double> r;
  r.reserve(members.size());
  for (const auto& m : members) r.push_back(m.reward);
  return r;
}

double group_objective(const Group& group, const FeaturizedTask& task,
                       const LinearSoftmaxPolicy& policy,
                       const GrpoConfig& config) {
  const auto adv = compute_advantages(group.rewards(), config.std_epsilon);
  double total = 0.0;
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    const auto& m = group.members[i];
    const double lp = policy.logp(task, m.response);
    total += surrogate_term(lp, m.logp_old, adv[i], config.clip_eps) -
             config.kl_beta * kl_estimate(lp, m.logp_ref);
  }
  return total / static_cast<double>(group.members.size());
}

Gradient group_gradient(const Group& group, const FeaturizedTask& task,
                        const LinearSoftmaxPolicy& policy,
                        const GrpoConfig& config) {
  const auto adv = compute_advantages(group.rewards(), config.std_epsilon);
  GradientAccumulator acc;
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    const auto& m = group.members[i];
    const double lp = policy.logp(task, m.response);
    double coeff = 0.0;
    if (!clip_active(lp, m.logp_old, adv[i], config.clip_eps)) {
      coeff += std::exp(lp - m.logp_old) * adv[i];
    }
    // d/dtheta [-beta * (r - log r - 1)] = -beta * (1 - r) * grad logp
    const double r = std::exp(m.logp_ref - lp);
    coeff -= config.kl_beta * (1.0 - r);
    if (coeff != 0.0) acc.add(policy.grad_logp(task, m.response), coeff);
  }
  return acc.finish(1.0 / static_cast<double>(group.members.size()));
}

StepStats grpo_step(LinearSoftmaxPolicy& policy,
                    const LinearSoftmaxPolicy& reference,
                    std::span<const FeaturizedTask* const> batch,
                    const GrpoConfig& config, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("grpo_step: empty batch");
  StepStats stats;
  std::size_t responses = 0;
  double abs_adv = 0.0;
  GradientAccumulator acc;

  // Sampling uses the pre-step parameters; `policy` is not touched until
  // every group has been scored.
  for (const FeaturizedTask* ft : batch) {
    const auto& inst = ft->task->instance;
    Group group{inst.id, {}};
    for (auto& s : policy::sample_group(policy, *ft, config.group_size, rng)) {
      GroupMember m;
      m.logp_old = s.logp;
      m.logp_ref = reference.logp(*ft, s.response);
      const auto rb = rewards::total_reward(s.response.text, inst.gold_answers,
                                            config.weights, config.match);
      m.reward = rb.total;
      stats.mean_reward += rb.total;
      stats.format_rate += rb.format;
      stats.accuracy_rate += rb.accuracy;
      stats.kl_mean += kl_estimate(m.logp_old, m.logp_ref);
      m.response = std::move(s.response);
      group.members.push_back(std::move(m));
    }
    const auto adv = compute_advantages(group.rewards(), config.std_epsilon);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      abs_adv += std::abs(adv[i]);
      const double lp = policy.logp(*ft, group.members[i].response);
      if (clip_active(lp, group.members[i].logp_old, adv[i], config.clip_eps)) {
        stats.clip_frac += 1.0;
      }
    }
    responses += group.members.size();
    acc.add(group_gradient(group, *ft, policy, config), 1.0);
  }

  const double n = static_cast<double>(responses);
  stats.mean_reward /= n;
  stats.format_rate /= n;
  stats.accuracy_rate /= n;
  stats.kl_mean /= n;
  stats.clip_frac /= n;
  stats.mean_abs_advantage = abs_adv / n;

  const Gradient grad = acc.finish(1.0 / static_cast<double>(batch.size()));
  policy.apply(grad, config.learning_rate);
  return stats;
}

EvalSummary greedy_eval(const LinearSoftmaxPolicy& policy,
                        std::span<const FeaturizedTask> tasks,
                        const rewards::MatchConfig& match) {
  EvalSummary s;
  s.n = tasks.size();
  if (tasks.empty()) return s;
  for (const auto& ft : tasks) {
    const auto r = policy::greedy_response(policy, ft);
    s.accuracy += rewards::accuracy_reward(r.text, ft.task->instance.gold_answers,
                                           match);
    s.format_rate += rewards::format_reward(r.text);
  }
  s.accuracy /= static_cast<double>(s.n);
  s.format_rate /= static_cast<double>(s.n);
  return s;
}

TrainingReport train(LinearSoftmaxPolicy& policy,
                     std::span<const FeaturizedTask> suite,
                     std::span<const FeaturizedTask> heldout,
                     const GrpoConfig& config) {
  if (suite.empty()) throw std::invalid_argument("train: empty suite");
  config.validate();
  const auto eval_set = heldout.empty() ? suite : heldout;
  const LinearSoftmaxPolicy reference = policy;

  TrainingReport report;
  report.initial = greedy_eval(policy, eval_set, config.match);

  Rng rng(config.seed);
  std::vector<std::size_t> order(suite.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<const FeaturizedTask*> batch;
  const std::size_t bs = std::min(config.batch_size, suite.size());

  for (std::size_t it = 0; it < config.iterations; ++it) {
    batch.clear();
    while (batch.size() < bs) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[rng.below(i)]);
        }
        cursor = 0;
      }
      batch.push_back(&suite[order[cursor++]]);
    }
    report.steps.push_back(grpo_step(policy, reference, batch, config, rng));
  }
  report.final_eval = greedy_eval(policy, eval_set, config.match);
  return report;
}

std::string report_to_jsonl(const TrainingReport& report) {
  std::string out;
  for (std::size_t i = 0; i < report.steps.size(); ++i) {
    const auto& s = report.steps[i];
    nlohmann::json j = nlohmann::json::object();
    j["iter"] = i;
    j["mean_reward"] = s.mean_reward;
    j["accuracy"] = s.accuracy_rate;
    j["format_rate"] = s.format_rate;
    j["kl"] = s.kl_mean;
    j["clip_frac"] = s.clip_frac;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string summary_json(const TrainingReport& report) {
  auto eval = [](const EvalSummary& e) {
    nlohmann::json j = nlohmann::json::object();
    j["n"] = e.n;
    j["accuracy"] = e.accuracy;
    j["format_rate"] = e.format_rate;
    return j;
  };
  nlohmann::json j = nlohmann::json::object();
  j["iterations"] = report.steps.size();
  j["initial"] = eval(report.initial);
  j["final"] = eval(report.final_eval);
  j["heldout_accuracy"] = report.final_eval.accuracy;
  return j.dump(2) + "\n";
}

}  // namespace tabreason::grpo
