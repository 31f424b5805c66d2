#pragma once

#include <vector>

#include "fgrpo/math.hpp"
#include "fgrpo/policy.hpp"

namespace fgrpo {

struct OptimizerConfig {
  double eta = 0.1;        // plain gradient ascent step
  double beta = 0.01;      // KL coefficient against the frozen reference
  double eps_clip = 0.2;
  double eps = 1e-6;       // advantage denominator guard
  bool sample_std = false; // population std by default
  SamplingConfig sampling; // ratios are taken under the sampling distribution

  void check() const;
};

//! Diagnostics of one update.
struct UpdateReport {
  double surrogate_loss = 0;  // value of the clipped surrogate part of the objective
  double kl_value = 0;
  double grad_norm = 0;
  double clipped_fraction = 0;
  double mean_reward = 0;
  double advantage_std = 0;
  int groups = 0;
};

struct GroupGradient {
  PolicyParams grad;
  AdvantageSet<double> advantages;
  double surrogate = 0;
  double kl = 0;
  int clipped = 0;
};

/*!
 * Gradient of (1/G) sum_i min(rho_i A_i, clip(rho_i) A_i) - beta * KL(pi || pi_ref) for one group,
 * with rho_i = exp(logprob_now - logprob_old_i).
 */
GroupGradient group_gradient(const PolicyParams& p, const PolicyParams& p_ref, const RolloutGroup& group,
                             const std::vector<double>& rewards, const OptimizerConfig& cfg);

struct StepResult {
  PolicyParams params;
  UpdateReport report;
};

StepResult grpo_step(const PolicyParams& p, const PolicyParams& p_ref, const RolloutGroup& group,
                     const std::vector<double>& rewards, const OptimizerConfig& cfg);

//! Sums the per-group objectives and applies a single ascent step.
StepResult fission_step(const PolicyParams& p, const PolicyParams& p_ref, const std::vector<RolloutGroup>& groups,
                        const std::vector<std::vector<double>>& rewards, const OptimizerConfig& cfg);

//! Plain GRPO over several queries: one summed step, the same arithmetic as fission_step.
inline StepResult grpo_batch_step(const PolicyParams& p, const PolicyParams& p_ref, const std::vector<RolloutGroup>& groups,
                                  const std::vector<std::vector<double>>& rewards, const OptimizerConfig& cfg) {
  return fission_step(p, p_ref, groups, rewards, cfg);
}

}  // namespace fgrpo
