#include "fgrpo/grpo.hpp"

#include <cmath>

#include "fgrpo/error.hpp"

namespace fgrpo {

void OptimizerConfig::check() const {
  if (!(eta > 0)) throw Error(ErrorCode::InvalidArgument, "eta must be positive");
  if (beta < 0) throw Error(ErrorCode::InvalidArgument, "beta must be non-negative");
  if (!(eps_clip > 0 && eps_clip < 1)) throw Error(ErrorCode::InvalidArgument, "eps_clip must lie in (0, 1)");
  if (!(eps > 0)) throw Error(ErrorCode::InvalidArgument, "eps must be positive");
}

GroupGradient group_gradient(const PolicyParams& p, const PolicyParams& p_ref, const RolloutGroup& group,
                             const std::vector<double>& rewards, const OptimizerConfig& cfg) {
  const std::size_t n = group.trajectories.size();
  if (n < 2) throw Error(ErrorCode::GroupTooSmall, "group has " + std::to_string(n) + " trajectories");
  if (rewards.size() != n || group.logprobs_old.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "group, rewards and old log-probs are misaligned");
  }

  GroupGradient out{p.zeros_like(), {}, 0.0, 0.0, 0};
  out.advantages = normalize_advantages(Eigen::Map<const Eigen::VectorXd>(rewards.data(), static_cast<Eigen::Index>(n)),
                                        cfg.eps, cfg.sample_std);
  const double inv_g = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    const double adv = out.advantages.advantages(static_cast<Eigen::Index>(i));
    const auto& t = group.trajectories[i];
    const double lp_now = logprob(p, group.context, t, cfg.sampling);
    const double ratio = std::exp(lp_now - group.logprobs_old[i]);
    const auto term = clipped_surrogate(ratio, adv, cfg.eps_clip);
    out.surrogate += inv_g * term.value;
    if (term.clipped) {
      ++out.clipped;
      continue;
    }
    if (adv == 0.0 || ratio == 0.0) continue;
    // d(rho * A) = rho * A * dlog pi
    out.grad.axpy(inv_g * ratio * adv, logprob_grad(p, group.context, t, cfg.sampling));
  }

  out.kl = kl_divergence(p, p_ref, group.context);
  if (cfg.beta > 0) out.grad.axpy(-cfg.beta, kl_divergence_grad(p, p_ref, group.context));
  return out;
}

namespace {

StepResult apply(const PolicyParams& p, const PolicyParams& grad, UpdateReport report, double eta) {
  if (!grad.all_finite()) throw Error(ErrorCode::NonfiniteGradient, "gradient has non-finite entries");
  report.grad_norm = std::sqrt(grad.squared_norm());
  StepResult result{p, report};
  result.params.axpy(eta, grad);
  return result;
}

}  // namespace

StepResult grpo_step(const PolicyParams& p, const PolicyParams& p_ref, const RolloutGroup& group,
                     const std::vector<double>& rewards, const OptimizerConfig& cfg) {
  return fission_step(p, p_ref, {group}, {rewards}, cfg);
}

StepResult fission_step(const PolicyParams& p, const PolicyParams& p_ref, const std::vector<RolloutGroup>& groups,
                        const std::vector<std::vector<double>>& rewards, const OptimizerConfig& cfg) {
  cfg.check();
  if (groups.empty()) throw Error(ErrorCode::InvalidArgument, "no groups to update on");
  if (groups.size() != rewards.size()) throw Error(ErrorCode::InvalidArgument, "one reward list per group required");

  PolicyParams total = p.zeros_like();
  UpdateReport report;
  std::size_t trajectories = 0;
  int clipped = 0;
  double reward_sum = 0.0;
  double std_sum = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto gg = group_gradient(p, p_ref, groups[g], rewards[g], cfg);
    total.axpy(1.0, gg.grad);
    report.surrogate_loss += gg.surrogate;
    report.kl_value += gg.kl;
    clipped += gg.clipped;
    trajectories += groups[g].trajectories.size();
    reward_sum += gg.advantages.rewards.sum();
    std_sum += gg.advantages.std;
  }
  report.groups = static_cast<int>(groups.size());
  report.kl_value /= static_cast<double>(groups.size());
  report.clipped_fraction = static_cast<double>(clipped) / static_cast<double>(trajectories);
  report.mean_reward = reward_sum / static_cast<double>(trajectories);
  report.advantage_std = std_sum / static_cast<double>(groups.size());
  return apply(p, total, report, cfg.eta);
}

}  // namespace fgrpo
