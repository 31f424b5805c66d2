#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "fgrpo/toolcall.hpp"

namespace fgrpo {

//! Time-dependent weights and length-penalty parameters of the composite reward.
struct RewardSchedule {
  long total_steps = 1;
  double fmt_start = 2.0;
  double fmt_end = 1.0;
  double corr_start = 2.0;
  double corr_end = 3.0;
  double len_center_start = 1024.0;
  double len_center_end = 512.0;
  double len_width_start = 512.0;
  double len_width_end = 256.0;
  double alpha = 0.5;  // selection vs. argument weight inside the correctness term

  //! Linear progress in [0, 1]; 0 at t = 0 and 1 at t = total_steps - 1.
  double progress(long t) const;
  double len_center(long t) const;
  double len_width(long t) const;
  void check() const;
};

struct RewardWeights {
  double w_fmt;
  double w_corr_scale;
};

struct RewardBreakdown {
  double r_fmt = 0;
  double r_corr = 0;
  double r_len = 0;
  double w_fmt = 0;
  double w_corr_scale = 0;
  double total = 0;
};

double format_reward(const Trajectory& t, const ToolLibrary& library);

//! Bag-of-tokens F1 over whitespace tokens. Both empty gives 1; exactly one empty gives 0.
double token_f1(std::string_view pred, std::string_view gt);

//! 2 * [alpha * 1(name match) + (1 - alpha) * mean F1 over the ground-truth arguments].
double correctness_reward(const std::optional<ToolCall>& pred, const ToolCall& gt, double alpha);

//! One-sided Gaussian: 1 up to len_center(t), then exp(-(L - c)^2 / (2 w^2)).
double length_reward(std::size_t length_tokens, long t, const RewardSchedule& sched);

RewardWeights weight_schedule(long t, const RewardSchedule& sched);

//! Positional mean of correctness over max(|calls|, |gt|) positions; unmatched positions score 0.
double sequence_correctness(const std::vector<ToolCall>& calls, const std::vector<ToolCall>& gt, double alpha);

RewardBreakdown total_reward(const Trajectory& t, const std::vector<ToolCall>& gt, long step,
                             const RewardSchedule& sched, const ToolLibrary& library);

}  // namespace fgrpo
