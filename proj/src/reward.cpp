#include "fgrpo/reward.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "fgrpo/error.hpp"

namespace fgrpo {

namespace {

double lerp(double a, double b, double f) { return a + (b - a) * f; }

std::map<std::string, int> token_counts(std::string_view s) {
  std::map<std::string, int> counts;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) ++counts[std::string(s.substr(i, j - i))];
    i = j;
  }
  return counts;
}

}  // namespace

double RewardSchedule::progress(long t) const {
  if (total_steps <= 1) return 0.0;
  double f = static_cast<double>(t) / static_cast<double>(total_steps - 1);
  return std::clamp(f, 0.0, 1.0);
}

double RewardSchedule::len_center(long t) const { return lerp(len_center_start, len_center_end, progress(t)); }

double RewardSchedule::len_width(long t) const { return lerp(len_width_start, len_width_end, progress(t)); }

void RewardSchedule::check() const {
  if (total_steps < 1) throw Error(ErrorCode::InvalidArgument, "total_steps must be >= 1");
  if (!(len_width_start > 0) || !(len_width_end > 0)) {
    throw Error(ErrorCode::InvalidArgument, "length tolerance must stay positive");
  }
  if (alpha < 0 || alpha > 1) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
}

double format_reward(const Trajectory& t, const ToolLibrary& library) {
  return validate_format(t, library).valid ? 1.0 : 0.0;
}

double token_f1(std::string_view pred, std::string_view gt) {
  auto p = token_counts(pred);
  auto g = token_counts(gt);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  int np = 0, ng = 0, common = 0;
  for (const auto& [tok, c] : p) np += c;
  for (const auto& [tok, c] : g) {
    ng += c;
    auto it = p.find(tok);
    if (it != p.end()) common += std::min(c, it->second);
  }
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / np;
  double recall = static_cast<double>(common) / ng;
  return 2.0 * precision * recall / (precision + recall);
}

double correctness_reward(const std::optional<ToolCall>& pred, const ToolCall& gt, double alpha) {
  if (!pred) return 0.0;
  double selection = pred->tool_name == gt.tool_name ? 1.0 : 0.0;
  double arg_term = 0.0;
  if (!gt.args.empty()) {
    double sum = 0.0;
    for (const auto& [name, gt_value] : gt.args) {
      auto it = pred->args.find(name);
      if (it != pred->args.end()) sum += token_f1(value_to_string(it->second), value_to_string(gt_value));
    }
    arg_term = sum / static_cast<double>(gt.args.size());
  }
  return 2.0 * (alpha * selection + (1.0 - alpha) * arg_term);
}

double length_reward(std::size_t length_tokens, long t, const RewardSchedule& sched) {
  const double center = sched.len_center(t);
  const double len = static_cast<double>(length_tokens);
  if (len <= center) return 1.0;
  const double width = sched.len_width(t);
  const double d = len - center;
  return std::exp(-(d * d) / (2.0 * width * width));
}

RewardWeights weight_schedule(long t, const RewardSchedule& sched) {
  const double f = sched.progress(t);
  return {lerp(sched.fmt_start, sched.fmt_end, f), lerp(sched.corr_start, sched.corr_end, f)};
}

double sequence_correctness(const std::vector<ToolCall>& calls, const std::vector<ToolCall>& gt, double alpha) {
  const std::size_t n = std::max(calls.size(), gt.size());
  if (n == 0 || calls.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < std::min(calls.size(), gt.size()); ++i) {
    sum += correctness_reward(calls[i], gt[i], alpha);
  }
  return sum / static_cast<double>(n);
}

RewardBreakdown total_reward(const Trajectory& t, const std::vector<ToolCall>& gt, long step,
                             const RewardSchedule& sched, const ToolLibrary& library) {
  RewardBreakdown r;
  r.r_fmt = format_reward(t, library);
  r.r_corr = sequence_correctness(t.calls, gt, sched.alpha);
  r.r_len = length_reward(t.length_tokens, step, sched);
  auto w = weight_schedule(step, sched);
  r.w_fmt = w.w_fmt;
  r.w_corr_scale = w.w_corr_scale;
  r.total = r.w_fmt * r.r_fmt + 0.5 * r.w_corr_scale * r.r_corr + r.r_len;
  return r;
}

}  // namespace fgrpo
