#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fgrpo/env.hpp"
#include "fgrpo/feedback.hpp"
#include "fgrpo/grpo.hpp"
#include "fgrpo/reward.hpp"

namespace fgrpo {

//! Every knob of a run. The file form is flat `key = value` text using these field names.
struct TrainerConfig {
  std::uint64_t seed = 1;
  long total_steps = 300;
  int batch_queries = 8;     // decision instances per global step
  int G = 8;
  int G_prime = 8;
  // The 1e-6 used for billion-parameter models is far too small for a tabular policy.
  double eta = 0.1;
  double beta = 0.01;
  double eps_clip = 0.2;
  double eps = 1e-6;
  bool sample_std = false;
  std::optional<std::size_t> b_trig = 4;  // nullopt ("inf") disables fission
  double delta_corr = 1.0;
  long trigger_interval_N = 5;
  double temperature = 0.95;
  int top_k = 50;
  RewardSchedule schedule;   // total_steps is copied from above
  FeedbackBackend backend = FeedbackBackend::RuleBasedSemantic;
  HttpSimulatorOptions external;
  bool fallback_to_rule = true;
  std::optional<std::size_t> buffer_capacity;
  bool release_keys_on_pop = false;

  long eval_interval = 10;   // 0 evaluates only after the last step
  int eval_episodes_per_task = 4;
  std::uint64_t eval_seed = 12345;

  std::string tasks_path;    // empty: generate
  std::uint64_t task_seed = 7;
  int num_tasks = 40;
  TaskGenOptions taskgen;

  void check() const;
  OptimizerConfig optimizer() const;
  SamplingConfig sampling() const { return {temperature, top_k}; }
  RewardSchedule reward_schedule() const;
  bool fission_enabled() const { return b_trig.has_value(); }
};

TrainerConfig parse_config(std::istream& in);
TrainerConfig load_config(const std::string& path);
void write_config(const TrainerConfig& cfg, std::ostream& out);

//! Tasks named by the config: loaded from tasks_path or generated.
std::vector<Task> config_tasks(const TrainerConfig& cfg);

struct StepRow {
  long step = 0;
  std::string stage;  // "explore" or "fission"
  double mean_reward = 0;
  double advantage_std = 0;
  double kl = 0;
  double clipped_fraction = 0;
  std::size_t buffer_size = 0;
  int fission_groups_consumed = 0;
  int errors = 0;        // explore rows: trajectories flagged by the error gate
  int pushed = 0;        // explore rows: samples admitted to the buffer
  int skipped = 0;       // explore rows: remote replies rejected as malformed
};

struct SuccessRates {
  double success_rate = 0;
  double one_shot_rate = 0;
  double recovery_rate = 0;
  int episodes = 0;
  int one_shot = 0;
  int recovered = 0;
  int errored = 0;
};

struct EvalRow {
  long step = 0;
  SuccessRates rates;
};

struct RunMetrics {
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 0;
  std::string tasks_digest;
  std::vector<StepRow> steps;
  std::vector<EvalRow> evals;

  const EvalRow& final_eval() const;
  //! A meta record, then step and eval records in the order they were produced.
  void write_jsonl(std::ostream& out) const;
  static RunMetrics read_jsonl(std::istream& in);
};

/*!
 * one_shot_rate = one_shot / episodes and recovery_rate = recovered / episodes-with-an-error
 * (0 when no episode had an error), so success_rate = one_shot_rate + recovered / episodes.
 */
SuccessRates decompose_success(const std::vector<EpisodeLog>& logs);

//! Episodes of every task with common random numbers derived from eval_seed.
std::vector<EpisodeLog> evaluate_policy(const PolicyParams& p, const std::vector<Task>& tasks, int episodes_per_task,
                                        const SamplingConfig& cfg, std::uint64_t eval_seed);

struct TrainingResult {
  RunMetrics metrics;
  PolicyParams params;
  std::vector<EpisodeLog> final_logs;
  std::string buffer_jsonl;  // what was left in the corrective buffer
  int fission_updates = 0;
};

using StepCallback = std::function<void(long step, const PolicyParams& params)>;

//! Runs the three-stage loop. on_step sees the parameters after each global step.
TrainingResult run_training(const TrainerConfig& cfg, const std::vector<Task>& tasks, const PolicyParams& policy_init,
                            const StepCallback& on_step = {});

// Seed plumbing shared with tests that rebuild the loop by hand.
enum class Stream : std::uint64_t { Batch = 1, Explore = 2, Fission = 3, Eval = 4 };
std::uint64_t stream_seed(std::uint64_t seed, long step, Stream stream, std::uint64_t index = 0);
//! Indices of the decision instances trained at a step; distinct, at most batch_queries of them.
std::vector<std::size_t> step_batch(std::uint64_t seed, long step, std::size_t num_instances, int batch_queries);

struct RunDelta {
  std::uint64_t seed;
  double success;
  double one_shot;
  double recovery;
};

struct CompareReport {
  std::vector<RunDelta> per_seed;  // b minus a
  double mean_success = 0;
  double mean_one_shot = 0;
  double mean_recovery = 0;
  SuccessRates mean_a;
  SuccessRates mean_b;

  nlohmann::json to_json() const;
};

//! Pairs runs by seed. Throws MismatchedEval when the task sets, eval seeds or seed sets differ.
CompareReport compare_runs(const std::vector<RunMetrics>& a, const std::vector<RunMetrics>& b);

//! One run per seed on the same tasks; seeds replace cfg.seed.
std::vector<RunMetrics> run_seeds(const TrainerConfig& cfg, const std::vector<Task>& tasks,
                                  const std::vector<std::uint64_t>& seeds);

}  // namespace fgrpo
