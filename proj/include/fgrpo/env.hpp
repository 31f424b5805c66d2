#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fgrpo/feedback.hpp"
#include "fgrpo/policy.hpp"
#include "fgrpo/toolcall.hpp"

namespace fgrpo {

struct Turn {
  std::string user_request;
  std::vector<ToolCall> gt_calls;
};

//! Candidate values per (tool, param); nullopt means "omit the argument".
using CandidateTable = std::map<std::string, std::map<std::string, std::vector<std::optional<Value>>>>;

struct Task {
  std::string query_id;
  std::string family;
  ToolLibrary library;
  std::vector<Turn> turns;
  CandidateTable distractors;
  int max_retries = 20;

  //! Throws InvalidArgument if any ground-truth call fails format validation or lacks candidates.
  void check() const;
};

nlohmann::json task_to_json(const Task& task);
Task task_from_json(const nlohmann::json& j);
void save_tasks_jsonl(const std::vector<Task>& tasks, const std::string& path);
std::vector<Task> load_tasks_jsonl(const std::string& path);
Digest tasks_digest(const std::vector<Task>& tasks);

struct TaskGenOptions {
  int num_tools = 4;             // tools per task library
  int candidates_per_param = 5;  // total choices per parameter slot, clamped to [3, 8]
  double enum_fraction = 0.3;    // chance a non-enum parameter is turned into an enum
  double optional_fraction = 0.15;
  bool format_noise = true;      // add omit / ill-typed choices so format errors can be sampled
  int max_turns = 3;
  int max_retries = 20;
};

//! Deterministic for a fixed seed. Families rotate over "state", "enum" and "multi".
std::vector<Task> generate_tasks(std::uint64_t seed, int n, const TaskGenOptions& options = {});

Vocabulary build_vocabulary(const Task& task);

//! One decision point: a call position inside a turn of a task.
struct DecisionInstance {
  std::size_t task;
  std::size_t turn;
  std::size_t position;
  std::string query_id;
};

std::string instance_query_id(const Task& task, std::size_t turn, std::size_t position);
std::vector<DecisionInstance> enumerate_instances(const std::vector<Task>& tasks);
const ToolCall& instance_gt(const std::vector<Task>& tasks, const DecisionInstance& inst);
DialogueContext render_context(const Task& task, std::size_t turn, std::size_t position);
PolicyContext base_policy_context(const Task& task, const DecisionInstance& inst);
PolicyContext feedback_policy_context(const Task& task, const DecisionInstance& inst, std::string_view feedback,
                                      std::vector<Decision> previous = {});
//! The failed attempt as a grammar path of the task's vocabulary; empty when it is not representable.
std::vector<Decision> attempt_path(const Vocabulary& vocab, const Trajectory& t);

//! Registers one vocabulary per task; all logits start at zero (uniform).
PolicyParams make_initial_policy(const std::vector<Task>& tasks);

struct Outcome {
  bool ok = true;
  std::string message;  // runtime error text when !ok
};

struct Attempt {
  long step;
  std::size_t turn;
  std::size_t position;
  std::string call;  // canonical call text, or the raw text when unparseable
  bool ok;
  std::string message;
};

struct EpisodeLog {
  std::string query_id;
  std::vector<Attempt> attempts;
  bool success = false;
  bool had_error = false;

  nlohmann::json to_json() const;
};

/*!
 * Stateful episode over one task. A call is accepted only when it equals the ground truth at the
 * current position; anything else yields an error message from the format validator or the
 * rule-based diagnostics. Reaching max_retries errors within a turn ends the episode as a failure.
 */
class Episode {
 public:
  explicit Episode(const Task& task);

  Outcome step(const Trajectory& t);
  Outcome step(const ToolCall& call);

  bool done() const { return done_; }
  bool exhausted() const { return exhausted_; }
  std::size_t turn() const { return turn_; }
  std::size_t position() const { return position_; }
  int errors_in_turn() const { return errors_in_turn_; }
  const EpisodeLog& log() const { return log_; }

 private:
  Outcome fail(std::string call_text, std::string message);

  const Task* task_;
  std::size_t turn_ = 0;
  std::size_t position_ = 0;
  int errors_in_turn_ = 0;
  bool done_ = false;
  bool exhausted_ = false;
  EpisodeLog log_;
};

struct EpisodeClass {
  bool success;
  bool one_shot;
  bool recovered;
};

EpisodeClass evaluate_episode(const EpisodeLog& log);

//! Rolls the policy through an episode, switching to the feedback-conditioned context after errors.
EpisodeLog run_policy_episode(const PolicyParams& p, const Task& task, const SamplingConfig& cfg, std::mt19937_64& rng);

}  // namespace fgrpo
