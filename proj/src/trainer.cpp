#include "fgrpo/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "fgrpo/buffer.hpp"
#include "fgrpo/error.hpp"

namespace fgrpo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' has bad value '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  if constexpr (std::is_floating_point_v<T>) {
    std::size_t used = 0;
    double d = 0;
    try {
      d = std::stod(value, &used);
    } catch (const std::exception&) {
      bad_value(key, value);
    }
    if (used != value.size()) bad_value(key, value);
    return static_cast<T>(d);
  } else {
    T out{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value);
    return out;
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value);
}

std::optional<std::size_t> parse_optional_size(const std::string& key, const std::string& value) {
  if (value == "inf" || value == "none") return std::nullopt;
  return parse_number<std::size_t>(key, value);
}

std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

}  // namespace

// ---------------------------------------------------------------------------------------------
// config

void TrainerConfig::check() const {
  if (total_steps < 1) throw Error(ErrorCode::InvalidArgument, "total_steps must be >= 1");
  if (G < 2 || G_prime < 2) throw Error(ErrorCode::GroupTooSmall, "G and G_prime must be >= 2");
  if (batch_queries < 1) throw Error(ErrorCode::InvalidArgument, "batch_queries must be >= 1");
  if (trigger_interval_N < 1) throw Error(ErrorCode::InvalidArgument, "trigger_interval_N must be >= 1");
  if (b_trig && *b_trig == 0) throw Error(ErrorCode::InvalidArgument, "b_trig must be >= 1 or inf");
  if (buffer_capacity && *buffer_capacity == 0) throw Error(ErrorCode::InvalidArgument, "buffer_capacity must be >= 1");
  if (!(temperature > 0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
  if (eval_interval < 0) throw Error(ErrorCode::InvalidArgument, "eval_interval must be >= 0");
  if (eval_episodes_per_task < 1) throw Error(ErrorCode::InvalidArgument, "eval_episodes_per_task must be >= 1");
  if (backend == FeedbackBackend::DeterministicFormat) {
    throw Error(ErrorCode::InvalidArgument, "backend must be a semantic backend (rule, static or external)");
  }
  optimizer().check();
  reward_schedule().check();
}

OptimizerConfig TrainerConfig::optimizer() const { return {eta, beta, eps_clip, eps, sample_std, sampling()}; }

RewardSchedule TrainerConfig::reward_schedule() const {
  RewardSchedule s = schedule;
  s.total_steps = total_steps;
  return s;
}

TrainerConfig parse_config(std::istream& in) {
  TrainerConfig c;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "config line " + std::to_string(lineno) + " has no '='");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::string v = trim(std::string_view(line).substr(eq + 1));
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    if (!seen.insert(key).second) throw Error(ErrorCode::InvalidArgument, "duplicate config key '" + key + "'");

    auto& s = c.schedule;
    auto& t = c.taskgen;
    if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "total_steps") c.total_steps = parse_number<long>(key, v);
    else if (key == "batch_queries") c.batch_queries = parse_number<int>(key, v);
    else if (key == "G") c.G = parse_number<int>(key, v);
    else if (key == "G_prime") c.G_prime = parse_number<int>(key, v);
    else if (key == "eta") c.eta = parse_number<double>(key, v);
    else if (key == "beta") c.beta = parse_number<double>(key, v);
    else if (key == "eps_clip") c.eps_clip = parse_number<double>(key, v);
    else if (key == "eps") c.eps = parse_number<double>(key, v);
    else if (key == "sample_std") c.sample_std = parse_bool(key, v);
    else if (key == "b_trig") c.b_trig = parse_optional_size(key, v);
    else if (key == "delta_corr") c.delta_corr = parse_number<double>(key, v);
    else if (key == "trigger_interval_N") c.trigger_interval_N = parse_number<long>(key, v);
    else if (key == "temperature") c.temperature = parse_number<double>(key, v);
    else if (key == "top_k") c.top_k = parse_number<int>(key, v);
    else if (key == "alpha") s.alpha = parse_number<double>(key, v);
    else if (key == "fmt_start") s.fmt_start = parse_number<double>(key, v);
    else if (key == "fmt_end") s.fmt_end = parse_number<double>(key, v);
    else if (key == "corr_start") s.corr_start = parse_number<double>(key, v);
    else if (key == "corr_end") s.corr_end = parse_number<double>(key, v);
    else if (key == "len_center_start") s.len_center_start = parse_number<double>(key, v);
    else if (key == "len_center_end") s.len_center_end = parse_number<double>(key, v);
    else if (key == "len_width_start") s.len_width_start = parse_number<double>(key, v);
    else if (key == "len_width_end") s.len_width_end = parse_number<double>(key, v);
    else if (key == "backend") c.backend = feedback_backend_from_string(v);
    else if (key == "external_url") c.external.url = v;
    else if (key == "external_timeout_seconds") c.external.timeout_seconds = parse_number<double>(key, v);
    else if (key == "external_retries") c.external.retries = parse_number<int>(key, v);
    else if (key == "external_max_in_flight") c.external.max_in_flight = parse_number<int>(key, v);
    else if (key == "fallback_to_rule") c.fallback_to_rule = parse_bool(key, v);
    else if (key == "buffer_capacity") c.buffer_capacity = parse_optional_size(key, v);
    else if (key == "release_keys_on_pop") c.release_keys_on_pop = parse_bool(key, v);
    else if (key == "eval_interval") c.eval_interval = parse_number<long>(key, v);
    else if (key == "eval_episodes_per_task") c.eval_episodes_per_task = parse_number<int>(key, v);
    else if (key == "eval_seed") c.eval_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "tasks_path") c.tasks_path = v;
    else if (key == "task_seed") c.task_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "num_tasks") c.num_tasks = parse_number<int>(key, v);
    else if (key == "num_tools") t.num_tools = parse_number<int>(key, v);
    else if (key == "candidates_per_param") t.candidates_per_param = parse_number<int>(key, v);
    else if (key == "enum_fraction") t.enum_fraction = parse_number<double>(key, v);
    else if (key == "optional_fraction") t.optional_fraction = parse_number<double>(key, v);
    else if (key == "format_noise") t.format_noise = parse_bool(key, v);
    else if (key == "max_turns") t.max_turns = parse_number<int>(key, v);
    else if (key == "max_retries") t.max_retries = parse_number<int>(key, v);
    else throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
  }
  c.check();
  return c;
}

TrainerConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return parse_config(in);
}

void write_config(const TrainerConfig& c, std::ostream& out) {
  auto opt = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("inf"); };
  auto b = [](bool v) { return v ? "true" : "false"; };
  const auto& s = c.schedule;
  const auto& t = c.taskgen;
  out << "seed = " << c.seed << "\n"
      << "total_steps = " << c.total_steps << "\n"
      << "batch_queries = " << c.batch_queries << "\n"
      << "G = " << c.G << "\n"
      << "G_prime = " << c.G_prime << "\n"
      << "eta = " << fmt_double(c.eta) << "\n"
      << "beta = " << fmt_double(c.beta) << "\n"
      << "eps_clip = " << fmt_double(c.eps_clip) << "\n"
      << "eps = " << fmt_double(c.eps) << "\n"
      << "sample_std = " << b(c.sample_std) << "\n"
      << "b_trig = " << opt(c.b_trig) << "\n"
      << "delta_corr = " << fmt_double(c.delta_corr) << "\n"
      << "trigger_interval_N = " << c.trigger_interval_N << "\n"
      << "temperature = " << fmt_double(c.temperature) << "\n"
      << "top_k = " << c.top_k << "\n"
      << "alpha = " << fmt_double(s.alpha) << "\n"
      << "fmt_start = " << fmt_double(s.fmt_start) << "\n"
      << "fmt_end = " << fmt_double(s.fmt_end) << "\n"
      << "corr_start = " << fmt_double(s.corr_start) << "\n"
      << "corr_end = " << fmt_double(s.corr_end) << "\n"
      << "len_center_start = " << fmt_double(s.len_center_start) << "\n"
      << "len_center_end = " << fmt_double(s.len_center_end) << "\n"
      << "len_width_start = " << fmt_double(s.len_width_start) << "\n"
      << "len_width_end = " << fmt_double(s.len_width_end) << "\n"
      << "backend = " << quoted(to_string(c.backend)) << "\n"
      << "external_url = " << quoted(c.external.url) << "\n"
      << "external_timeout_seconds = " << fmt_double(c.external.timeout_seconds) << "\n"
      << "external_retries = " << c.external.retries << "\n"
      << "external_max_in_flight = " << c.external.max_in_flight << "\n"
      << "fallback_to_rule = " << b(c.fallback_to_rule) << "\n"
      << "buffer_capacity = " << (c.buffer_capacity ? std::to_string(*c.buffer_capacity) : "none") << "\n"
      << "release_keys_on_pop = " << b(c.release_keys_on_pop) << "\n"
      << "eval_interval = " << c.eval_interval << "\n"
      << "eval_episodes_per_task = " << c.eval_episodes_per_task << "\n"
      << "eval_seed = " << c.eval_seed << "\n"
      << "tasks_path = " << quoted(c.tasks_path) << "\n"
      << "task_seed = " << c.task_seed << "\n"
      << "num_tasks = " << c.num_tasks << "\n"
      << "num_tools = " << t.num_tools << "\n"
      << "candidates_per_param = " << t.candidates_per_param << "\n"
      << "enum_fraction = " << fmt_double(t.enum_fraction) << "\n"
      << "optional_fraction = " << fmt_double(t.optional_fraction) << "\n"
      << "format_noise = " << b(t.format_noise) << "\n"
      << "max_turns = " << t.max_turns << "\n"
      << "max_retries = " << t.max_retries << "\n";
}

std::vector<Task> config_tasks(const TrainerConfig& cfg) {
  if (!cfg.tasks_path.empty()) return load_tasks_jsonl(cfg.tasks_path);
  return generate_tasks(cfg.task_seed, cfg.num_tasks, cfg.taskgen);
}

// ---------------------------------------------------------------------------------------------
// metrics

const EvalRow& RunMetrics::final_eval() const {
  if (evals.empty()) throw Error(ErrorCode::InvalidArgument, "run has no evaluation rows");
  return evals.back();
}

namespace {

nlohmann::json rates_json(const SuccessRates& r) {
  return {{"success_rate", r.success_rate}, {"one_shot_rate", r.one_shot_rate}, {"recovery_rate", r.recovery_rate},
          {"episodes", r.episodes},         {"one_shot", r.one_shot},           {"recovered", r.recovered},
          {"errored", r.errored}};
}

// Means over seeds carry no meaningful episode counts.
nlohmann::json mean_rates_json(const SuccessRates& r) {
  return {{"success_rate", r.success_rate}, {"one_shot_rate", r.one_shot_rate}, {"recovery_rate", r.recovery_rate}};
}

SuccessRates rates_from_json(const nlohmann::json& j) {
  SuccessRates r;
  r.success_rate = j.at("success_rate").get<double>();
  r.one_shot_rate = j.at("one_shot_rate").get<double>();
  r.recovery_rate = j.at("recovery_rate").get<double>();
  r.episodes = j.value("episodes", 0);
  r.one_shot = j.value("one_shot", 0);
  r.recovered = j.value("recovered", 0);
  r.errored = j.value("errored", 0);
  return r;
}

}  // namespace

void RunMetrics::write_jsonl(std::ostream& out) const {
  out << nlohmann::json{{"type", "meta"}, {"seed", seed}, {"eval_seed", eval_seed}, {"tasks_digest", tasks_digest}}.dump()
      << '\n';
  // steps and evals are each ordered; interleave them by step with evals after the step's updates
  std::size_t e = 0;
  auto flush_evals = [&](long upto) {
    for (; e < evals.size() && evals[e].step <= upto; ++e) {
      nlohmann::json j = rates_json(evals[e].rates);
      j["type"] = "eval";
      j["step"] = evals[e].step;
      out << j.dump() << '\n';
    }
  };
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& r = steps[i];
    flush_evals(r.step - 1);
    out << nlohmann::json{{"type", "step"},
                          {"step", r.step},
                          {"stage", r.stage},
                          {"mean_reward", r.mean_reward},
                          {"advantage_std", r.advantage_std},
                          {"kl", r.kl},
                          {"clipped_fraction", r.clipped_fraction},
                          {"buffer_size", r.buffer_size},
                          {"fission_groups_consumed", r.fission_groups_consumed},
                          {"errors", r.errors},
                          {"pushed", r.pushed},
                          {"skipped", r.skipped}}
               .dump()
        << '\n';
  }
  flush_evals(std::numeric_limits<long>::max());
}

RunMetrics RunMetrics::read_jsonl(std::istream& in) {
  RunMetrics m;
  bool have_meta = false;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "meta") {
      m.seed = j.at("seed").get<std::uint64_t>();
      m.eval_seed = j.at("eval_seed").get<std::uint64_t>();
      m.tasks_digest = j.at("tasks_digest").get<std::string>();
      have_meta = true;
    } else if (type == "step") {
      StepRow r;
      r.step = j.at("step").get<long>();
      r.stage = j.at("stage").get<std::string>();
      r.mean_reward = j.at("mean_reward").get<double>();
      r.advantage_std = j.at("advantage_std").get<double>();
      r.kl = j.at("kl").get<double>();
      r.clipped_fraction = j.at("clipped_fraction").get<double>();
      r.buffer_size = j.at("buffer_size").get<std::size_t>();
      r.fission_groups_consumed = j.at("fission_groups_consumed").get<int>();
      r.errors = j.value("errors", 0);
      r.pushed = j.value("pushed", 0);
      r.skipped = j.value("skipped", 0);
      m.steps.push_back(std::move(r));
    } else if (type == "eval") {
      m.evals.push_back({j.at("step").get<long>(), rates_from_json(j)});
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown metrics record type '" + type + "'");
    }
  }
  if (!have_meta) throw Error(ErrorCode::InvalidArgument, "metrics stream has no meta record");
  return m;
}

SuccessRates decompose_success(const std::vector<EpisodeLog>& logs) {
  if (logs.empty()) throw Error(ErrorCode::InvalidArgument, "no episodes to decompose");
  SuccessRates r;
  r.episodes = static_cast<int>(logs.size());
  int success = 0;
  for (const auto& log : logs) {
    const auto c = evaluate_episode(log);
    success += c.success;
    r.one_shot += c.one_shot;
    r.recovered += c.recovered;
    r.errored += log.had_error;
  }
  r.success_rate = static_cast<double>(success) / r.episodes;
  r.one_shot_rate = static_cast<double>(r.one_shot) / r.episodes;
  r.recovery_rate = r.errored == 0 ? 0.0 : static_cast<double>(r.recovered) / r.errored;
  return r;
}

std::vector<EpisodeLog> evaluate_policy(const PolicyParams& p, const std::vector<Task>& tasks, int episodes_per_task,
                                        const SamplingConfig& cfg, std::uint64_t eval_seed) {
  std::vector<EpisodeLog> logs;
  logs.reserve(tasks.size() * static_cast<std::size_t>(episodes_per_task));
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (int e = 0; e < episodes_per_task; ++e) {
      std::mt19937_64 rng(stream_seed(eval_seed, static_cast<long>(t), Stream::Eval, static_cast<std::uint64_t>(e)));
      logs.push_back(run_policy_episode(p, tasks[t], cfg, rng));
    }
  }
  return logs;
}

// ---------------------------------------------------------------------------------------------
// training loop

std::uint64_t stream_seed(std::uint64_t seed, long step, Stream stream, std::uint64_t index) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(step));
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  return splitmix64(h ^ index);
}

std::vector<std::size_t> step_batch(std::uint64_t seed, long step, std::size_t num_instances, int batch_queries) {
  if (num_instances == 0) throw Error(ErrorCode::InvalidArgument, "no decision instances");
  std::vector<std::size_t> idx(num_instances);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t k = std::min(num_instances, static_cast<std::size_t>(std::max(1, batch_queries)));
  std::mt19937_64 rng(stream_seed(seed, step, Stream::Batch));
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_instances - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

namespace {

struct Instances {
  std::vector<DecisionInstance> list;
  std::map<std::string, std::size_t> by_query;
};

std::vector<double> group_rewards(const RolloutGroup& group, const ToolCall& gt, long step, const RewardSchedule& sched,
                                  const ToolLibrary& library, std::vector<RewardBreakdown>* breakdowns = nullptr) {
  std::vector<double> out;
  for (const auto& t : group.trajectories) {
    const auto r = total_reward(t, {gt}, step, sched, library);
    out.push_back(r.total);
    if (breakdowns) breakdowns->push_back(r);
  }
  return out;
}

StepRow row_from(long step, const char* stage, const UpdateReport& report, std::size_t buffer_size) {
  StepRow r;
  r.step = step;
  r.stage = stage;
  r.mean_reward = report.mean_reward;
  r.advantage_std = report.advantage_std;
  r.kl = report.kl_value;
  r.clipped_fraction = report.clipped_fraction;
  r.buffer_size = buffer_size;
  return r;
}

}  // namespace

TrainingResult run_training(const TrainerConfig& cfg, const std::vector<Task>& tasks, const PolicyParams& policy_init,
                            const StepCallback& on_step) {
  cfg.check();
  if (tasks.empty()) throw Error(ErrorCode::InvalidArgument, "no tasks to train on");
  for (const auto& t : tasks) {
    if (!policy_init.has_vocabulary(t.query_id)) {
      throw Error(ErrorCode::InvalidArgument, "policy has no vocabulary for task " + t.query_id);
    }
  }

  const OptimizerConfig opt = cfg.optimizer();
  const SamplingConfig sampling = cfg.sampling();
  const RewardSchedule sched = cfg.reward_schedule();
  const auto instances = enumerate_instances(tasks);

  std::unique_ptr<SimulatorClient> client;
  if (cfg.backend == FeedbackBackend::ExternalSimulator) client = make_http_simulator_client(cfg.external);
  const FeedbackSynthesizer synthesize{cfg.backend, client.get(), cfg.fallback_to_rule};

  TrainingResult result;
  result.metrics.seed = cfg.seed;
  result.metrics.eval_seed = cfg.eval_seed;
  result.metrics.tasks_digest = digest_hex(tasks_digest(tasks));

  const PolicyParams p_ref = policy_init;
  PolicyParams params = policy_init;
  LifoBuffer buffer(cfg.buffer_capacity, cfg.release_keys_on_pop);
  long last_fission = 0;

  auto evaluate = [&](long step) {
    auto logs = evaluate_policy(params, tasks, cfg.eval_episodes_per_task, sampling, cfg.eval_seed);
    result.metrics.evals.push_back({step, decompose_success(logs)});
    return logs;
  };

  for (long k = 1; k <= cfg.total_steps; ++k) {
    const long t = k - 1;  // reward schedules run over t = 0 .. total_steps - 1

    // Stage 1: exploration over a batch of decision instances.
    const auto batch = step_batch(cfg.seed, k, instances.size(), cfg.batch_queries);
    std::vector<RolloutGroup> groups;
    std::vector<std::vector<double>> rewards;
    std::vector<std::vector<RewardBreakdown>> breakdowns(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& inst = instances[batch[b]];
      const Task& task = tasks[inst.task];
      groups.push_back(sample_group(params, base_policy_context(task, inst), cfg.G, sampling,
                                    stream_seed(cfg.seed, k, Stream::Explore, b)));
      rewards.push_back(group_rewards(groups.back(), instance_gt(tasks, inst), t, sched, task.library, &breakdowns[b]));
    }
    auto step = grpo_batch_step(params, p_ref, groups, rewards, opt);
    params = std::move(step.params);

    StepRow explore = row_from(k, "explore", step.report, 0);

    // Stage 2: error identification, feedback and buffering.
    if (cfg.fission_enabled()) {
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& inst = instances[batch[b]];
        const Task& task = tasks[inst.task];
        const auto errors = identify_errors(breakdowns[b], cfg.delta_corr);
        if (errors.empty()) continue;
        const DialogueContext x = render_context(task, inst.turn, inst.position);
        const std::vector<ToolCall> gt = {instance_gt(tasks, inst)};
        for (std::size_t i : errors) {
          ++explore.errors;
          const Trajectory& tau = groups[b].trajectories[i];
          if (buffer.seen(corrective_key(inst.query_id, tau))) continue;
          std::string f;
          try {
            f = synthesize(x, tau, gt, task.library);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::MalformedRemoteReply) throw;
            ++explore.skipped;
            continue;
          }
          auto sample = build_corrective_context(inst.query_id, x, tau, std::move(f), k);
          sample.vocab_id = task.query_id;
          sample.previous = attempt_path(params.vocabulary(task.query_id), tau);
          sample.instance = batch[b];
          if (buffer.push(std::move(sample)) != PushResult::Duplicate) ++explore.pushed;
        }
      }
    }
    explore.buffer_size = buffer.size();
    result.metrics.steps.push_back(explore);

    // Stage 3: fission once the buffer is full enough and the interval gate is open.
    if (cfg.fission_enabled() && buffer.is_triggered(*cfg.b_trig) && k - last_fission >= cfg.trigger_interval_N) {
      const auto samples = buffer.pop_batch(*cfg.b_trig);
      std::vector<RolloutGroup> fgroups;
      std::vector<std::vector<double>> frewards;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto& inst = instances[s.instance];
        fgroups.push_back(sample_group(params, s.policy_context(), cfg.G_prime, sampling,
                                       stream_seed(cfg.seed, k, Stream::Fission, i)));
        frewards.push_back(group_rewards(fgroups.back(), instance_gt(tasks, inst), t, sched, tasks[inst.task].library));
      }
      auto fstep = fission_step(params, p_ref, fgroups, frewards, opt);
      params = std::move(fstep.params);
      StepRow row = row_from(k, "fission", fstep.report, buffer.size());
      row.fission_groups_consumed = static_cast<int>(samples.size());
      result.metrics.steps.push_back(row);
      last_fission = k;
      ++result.fission_updates;
    }

    if (on_step) on_step(k, params);
    if (cfg.eval_interval > 0 && k % cfg.eval_interval == 0 && k != cfg.total_steps) evaluate(k);
  }

  result.final_logs = evaluate(cfg.total_steps);
  std::ostringstream os;
  buffer.write_jsonl(os);
  result.buffer_jsonl = os.str();
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------------------------
// comparison

nlohmann::json CompareReport::to_json() const {
  auto rows = nlohmann::json::array();
  for (const auto& d : per_seed) {
    rows.push_back({{"seed", d.seed}, {"success", d.success}, {"one_shot", d.one_shot}, {"recovery", d.recovery}});
  }
  return {{"per_seed", std::move(rows)},
          {"mean_delta", {{"success", mean_success}, {"one_shot", mean_one_shot}, {"recovery", mean_recovery}}},
          {"mean_a", mean_rates_json(mean_a)},
          {"mean_b", mean_rates_json(mean_b)}};
}

CompareReport compare_runs(const std::vector<RunMetrics>& a, const std::vector<RunMetrics>& b) {
  if (a.empty() || a.size() != b.size()) throw Error(ErrorCode::MismatchedEval, "runs must cover the same seeds");
  std::map<std::uint64_t, const RunMetrics*> by_seed;
  for (const auto& m : b) by_seed[m.seed] = &m;
  if (by_seed.size() != b.size()) throw Error(ErrorCode::MismatchedEval, "duplicate seed in comparison");

  CompareReport report;
  for (const auto& ma : a) {
    auto it = by_seed.find(ma.seed);
    if (it == by_seed.end()) throw Error(ErrorCode::MismatchedEval, "seed " + std::to_string(ma.seed) + " missing");
    const RunMetrics& mb = *it->second;
    if (ma.tasks_digest != mb.tasks_digest) throw Error(ErrorCode::MismatchedEval, "task sets differ");
    if (ma.eval_seed != mb.eval_seed) throw Error(ErrorCode::MismatchedEval, "evaluation seeds differ");
    const auto& ra = ma.final_eval().rates;
    const auto& rb = mb.final_eval().rates;
    report.per_seed.push_back({ma.seed, rb.success_rate - ra.success_rate, rb.one_shot_rate - ra.one_shot_rate,
                               rb.recovery_rate - ra.recovery_rate});
    report.mean_a.success_rate += ra.success_rate;
    report.mean_a.one_shot_rate += ra.one_shot_rate;
    report.mean_a.recovery_rate += ra.recovery_rate;
    report.mean_b.success_rate += rb.success_rate;
    report.mean_b.one_shot_rate += rb.one_shot_rate;
    report.mean_b.recovery_rate += rb.recovery_rate;
  }
  const double n = static_cast<double>(a.size());
  for (auto* r : {&report.mean_a, &report.mean_b}) {
    r->success_rate /= n;
    r->one_shot_rate /= n;
    r->recovery_rate /= n;
  }
  for (const auto& d : report.per_seed) {
    report.mean_success += d.success / n;
    report.mean_one_shot += d.one_shot / n;
    report.mean_recovery += d.recovery / n;
  }
  return report;
}

std::vector<RunMetrics> run_seeds(const TrainerConfig& cfg, const std::vector<Task>& tasks,
                                  const std::vector<std::uint64_t>& seeds) {
  const PolicyParams init = make_initial_policy(tasks);
  std::vector<RunMetrics> out;
  for (auto seed : seeds) {
    TrainerConfig c = cfg;
    c.seed = seed;
    out.push_back(run_training(c, tasks, init).metrics);
  }
  return out;
}

}  // namespace fgrpo
