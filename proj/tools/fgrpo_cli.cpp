#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fgrpo/error.hpp"
#include "fgrpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace fgrpo;

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  return out;
}

std::vector<RunMetrics> read_metrics(const std::vector<std::string>& paths) {
  std::vector<RunMetrics> out;
  for (const auto& p : paths) {
    fs::path path = p;
    if (fs::is_directory(path)) path /= "metrics.jsonl";
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    out.push_back(RunMetrics::read_jsonl(in));
  }
  return out;
}

int cmd_gen_data(std::uint64_t seed, int n, const std::string& out, const std::string& config) {
  TaskGenOptions opts;
  if (!config.empty()) opts = load_config(config).taskgen;
  const auto tasks = generate_tasks(seed, n, opts);
  save_tasks_jsonl(tasks, out);
  std::cout << "wrote " << tasks.size() << " tasks to " << out << " (digest " << digest_hex(tasks_digest(tasks)) << ")\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  TrainerConfig cfg = load_config(config);
  if (seed) cfg.seed = *seed;
  const auto tasks = config_tasks(cfg);
  fs::create_directories(out_dir);
  const fs::path dir = out_dir;

  auto cfg_out = open_out(dir / "config.toml");
  write_config(cfg, cfg_out);
  save_tasks_jsonl(tasks, (dir / "tasks.jsonl").string());

  const auto result = run_training(cfg, tasks, make_initial_policy(tasks));
  auto metrics = open_out(dir / "metrics.jsonl");
  result.metrics.write_jsonl(metrics);
  result.params.save((dir / "policy.json").string());
  auto episodes = open_out(dir / "episodes.jsonl");
  for (const auto& log : result.final_logs) episodes << log.to_json().dump() << '\n';
  open_out(dir / "buffer.jsonl") << result.buffer_jsonl;

  const auto& r = result.metrics.final_eval().rates;
  std::cout << "steps " << cfg.total_steps << ", fission updates " << result.fission_updates << "\n"
            << "success " << r.success_rate << ", one-shot " << r.one_shot_rate << ", recovery " << r.recovery_rate
            << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& tasks_path, int episodes, std::uint64_t eval_seed,
             double temperature, int top_k, const std::string& logs_out) {
  const auto params = PolicyParams::load(checkpoint);
  const auto tasks = load_tasks_jsonl(tasks_path);
  const auto logs = evaluate_policy(params, tasks, episodes, {temperature, top_k}, eval_seed);
  if (!logs_out.empty()) {
    auto out = open_out(logs_out);
    for (const auto& log : logs) out << log.to_json().dump() << '\n';
  }
  const auto r = decompose_success(logs);
  std::cout << nlohmann::json{{"episodes", r.episodes},
                              {"success_rate", r.success_rate},
                              {"one_shot_rate", r.one_shot_rate},
                              {"recovery_rate", r.recovery_rate}}
                   .dump(2)
            << "\n";
  return 0;
}

// Fixture: {"library": [...], "context": {...}, "failed": "<raw text>", "ground_truth": [calls]}
int cmd_feedback(const std::string& backend_name, const std::string& fixture, const std::string& url, bool show_request) {
  std::ifstream in(fixture);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + fixture);
  const auto j = nlohmann::json::parse(in);
  const ToolLibrary library = library_from_json(j.at("library"));
  DialogueContext x{j.at("context").value("system_and_tools", std::string{}),
                    j.at("context").value("dialogue_history", std::string{})};
  const Trajectory failed = parse_trajectory(j.value("query_id", std::string("fixture")), j.at("failed").get<std::string>());
  std::vector<ToolCall> gt;
  for (const auto& c : j.at("ground_truth")) gt.push_back(call_from_json(c));

  const FeedbackBackend backend = feedback_backend_from_string(backend_name);
  std::unique_ptr<SimulatorClient> client;
  if (backend == FeedbackBackend::ExternalSimulator) {
    HttpSimulatorOptions opts;
    if (!url.empty()) opts.url = url;
    client = make_http_simulator_client(opts);
  }
  if (show_request) {
    SimulatorRequest req{x.system_and_tools, x.dialogue_history, serialize_calls(gt, &library),
                         failed.calls.empty() ? failed.raw_text : serialize_calls(failed.calls, &library)};
    std::cerr << req.to_json().dump(2) << "\n";
  }
  std::string f;
  if (backend == FeedbackBackend::DeterministicFormat) {
    f = format_feedback(validate_format(failed, library));
  } else {
    f = FeedbackSynthesizer{backend, client.get(), false}(x, failed, gt, library);
  }
  std::cout << f << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::cout << compare_runs(read_metrics(a), read_metrics(b)).to_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fission-GRPO trainer for a synthetic tool-calling environment"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic task suite as JSONL");
  std::uint64_t gen_seed = 7;
  int gen_n = 40;
  std::string gen_out, gen_config;
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--n", gen_n, "Number of tasks");
  gen->add_option("--out", gen_out, "Output JSONL path")->required();
  gen->add_option("--config", gen_config, "Config file whose generator keys are used");

  auto* train = app.add_subcommand("train", "Run the training loop");
  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", train_out, "Run directory")->required();
  train->add_option("--seed", train_seed, "Override the config seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a task file");
  std::string eval_ckpt, eval_tasks, eval_logs;
  int eval_episodes = 4;
  std::uint64_t eval_seed = 12345;
  double eval_temp = 0.95;
  int eval_topk = 50;
  eval->add_option("--checkpoint", eval_ckpt, "Policy JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--tasks", eval_tasks, "Tasks JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", eval_episodes, "Episodes per task");
  eval->add_option("--eval-seed", eval_seed, "Evaluation seed");
  eval->add_option("--temperature", eval_temp, "Sampling temperature");
  eval->add_option("--top-k", eval_topk, "Top-k");
  eval->add_option("--logs", eval_logs, "Write episode logs here");

  auto* feedback = app.add_subcommand("feedback", "Synthesize feedback for one failed call");
  std::string fb_backend = "rule", fb_fixture, fb_url;
  bool fb_show = false;
  feedback->add_option("--backend", fb_backend, "format | rule | static | external");
  feedback->add_option("--fixture", fb_fixture, "Fixture JSON")->required()->check(CLI::ExistingFile);
  feedback->add_option("--url", fb_url, "Simulator URL for the external backend");
  feedback->add_flag("--show-request", fb_show, "Print the simulator request body to stderr");

  auto* compare = app.add_subcommand("compare", "Paired per-seed comparison of run metrics");
  std::vector<std::string> cmp_a, cmp_b;
  compare->add_option("--a", cmp_a, "Baseline metrics files or run directories")->required();
  compare->add_option("--b", cmp_b, "Candidate metrics files or run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_seed, gen_n, gen_out, gen_config);
    if (*train) return cmd_train(train_config, train_out, train_seed);
    if (*eval) return cmd_eval(eval_ckpt, eval_tasks, eval_episodes, eval_seed, eval_temp, eval_topk, eval_logs);
    if (*feedback) return cmd_feedback(fb_backend, fb_fixture, fb_url, fb_show);
    if (*compare) return cmd_compare(cmp_a, cmp_b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
