//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//! Usage: acceptance [config]   (defaults to configs/acceptance.toml in the source tree)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fgrpo/buffer.hpp"
#include "fgrpo/error.hpp"
#include "fgrpo/trainer.hpp"
#include "fixtures.hpp"
#include "reference_grpo.hpp"

using namespace fgrpo;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v{false, ""};
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!v.pass) ++failures;
  std::printf("%s %2d %-22s %s (%.2f s)\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------------------------

Verdict reward_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  int bad = 0, total = 0;
  std::string missed;
  auto expect = [&](double got, double want) {
    ++total;
    if (!(std::abs(got - want) <= 1e-9)) {
      ++bad;
      missed += fmt(" [#%.0f: got %.12g, want %.12g]", total, got, want);
    }
  };
  const auto lib = fixtures::ticket_library();
  const auto gt = fixtures::update_call(7, "OPEN");

  expect(format_reward(fixtures::traj({gt}), lib), 1);
  expect(format_reward(parse_trajectory("q", ""), lib), 0);
  expect(format_reward(fixtures::traj({{"reopen", {}}}), lib), 0);

  expect(token_f1("open the door", "open the door"), 1);
  expect(token_f1("a b", "c d"), 0);
  expect(token_f1("a b", "b c"), 0.5);
  expect(token_f1("", ""), 1);
  expect(token_f1("a", ""), 0);

  expect(correctness_reward(gt, gt, 0.5), 2);
  expect(correctness_reward(ToolCall{"close", {{"x", Value{true}}}}, gt, 0.5), 0);
  expect(correctness_reward(std::nullopt, gt, 0.5), 0);
  const ToolCall gt2{"t", {{"a", Value{std::string("b c")}}, {"b", Value{std::string("z")}}}};
  expect(correctness_reward(ToolCall{"t", {{"a", Value{std::string("a b")}}}}, gt2, 0.5), 1.25);

  // three steps keep centre and width integral: (1024, 512), (768, 384), (512, 256)
  RewardSchedule len3;
  len3.total_steps = 3;
  for (long t : {0L, 1L, 2L}) {
    expect(length_reward(static_cast<std::size_t>(len3.len_center(t)), t, len3), 1);
    expect(length_reward(static_cast<std::size_t>(len3.len_center(t) + len3.len_width(t)), t, len3), std::exp(-0.5));
    expect(length_reward(100000000, t, len3), 0);
  }
  RewardSchedule s;
  s.total_steps = 300;
  const auto w0 = weight_schedule(0, s), w1 = weight_schedule(299, s);
  const bool exact_endpoints = w0.w_fmt == 2.0 && w0.w_corr_scale == 2.0 && w1.w_fmt == 1.0 && w1.w_corr_scale == 3.0;
  RewardSchedule three;
  three.total_steps = 3;
  expect(weight_schedule(1, three).w_fmt, 1.5);
  expect(weight_schedule(1, three).w_corr_scale, 2.5);

  s.total_steps = 100;
  const auto r0 = total_reward(fixtures::traj({gt}), {gt}, 0, s, lib);
  expect(r0.total, 5);
  const auto r1 = total_reward(fixtures::traj({gt}), {gt}, 99, s, lib);
  expect(r1.w_fmt * r1.r_fmt, 1);
  expect(0.5 * r1.w_corr_scale * r1.r_corr, 3);
  const ToolCall close{"close_ticket", {{"ticket_id", Value{std::int64_t{1}}}}};
  expect(sequence_correctness({gt}, {gt, close}, 0.5), 1);

  const double secs = seconds_since(t0);
  return {bad == 0 && exact_endpoints && secs < 1.0,
          std::to_string(total - bad) + "/" + std::to_string(total) + " examples within 1e-9, schedule endpoints " +
              (exact_endpoints ? "exact" : "WRONG") + missed};
}

Verdict gradient_check(const std::vector<Task>& tasks) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  const double h = 1e-5;
  double worst = 0;
  int draws = 0, entries = 0;
  const auto instances = enumerate_instances(tasks);
  for (; draws < 200; ++draws) {
    const auto& inst = instances[rng() % instances.size()];
    const Task& task = tasks[inst.task];
    PolicyParams p;
    p.add_vocabulary(task.query_id, build_vocabulary(task));
    PolicyContext ctx = base_policy_context(task, inst);
    const SamplingConfig cfg{0.95, 50};
    if (draws % 2) {
      // a feedback context with a hint and the previous attempt
      const auto prev = sample_group(p, ctx, 2, cfg, rng()).trajectories[0];
      const std::string fb = rule_feedback(prev.calls, {instance_gt(tasks, inst)}, task.library);
      ctx = feedback_policy_context(task, inst, fb, attempt_path(p.vocabulary(task.query_id), prev));
    }
    fixtures::randomize(p, ctx, rng);
    const auto t = sample_group(p, ctx, 2, cfg, rng()).trajectories[1];
    const auto g = logprob_grad(p, ctx, t, cfg);
    auto probe = [&](const std::string& key, const std::string& vocab) {
      auto& rows = p.bucket(key, vocab).rows;
      const auto* gb = g.find_bucket(key);
      for (std::size_t s = 0; s < rows.size(); ++s) {
        for (Eigen::Index i = 0; i < rows[s].size(); ++i) {
          const double x0 = rows[s](i);
          rows[s](i) = x0 + h;
          const double up = logprob(p, ctx, t, cfg);
          rows[s](i) = x0 - h;
          const double down = logprob(p, ctx, t, cfg);
          rows[s](i) = x0;
          worst = std::max(worst, std::abs((up - down) / (2 * h) - (gb ? gb->rows[s](i) : 0.0)));
          ++entries;
        }
      }
    };
    for (const auto& key : PolicyParams::bucket_keys(ctx)) probe(key, ctx.vocab_id);
    probe(PolicyParams::kCopyBucket, "");
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && draws >= 100 && secs < 10.0,
          fmt("%.0f draws, %.0f entries, max |error| %.2e", draws, entries, worst)};
}

Verdict advantage_invariants() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> size(2, 16);
  std::uniform_real_distribution<double> u(-10, 10);
  double worst_mean = 0;
  int zero_groups = 0, zero_ok = 0;
  auto p = fixtures::small_policy();
  const PolicyContext ctx{"v", "q1", false, "", {}};
  fixtures::randomize(p, ctx, rng);
  for (int i = 0; i < 1000; ++i) {
    const int g = size(rng);
    std::vector<double> r(static_cast<std::size_t>(g));
    const bool flat = i % 5 == 0;
    const double c = u(rng);
    for (auto& x : r) x = flat ? c : u(rng);
    const auto a = normalize_advantages(Eigen::Map<const Eigen::VectorXd>(r.data(), g), 1e-6);
    worst_mean = std::max(worst_mean, std::abs(a.advantages.mean()));
    if (flat) {
      ++zero_groups;
      const auto group = sample_group(p, ctx, g, {}, rng());
      const auto step = grpo_step(p, p, group, r, {});
      if (a.advantages == Eigen::VectorXd::Zero(g) && step.params == p) ++zero_ok;
    }
  }
  return {worst_mean <= 1e-9 && zero_ok == zero_groups,
          fmt("max |mean| %.1e, %.0f/%.0f flat groups exact zero and no-op", worst_mean, zero_ok, zero_groups)};
}

Verdict gate_equivalence() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> corr(0, 2), delta(0, 2.5);
  std::vector<RewardBreakdown> rows;
  std::vector<double> deltas;
  int mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    RewardBreakdown r;
    r.r_fmt = rng() % 4 == 0 ? 0.0 : 1.0;
    // a share of values sits exactly on the threshold
    const double d = i % 7 == 0 ? 1.0 : delta(rng);
    r.r_corr = i % 11 == 0 ? d : corr(rng);
    const bool brute = r.r_fmt == 0.0 || r.r_corr < d;
    const auto flagged = identify_errors({r}, d);
    if (brute != (flagged.size() == 1)) ++mismatches;
  }
  return {mismatches == 0, fmt("%.0f/10000 triples disagree", mismatches)};
}

Verdict buffer_model() {
  std::mt19937_64 rng(5);
  const std::size_t b_trig = 4;
  LifoBuffer b;
  std::vector<Digest> model;
  std::set<Digest> seen;
  int mismatches = 0, boundary_hits = 0;
  for (int op = 0; op < 10000; ++op) {
    if (rng() % 3 != 0) {
      const std::string q = "q" + std::to_string(rng() % 60);
      auto s = build_corrective_context(q, {"sys", "hist"}, parse_trajectory(q, "try " + std::to_string(rng() % 3)),
                                        "ERROR: x");
      const bool dup = seen.count(s.key) != 0;
      if (!dup) {
        seen.insert(s.key);
        model.push_back(s.key);
      }
      if ((b.push(s) == PushResult::Duplicate) != dup) ++mismatches;
    } else {
      const std::size_t n = 1 + rng() % 5;
      if (model.empty()) {
        try {
          b.pop_batch(n);
          ++mismatches;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::BufferEmpty) ++mismatches;
        }
      } else {
        std::vector<Digest> want, got;
        while (want.size() < n && !model.empty()) {
          want.push_back(model.back());
          model.pop_back();
        }
        for (const auto& s : b.pop_batch(n)) got.push_back(s.key);
        if (got != want) ++mismatches;
      }
    }
    if (b.size() != model.size()) ++mismatches;
    if (b.is_triggered(b_trig) != (model.size() >= b_trig)) ++mismatches;
    boundary_hits += model.size() == b_trig;
  }
  return {mismatches == 0 && boundary_hits > 0,
          fmt("%.0f mismatches over 10000 ops, %.0f visits at size == b_trig", mismatches, boundary_hits)};
}

Verdict reduction(TrainerConfig cfg, const std::vector<Task>& tasks) {
  cfg.total_steps = 200;
  cfg.b_trig = std::nullopt;
  const auto init = make_initial_policy(tasks);
  // every step's parameters, serialized
  std::vector<std::string> want, got;
  fixtures::reference_grpo(cfg, tasks, init, [&](long, const PolicyParams& p) { want.push_back(p.to_json().dump()); });
  const auto run = run_training(cfg, tasks, init, [&](long, const PolicyParams& p) { got.push_back(p.to_json().dump()); });
  std::size_t first_diff = 0;
  while (first_diff < want.size() && first_diff < got.size() && want[first_diff] == got[first_diff]) ++first_diff;
  const bool same = want.size() == 200 && got == want && run.fission_updates == 0;
  return {same, same ? "200 of 200 steps byte-identical"
                     : fmt("trajectories diverge at step %.0f", static_cast<double>(first_diff + 1))};
}

struct Arm {
  double success = 0, one_shot = 0, recovery = 0;
  double seconds = 0;
};

Arm run_arm(const TrainerConfig& cfg, const std::vector<Task>& tasks) {
  const auto t0 = std::chrono::steady_clock::now();
  Arm a;
  const auto runs = run_seeds(cfg, tasks, {1, 2, 3, 4, 5});
  for (const auto& m : runs) {
    const auto& r = m.final_eval().rates;
    a.success += r.success_rate / 5;
    a.one_shot += r.one_shot_rate / 5;
    a.recovery += r.recovery_rate / 5;
  }
  a.seconds = seconds_since(t0);
  return a;
}

Verdict non_leakage(const std::vector<Task>& tasks) {
  std::mt19937_64 rng(10);
  const auto instances = enumerate_instances(tasks);
  int produced = 0, leaks = 0, unprefixed = 0;
  while (produced < 1000) {
    const auto& inst = instances[rng() % instances.size()];
    const Task& task = tasks[inst.task];
    const auto vocab = build_vocabulary(task);
    std::vector<Decision> path;
    const std::size_t t = rng() % vocab.library.size();
    path.push_back({0, t});
    for (std::size_t j = 0; j < vocab.candidates[t].size(); ++j) {
      path.push_back({vocab.slot_index(t, j), rng() % vocab.candidates[t][j].size()});
    }
    const auto tau = encode_path(vocab, inst.query_id, path);
    const auto& gt = instance_gt(tasks, inst);
    // semantic errors only: well formed but not the target
    if (!validate_format(tau, task.library).valid || tau.calls[0] == gt) continue;
    const auto f = semantic_feedback(render_context(task, inst.turn, inst.position), tau, {gt}, task.library,
                                     FeedbackBackend::RuleBasedSemantic);
    ++produced;
    if (f.rfind("ERROR: ", 0) != 0) ++unprefixed;
    const ToolSchema* schema = find_tool(task.library, gt.tool_name);
    if (f.find(serialize_call(gt, schema)) != std::string::npos || f.find(serialize_call(gt)) != std::string::npos) {
      ++leaks;
    }
  }
  return {leaks == 0 && unprefixed == 0,
          fmt("%.0f strings, %.0f contain the serialized target, %.0f unprefixed", produced, leaks, unprefixed)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : FGRPO_ACCEPTANCE_CONFIG;
  TrainerConfig base;
  try {
    base = load_config(path);
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << "\n";
    return 2;
  }
  const auto tasks = config_tasks(base);
  std::printf("config %s, %zu tasks, digest %s\n", path.c_str(), tasks.size(), digest_hex(tasks_digest(tasks)).c_str());

  report(1, "reward-oracles", reward_oracles);
  report(2, "gradient-check", [&] { return gradient_check(tasks); });
  report(3, "advantage-invariants", advantage_invariants);
  report(4, "error-gate", gate_equivalence);
  report(5, "buffer-model", buffer_model);
  report(6, "grpo-reduction", [&] { return reduction(base, tasks); });

  // Directional experiments: every arm runs seeds 1..5 on the same suite and eval seed.
  Arm grpo, rule, stat;
  report(7, "fission-efficacy", [&] {
    auto off = base;
    off.b_trig = std::nullopt;
    grpo = run_arm(off, tasks);
    auto on = base;
    on.backend = FeedbackBackend::RuleBasedSemantic;
    rule = run_arm(on, tasks);
    const double d_rec = rule.recovery - grpo.recovery, d_one = rule.one_shot - grpo.one_shot;
    const double secs = grpo.seconds + rule.seconds;
    return Verdict{d_rec >= 0.05 && d_one >= -0.02 && secs < 300,
                   fmt("recovery %.4f -> %.4f (%+.4f), one-shot change %+.4f", grpo.recovery, rule.recovery, d_rec,
                       d_one)};
  });
  report(8, "feedback-ordering", [&] {
    auto s = base;
    s.backend = FeedbackBackend::StaticGeneric;
    stat = run_arm(s, tasks);
    return Verdict{rule.success >= stat.success && stat.success >= grpo.success && rule.success - grpo.success >= 0.03,
                   fmt("success rule %.4f >= static %.4f >= none %.4f, outer gap %.4f", rule.success, stat.success,
                       grpo.success, rule.success - grpo.success)};
  });
  report(9, "interval-sensitivity", [&] {
    std::ostringstream detail;
    double at5 = rule.success, at100 = 0;
    for (long n : {1L, 20L, 100L}) {
      auto c = base;
      c.trigger_interval_N = n;
      const double s = run_arm(c, tasks).success;
      if (n == 100) at100 = s;
      detail << "N=" << n << " " << s << ", ";
      if (n == 1) detail << "N=5 " << at5 << ", ";
    }
    std::string d = detail.str();
    d.resize(d.size() - 2);
    return Verdict{at100 <= at5, "success " + d};
  });
  report(10, "non-leakage", [&] { return non_leakage(tasks); });

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
