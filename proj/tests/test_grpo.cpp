#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fgrpo/grpo.hpp"
#include "fgrpo/reward.hpp"
#include "fixtures.hpp"

using namespace fgrpo;
using fixtures::randomize;
using fixtures::small_policy;

namespace {

const PolicyContext kBase{"v", "q1", false, "", {}};

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// The objective whose gradient group_gradient returns, written out directly.
double objective(const PolicyParams& p, const PolicyParams& ref, const RolloutGroup& g, const std::vector<double>& r,
                 const OptimizerConfig& cfg) {
  const auto adv = normalize_advantages(Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size())),
                                        cfg.eps, cfg.sample_std);
  double s = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double rho = std::exp(logprob(p, g.context, g.trajectories[i], cfg.sampling) - g.logprobs_old[i]);
    const double a = adv.advantages(static_cast<Eigen::Index>(i));
    s += std::min(rho * a, std::clamp(rho, 1 - cfg.eps_clip, 1 + cfg.eps_clip) * a);
  }
  return s / static_cast<double>(r.size()) - cfg.beta * kl_divergence(p, ref, g.context);
}

}  // namespace

TEST_CASE("advantage examples") {
  const auto a = normalize_advantages(vec({1.0, 3.0}), 1e-6);
  CHECK(a.mean == 2.0);
  CHECK(a.std == 1.0);
  CHECK(std::abs(a.advantages(0) + 1.0 / (1.0 + 1e-6)) <= 1e-15);
  CHECK(std::abs(a.advantages(1) - 1.0 / (1.0 + 1e-6)) <= 1e-15);

  const auto s = normalize_advantages(vec({1.0, 3.0}), 1e-6, true);
  CHECK(std::abs(s.std - std::sqrt(2.0)) <= 1e-15);

  for (double c : {0.0, 2.5, -7.0, 1e12}) {
    const auto z = normalize_advantages(vec({c, c, c, c}), 1e-6);
    CHECK(z.advantages == Eigen::VectorXd::Zero(4));
  }
}

TEST_CASE("advantages: zero mean, translation and scale invariance, bounded") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  std::uniform_int_distribution<int> size(2, 16);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd r(size(rng));
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = u(rng);
    const double eps = 1e-9;
    const auto a = normalize_advantages(r, eps);
    CHECK(std::abs(a.advantages.sum()) <= 1e-9);
    const double c = u(rng), k = std::abs(u(rng)) + 0.5;
    const Eigen::VectorXd shifted = (r.array() + c).matrix();
    CHECK((normalize_advantages(shifted, eps).advantages - a.advantages).cwiseAbs().maxCoeff() <= 1e-7);
    const Eigen::VectorXd scaled = r * k;
    CHECK((normalize_advantages(scaled, eps).advantages - a.advantages).cwiseAbs().maxCoeff() <= 1e-7);
    // population std bound: |A_i| <= sqrt(G - 1)
    CHECK(a.advantages.cwiseAbs().maxCoeff() <= std::sqrt(static_cast<double>(r.size() - 1)) + 1e-9);
  }
}

TEST_CASE("advantage preconditions") {
  CHECK_THROWS_AS(normalize_advantages(vec({1.0}), 1e-6), Error);
  try {
    normalize_advantages(vec({1.0}), 1e-6);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GroupTooSmall);
  }
  CHECK_THROWS_AS(normalize_advantages(vec({1.0, 2.0}), 0.0), Error);
}

TEST_CASE("clipped surrogate examples") {
  auto t = clipped_surrogate(1.5, 1.0, 0.2);
  CHECK(t.value == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(t.clipped);
  t = clipped_surrogate(0.5, -1.0, 0.2);
  CHECK(t.value == doctest::Approx(-0.8).epsilon(1e-15));
  CHECK(t.clipped);
  t = clipped_surrogate(0.5, 1.0, 0.2);
  CHECK(t.value == 0.5);
  CHECK_FALSE(t.clipped);
  t = clipped_surrogate(1.5, -1.0, 0.2);
  CHECK(t.value == -1.5);
  CHECK_FALSE(t.clipped);
  t = clipped_surrogate(1.0, 3.0, 0.2);
  CHECK(t.value == 3.0);
  CHECK_FALSE(t.clipped);
}

TEST_CASE("clipped surrogate never exceeds (1 + eps) * A for A > 0") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ratio(0.0, 4.0), adv(-3.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double r = ratio(rng), a = adv(rng);
    const auto t = clipped_surrogate(r, a, 0.2);
    CHECK(t.value <= r * a + 1e-15);
    if (a > 0) CHECK(t.value <= 1.2 * a + 1e-12);
  }
}

TEST_CASE("group gradient matches central differences of the objective") {
  std::mt19937_64 rng(3);
  const double h = 1e-6;
  for (int draw = 0; draw < 30; ++draw) {
    PolicyContext ctx = kBase;
    if (draw % 2) ctx = {"v", "q1", true, "b", {{0, 0}, {1, 1}, {2, 0}}};
    auto old = small_policy();
    randomize(old, ctx, rng);
    OptimizerConfig cfg;
    cfg.beta = 0.05;
    cfg.sampling = {0.95, 50};
    const auto g = sample_group(old, ctx, 6, cfg.sampling, rng());
    std::vector<double> r;
    std::uniform_real_distribution<double> u(0, 3);
    for (int i = 0; i < 6; ++i) r.push_back(u(rng));
    // evaluate away from the sampling policy so ratios differ from 1
    auto p = old;
    randomize(p, ctx, rng, 0.05);
    p.axpy(1.0, old);
    auto ref = small_policy();
    randomize(ref, ctx, rng);

    const auto gg = group_gradient(p, ref, g, r, cfg);
    CHECK(std::abs(gg.surrogate - cfg.beta * gg.kl - objective(p, ref, g, r, cfg)) <= 1e-12);
    double worst = 0;
    for (const auto& key : PolicyParams::bucket_keys(ctx)) {
      auto& rows = p.bucket(key, "v").rows;
      for (std::size_t s = 0; s < rows.size(); ++s) {
        for (Eigen::Index i = 0; i < rows[s].size(); ++i) {
          const double x0 = rows[s](i);
          rows[s](i) = x0 + h;
          const double up = objective(p, ref, g, r, cfg);
          rows[s](i) = x0 - h;
          const double down = objective(p, ref, g, r, cfg);
          rows[s](i) = x0;
          const auto* b = gg.grad.find_bucket(key);
          worst = std::max(worst, std::abs((up - down) / (2 * h) - (b ? b->rows[s](i) : 0.0)));
        }
      }
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("all-equal rewards with p == p_ref leave the policy unchanged") {
  std::mt19937_64 rng(4);
  auto p = small_policy();
  randomize(p, kBase, rng);
  const auto g = sample_group(p, kBase, 8, {}, 7);
  const auto step = grpo_step(p, p, g, std::vector<double>(8, 1.5), {});
  CHECK(step.params == p);
  CHECK(step.report.grad_norm == 0.0);
}

TEST_CASE("G = 2: the better trajectory gains probability") {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto p = small_policy();
    randomize(p, kBase, rng);
    const auto g = sample_group(p, kBase, 2, {}, rng());
    if (g.trajectories[0].raw_text == g.trajectories[1].raw_text) continue;
    OptimizerConfig cfg;
    cfg.beta = 0;
    cfg.eta = 0.05;
    const auto step = grpo_step(p, p, g, {0.0, 1.0}, cfg);
    CHECK(logprob(step.params, kBase, g.trajectories[1]) > logprob(p, kBase, g.trajectories[1]));
    CHECK(logprob(step.params, kBase, g.trajectories[0]) < logprob(p, kBase, g.trajectories[0]));
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("one group: fission_step equals grpo_step; two groups add linearly") {
  std::mt19937_64 rng(6);
  auto p = small_policy();
  const PolicyContext other{"v", "q2", true, "a", {}};
  randomize(p, kBase, rng);
  randomize(p, other, rng);
  auto ref = small_policy();
  const auto g1 = sample_group(p, kBase, 8, {}, 1);
  const auto g2 = sample_group(p, other, 8, {}, 2);
  const std::vector<double> r1 = {0, 1, 2, 3, 0, 1, 2, 3}, r2 = {5, 0, 0, 0, 1, 0, 0, 2};
  const OptimizerConfig cfg;
  CHECK(fission_step(p, ref, {g1}, {r1}, cfg).params == grpo_step(p, ref, g1, r1, cfg).params);

  const auto both = fission_step(p, ref, {g1, g2}, {r1, r2}, cfg);
  auto expected = p;
  expected.axpy(cfg.eta, group_gradient(p, ref, g1, r1, cfg).grad);
  expected.axpy(cfg.eta, group_gradient(p, ref, g2, r2, cfg).grad);
  auto diff = both.params;
  diff.axpy(-1.0, expected);
  CHECK(diff.squared_norm() <= 1e-28);
  CHECK(both.report.groups == 2);
}

TEST_CASE("a corrective group raises the probability of the correct call") {
  // feedback context, previous attempt used b = 2; the ground truth is a = "y", b = 1
  auto p = small_policy();
  const PolicyContext ctx{"v", "q1", true, "b", {{0, 0}, {1, 1}, {2, 1}}};
  const auto& v = p.vocabulary("v");
  const auto correct = encode_path(v, "q1", {{0, 0}, {1, 1}, {2, 0}});
  const auto gt = correct.calls;
  const double before = logprob(p, ctx, correct);
  auto cur = p;
  for (int k = 0; k < 5; ++k) {
    const auto g = sample_group(cur, ctx, 8, {}, 100 + static_cast<std::uint64_t>(k));
    std::vector<double> r;
    for (const auto& t : g.trajectories) {
      RewardSchedule sched;
      r.push_back(total_reward(t, gt, 0, sched, v.library).total);
    }
    OptimizerConfig cfg;
    cfg.eta = 1.0;
    cur = grpo_step(cur, p, g, r, cfg).params;
  }
  CHECK(logprob(cur, ctx, correct) > before);
}

TEST_CASE("non-finite gradients are rejected") {
  auto p = small_policy();
  const auto g = sample_group(p, kBase, 4, {}, 1);
  const std::vector<double> r = {0, 1, std::numeric_limits<double>::infinity(), 2};
  try {
    grpo_step(p, p, g, r, {});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK((e.code() == ErrorCode::NonfiniteGradient || e.code() == ErrorCode::InvalidArgument));
  }
  auto bad = p;
  bad.bucket("q|q1", "v").rows[0](0) = std::numeric_limits<double>::quiet_NaN();
  try {
    grpo_step(bad, p, sample_group(p, kBase, 4, {}, 2), {0, 1, 2, 3}, {});
    FAIL("expected NonfiniteGradient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonfiniteGradient);
  }
}

TEST_CASE("optimizer config and group shape checks") {
  auto p = small_policy();
  const auto g = sample_group(p, kBase, 4, {}, 1);
  OptimizerConfig bad;
  bad.eps_clip = 1.5;
  CHECK_THROWS_AS(grpo_step(p, p, g, {0, 1, 2, 3}, bad), Error);
  CHECK_THROWS_AS(grpo_step(p, p, g, {0, 1, 2}, {}), Error);
  CHECK_THROWS_AS(fission_step(p, p, {}, {}, {}), Error);
}
