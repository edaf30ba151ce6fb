#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mesa/datasets.hpp"
#include "mesa/envs.hpp"
#include "mesa/errors.hpp"
#include "mesa/executor.hpp"
#include "mesa/oracle.hpp"
#include "mesa/safety.hpp"
#include "mesa/taskpolicy.hpp"

namespace {

using mesa::Rng;
using mesa::data::OfflineDataset;
using mesa::data::TransitionRecord;
using mesa::exec::AlgorithmMode;
using mesa::exec::Phase3Config;
using mesa::exec::RunMetrics;

// Critic whose output is the constant sigmoid(logit) regardless of input:
// zero out the final layer and set its bias.
mesa::safety::SafetyCritic constant_critic(double logit, Rng& rng) {
  mesa::safety::SafetyCritic critic = mesa::safety::make_critic(2, 2, {4}, 0.8, rng);
  const std::size_t n = critic.online.size();
  for (std::size_t i = n - 5; i < n; ++i) critic.online.data()[i] = 0.0;
  critic.online.data()[n - 1] = logit;
  critic.target = critic.online;
  return critic;
}

// Recovery policy emitting a fixed action: zero final layer, biases set to
// the pre-squash values of the wanted action.
mesa::safety::RecoveryPolicy constant_recovery(std::array<double, 2> action, Rng& rng) {
  mesa::safety::RecoveryPolicy rec = mesa::safety::make_recovery(2, 2, {4}, 0.1, rng);
  const std::size_t n = rec.params.size();
  for (std::size_t i = n - 10; i < n; ++i) rec.params.data()[i] = 0.0;
  rec.params.data()[n - 2] = std::atanh(action[0] / rec.action_bound);
  rec.params.data()[n - 1] = std::atanh(action[1] / rec.action_bound);
  return rec;
}

OfflineDataset seeded_buffer(const mesa::env::EnvParams& env, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return mesa::data::collect_random(env, n, rng);
}

mesa::env::EnvParams test_maze() {
  mesa::env::EnvParams env;
  env.family = mesa::env::Family::maze;
  env.w1 = 0.08;
  env.w2 = -0.08;
  return env;
}

bool interior(const std::vector<double>& s) {
  return s[0] > 0.12 && s[0] < 0.88 && s[1] > 0.12 && s[1] < 0.88;
}

}  // namespace

TEST_CASE("mode names round-trip and critic usage is mode-dependent") {
  using mesa::exec::mode_from_name;
  using mesa::exec::mode_name;
  for (AlgorithmMode m : {AlgorithmMode::unconstrained, AlgorithmMode::rrl,
                          AlgorithmMode::multitask, AlgorithmMode::mesa})
    CHECK(mode_from_name(mode_name(m)) == m);
  CHECK_THROWS_AS(mode_from_name("hybrid"), mesa::ConfigError);
  CHECK_FALSE(mesa::exec::uses_critic(AlgorithmMode::unconstrained));
  CHECK(mesa::exec::uses_critic(AlgorithmMode::rrl));
  CHECK(mesa::exec::uses_critic(AlgorithmMode::multitask));
  CHECK(mesa::exec::uses_critic(AlgorithmMode::mesa));
}

TEST_CASE("action selection switches exactly at the risk threshold") {
  Rng rng(3);
  const std::vector<double> state = {0.5, 0.5};
  const std::vector<double> task_action = {0.05, 0.0};
  const std::vector<double> recovery_action = {-0.05, 0.0};

  SUBCASE("low risk keeps the task action") {
    const auto critic = constant_critic(std::log(0.05 / 0.95), rng);  // value ~0.05
    const auto choice =
        mesa::exec::select_action(critic, state, task_action, recovery_action, 0.1);
    CHECK_FALSE(choice.used_recovery);
    CHECK(choice.action == task_action);
  }
  SUBCASE("high risk switches to recovery") {
    const auto critic = constant_critic(std::log(0.3 / 0.7), rng);  // value ~0.3
    const auto choice =
        mesa::exec::select_action(critic, state, task_action, recovery_action, 0.1);
    CHECK(choice.used_recovery);
    CHECK(choice.action == recovery_action);
  }
  SUBCASE("risk exactly at the threshold is inclusive: task action") {
    const auto critic = constant_critic(0.7, rng);
    const double exact = critic.value(state, task_action);
    const auto choice =
        mesa::exec::select_action(critic, state, task_action, recovery_action, exact);
    CHECK_FALSE(choice.used_recovery);
    CHECK(choice.action == task_action);
  }
  SUBCASE("out-of-range threshold is rejected") {
    const auto critic = constant_critic(0.0, rng);
    CHECK_THROWS_AS(
        mesa::exec::select_action(critic, state, task_action, recovery_action, 1.5),
        mesa::ConfigError);
  }
}

TEST_CASE("run metrics helpers aggregate episodes") {
  RunMetrics m;
  for (std::size_t i = 0; i < 4; ++i) {
    mesa::exec::EpisodeRow row;
    row.episode = i;
    row.episode_return = static_cast<double>(i);
    row.success = (i % 2 == 1);
    row.violated = (i == 2);
    row.cumulative_violations = i >= 2 ? 1 : 0;
    m.episodes.push_back(row);
  }
  CHECK(m.total_violations() == 1);
  CHECK(m.success_rate() == doctest::Approx(0.5));
  CHECK(m.success_rate(2) == doctest::Approx(0.5));
  CHECK(m.success_rate(1) == doctest::Approx(1.0));
  CHECK(m.mean_return() == doctest::Approx(1.5));
  CHECK(m.mean_return(2) == doctest::Approx(2.5));
  CHECK(RunMetrics{}.total_violations() == 0);
}

TEST_CASE("unconstrained runs need no safety artifacts and keep consistent counters") {
  const mesa::env::EnvParams env = test_maze();
  Rng rng(41);
  mesa::sac::SacConfig sac_cfg;
  sac_cfg.hidden = {8};
  mesa::sac::SacAgent agent = mesa::sac::make_sac(2, 2, 0.1, sac_cfg, rng);

  Phase3Config cfg;
  cfg.episodes = 6;
  cfg.batch = 16;
  RunMetrics metrics = mesa::exec::run_phase3(env, agent, nullptr, nullptr,
                                              AlgorithmMode::unconstrained, nullptr, cfg, rng);

  REQUIRE(metrics.episodes.size() == 6);
  std::size_t cumulative = 0;
  for (std::size_t i = 0; i < metrics.episodes.size(); ++i) {
    const auto& row = metrics.episodes[i];
    CHECK(row.episode == i);
    CHECK(row.steps >= 1);
    CHECK(row.steps <= 100);
    cumulative += row.violated ? 1 : 0;
    CHECK(row.cumulative_violations == cumulative);
    CHECK(row.wall_ms == 0.0);
    if (row.violated) CHECK_FALSE(row.success);
  }
}

TEST_CASE("critic modes demand complete artifacts and a seeded buffer") {
  const mesa::env::EnvParams env = test_maze();
  Rng rng(17);
  mesa::sac::SacConfig sac_cfg;
  sac_cfg.hidden = {8};
  mesa::sac::SacAgent agent = mesa::sac::make_sac(2, 2, 0.1, sac_cfg, rng);
  auto critic = constant_critic(0.0, rng);
  auto recovery = constant_recovery({0.02, 0.01}, rng);
  Phase3Config cfg;
  cfg.episodes = 1;

  CHECK_THROWS_AS(mesa::exec::run_phase3(env, agent, nullptr, &recovery, AlgorithmMode::mesa,
                                         nullptr, cfg, rng),
                  mesa::ConfigError);
  OfflineDataset empty;
  empty.env_params = env;
  CHECK_THROWS_AS(mesa::exec::run_phase3(env, agent, &critic, &recovery, AlgorithmMode::mesa,
                                         &empty, cfg, rng),
                  mesa::ConfigError);
}

TEST_CASE("safety buffer stores the proposed action while the recovery action executes") {
  const mesa::env::EnvParams env = test_maze();
  Rng rng(91);
  mesa::sac::SacConfig sac_cfg;
  sac_cfg.hidden = {8};
  mesa::sac::SacAgent agent = mesa::sac::make_sac(2, 2, 0.1, sac_cfg, rng);

  // Constant risk ~0.95 > eps forces the recovery action every step; frozen
  // learning rates keep both safety nets constant for the audit.
  auto critic = constant_critic(std::log(0.95 / 0.05), rng);
  const std::array<double, 2> rec_action = {0.02, 0.01};
  auto recovery = constant_recovery(rec_action, rng);

  OfflineDataset buffer = seeded_buffer(env, 64, 7);
  const std::size_t seeded = buffer.size();

  Phase3Config cfg;
  cfg.episodes = 2;
  cfg.batch = 16;
  cfg.critic_lr = 0.0;
  cfg.recovery_lr = 0.0;
  RunMetrics metrics = mesa::exec::run_phase3(env, agent, &critic, &recovery,
                                              AlgorithmMode::mesa, &buffer, cfg, rng);

  std::size_t total_steps = 0;
  for (const auto& row : metrics.episodes) total_steps += row.steps;
  REQUIRE(buffer.size() == seeded + total_steps);

  double dx_sum = 0.0, dy_sum = 0.0;
  std::size_t clean = 0;
  for (std::size_t i = seeded; i < buffer.size(); ++i) {
    const TransitionRecord& r = buffer.records[i];
    // The stored action is the stochastic proposal, not the constant that
    // actually executed.
    CHECK_FALSE((r.action[0] == rec_action[0] && r.action[1] == rec_action[1]));
    if (r.constraint == 0.0 && interior(r.state) && interior(r.next_state)) {
      dx_sum += r.next_state[0] - r.state[0];
      dy_sum += r.next_state[1] - r.state[1];
      ++clean;
    }
  }
  // Maze dynamics are next = s + a + noise (sigma 0.005), so the mean clean
  // displacement identifies the executed action as the recovery constant.
  REQUIRE(clean >= 10);
  CHECK(std::abs(dx_sum / clean - rec_action[0]) < 0.01);
  CHECK(std::abs(dy_sum / clean - rec_action[1]) < 0.01);
}

TEST_CASE("threshold one never fires recovery: stored and executed actions coincide") {
  const mesa::env::EnvParams env = test_maze();
  Rng rng(92);
  mesa::sac::SacConfig sac_cfg;
  sac_cfg.hidden = {8};
  mesa::sac::SacAgent agent = mesa::sac::make_sac(2, 2, 0.1, sac_cfg, rng);
  auto critic = constant_critic(std::log(0.95 / 0.05), rng);  // high risk, but eps = 1
  auto recovery = constant_recovery({0.05, -0.05}, rng);

  OfflineDataset buffer = seeded_buffer(env, 64, 8);
  const std::size_t seeded = buffer.size();

  // A fresh agent starting at the left edge violates within a few steps, so
  // run enough episodes to gather auditable transitions.
  Phase3Config cfg;
  cfg.episodes = 10;
  cfg.batch = 16;
  cfg.eps_risk = 1.0;  // sigmoid output < 1, so the task action always passes
  cfg.critic_lr = 0.0;
  cfg.recovery_lr = 0.0;
  mesa::exec::run_phase3(env, agent, &critic, &recovery, AlgorithmMode::rrl, &buffer, cfg, rng);

  // The maze subjects positions to a hard clamp only at the rim, one action
  // bound beyond the unit square, so any transition landing strictly inside
  // the rim obeys next = s + a + noise exactly.
  const auto unclamped = [](const std::vector<double>& s) {
    return s[0] > -0.09 && s[0] < 1.09 && s[1] > -0.09 && s[1] < 1.09;
  };
  std::size_t audited = 0;
  for (std::size_t i = seeded; i < buffer.size(); ++i) {
    const TransitionRecord& r = buffer.records[i];
    if (!unclamped(r.next_state)) continue;
    // Here the proposal executed, so the displacement tracks the stored
    // action up to transition noise.
    CHECK(std::abs(r.next_state[0] - r.state[0] - r.action[0]) < 0.03);
    CHECK(std::abs(r.next_state[1] - r.state[1] - r.action[1]) < 0.03);
    ++audited;
  }
  CHECK(audited >= 5);
}

TEST_CASE("fixed seeds reproduce the run bit for bit") {
  const mesa::env::EnvParams env = test_maze();
  const auto make_run = [&]() {
    Rng init(123);
    mesa::sac::SacConfig sac_cfg;
    sac_cfg.hidden = {8};
    mesa::sac::SacAgent agent = mesa::sac::make_sac(2, 2, 0.1, sac_cfg, init);
    auto critic = mesa::safety::make_critic(2, 2, {8}, 0.8, init);
    auto recovery = mesa::safety::make_recovery(2, 2, {8}, 0.1, init);
    OfflineDataset buffer = seeded_buffer(env, 96, 9);
    Phase3Config cfg;
    cfg.episodes = 3;
    cfg.batch = 16;
    Rng run(456);
    RunMetrics metrics = mesa::exec::run_phase3(env, agent, &critic, &recovery,
                                                AlgorithmMode::mesa, &buffer, cfg, run);
    return std::tuple{metrics, agent.actor, critic.online, recovery.params, buffer};
  };
  const auto a = make_run();
  const auto b = make_run();
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
  CHECK(std::get<3>(a) == std::get<3>(b));
  CHECK(std::get<4>(a) == std::get<4>(b));
}

TEST_CASE("heatmap evaluates cell centers in row-major order") {
  Rng rng(61);
  auto critic = mesa::safety::make_critic(2, 2, {8}, 0.8, rng);
  const mesa::exec::StateActionRule rule = [](std::span<const double>) {
    return std::vector<double>{0.03, -0.02};
  };

  SUBCASE("zeroed critic gives the sigmoid midpoint everywhere") {
    critic.online.fill(0.0);
    const std::vector<double> grid =
        mesa::exec::evaluate_critic_heatmap(critic, rule, 4, 0.0, 1.0);
    REQUIRE(grid.size() == 16);
    for (double v : grid) CHECK(v == 0.5);
  }
  SUBCASE("grid of one evaluates the domain center") {
    const std::vector<double> grid =
        mesa::exec::evaluate_critic_heatmap(critic, rule, 1, 0.0, 1.0);
    REQUIRE(grid.size() == 1);
    const std::vector<double> center = {0.5, 0.5};
    CHECK(grid[0] == critic.value(center, rule(center)));
  }
  SUBCASE("layout matches y-major indexing of cell centers") {
    const std::size_t n = 5;
    const std::vector<double> grid =
        mesa::exec::evaluate_critic_heatmap(critic, rule, n, -0.5, 0.5);
    REQUIRE(grid.size() == n * n);
    for (const auto& [ix, iy] : std::vector<std::pair<std::size_t, std::size_t>>{
             {0, 0}, {4, 0}, {2, 3}, {4, 4}}) {
      const double pitch = 1.0 / static_cast<double>(n);
      const std::vector<double> state = {-0.5 + (ix + 0.5) * pitch, -0.5 + (iy + 0.5) * pitch};
      CHECK(grid[iy * n + ix] == critic.value(state, rule(state)));
    }
  }
}

TEST_CASE("balanced accuracy rewards both classes equally") {
  const std::vector<int> labels = {1, 1, 0, 0, 0, 1};
  SUBCASE("perfect scores hit accuracy one") {
    const std::vector<double> scores = {0.9, 0.8, 0.05, 0.0, 0.02, 0.99};
    CHECK(mesa::exec::balanced_accuracy(scores, labels, 0.1) == doctest::Approx(1.0));
  }
  SUBCASE("constant scores are chance level either way") {
    CHECK(mesa::exec::balanced_accuracy(std::vector<double>(6, 0.05), labels, 0.1) ==
          doctest::Approx(0.5));
    CHECK(mesa::exec::balanced_accuracy(std::vector<double>(6, 0.7), labels, 0.1) ==
          doctest::Approx(0.5));
  }
  SUBCASE("class imbalance does not dilute the minority class") {
    // Nine easy negatives plus one missed positive: plain accuracy would be
    // 0.9, balanced accuracy is 0.5.
    std::vector<int> skewed(10, 0);
    skewed[0] = 1;
    std::vector<double> scores(10, 0.0);
    CHECK(mesa::exec::balanced_accuracy(scores, skewed, 0.1) == doctest::Approx(0.5));
  }
  SUBCASE("single-class inputs are rejected") {
    CHECK_THROWS_AS(
        mesa::exec::balanced_accuracy(std::vector<double>(3, 0.5), std::vector<int>(3, 1), 0.1),
        mesa::ConfigError);
  }
}

TEST_CASE("oracle labels mark wall cells risky and track the exact state risk") {
  const mesa::env::EnvParams env = test_maze();
  // Grid 16 is too coarse here: every cell's random-policy risk exceeds 0.1
  // (cells span 0.0625 while actions reach 0.1). Grid 32 resolves safe cells.
  const std::size_t grid_n = 32;
  const double gamma_risk = 0.8;
  const double eps = 0.1;
  const mesa::exec::RiskLabels labels =
      mesa::exec::oracle_risk_labels(env, grid_n, 3, gamma_risk, eps);
  REQUIRE(labels.states.size() == grid_n * grid_n);
  REQUIRE(labels.labels.size() == grid_n * grid_n);

  std::size_t risky = 0, safe = 0;
  for (std::size_t i = 0; i < labels.states.size(); ++i) {
    if (mesa::env::constraint_violated(env, labels.states[i])) CHECK(labels.labels[i] == 1);
    risky += labels.labels[i];
    safe += 1 - labels.labels[i];
  }
  CHECK(risky > 0);
  CHECK(safe > 0);

  // Scoring the states with the oracle's own state risk classifies perfectly.
  const auto spec = mesa::env::spec_for(env.family);
  const auto actions = mesa::oracle::midpoint_action_set(spec.action_bound, 3);
  const auto disc = mesa::oracle::discretize_nav(env, grid_n, actions, gamma_risk);
  const auto v = mesa::oracle::exact_risk(disc.mdp, mesa::oracle::uniform_policy(disc.mdp));
  const auto w = mesa::oracle::td_state_risk(disc.mdp, v);
  std::vector<double> scores(labels.states.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    scores[i] = w[disc.grid.cell_of(labels.states[i][0], labels.states[i][1])];
  CHECK(mesa::exec::balanced_accuracy(scores, labels.labels, eps) == doctest::Approx(1.0));
}

TEST_CASE("classification eval scores a constant critic at chance level") {
  Rng rng(71);
  auto critic = constant_critic(std::log(0.25 / 0.75), rng);
  const mesa::exec::RiskLabels labels =
      mesa::exec::oracle_risk_labels(test_maze(), 32, 3, 0.8, 0.1);
  const auto probes = mesa::oracle::midpoint_action_set(0.1, 3);
  CHECK(mesa::exec::classification_eval(critic, labels, probes, 0.1) == doctest::Approx(0.5));
}

TEST_CASE("lower risk thresholds do not increase violations with an adapted critic") {
  const mesa::env::EnvParams env = test_maze();

  // Adapt a small critic/recovery pair once on random data, then freeze them
  // and compare switching thresholds.
  Rng prep(2025);
  auto critic = mesa::safety::make_critic(2, 2, {16, 16}, 0.8, prep);
  auto recovery = mesa::safety::make_recovery(2, 2, {16, 16}, 0.1, prep);
  OfflineDataset adapt_set = seeded_buffer(env, 1500, 33);
  mesa::safety::AdaptConfig acfg;
  acfg.steps = 200;
  acfg.batch = 32;
  mesa::safety::adapt_phase2(critic, recovery, adapt_set, acfg, prep);

  const auto violations_at = [&](double eps) {
    std::size_t total = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      mesa::sac::SacConfig sac_cfg;
      sac_cfg.hidden = {16};
      mesa::sac::SacAgent agent = mesa::sac::make_sac(2, 2, 0.1, sac_cfg, rng);
      auto critic_copy = critic;
      auto recovery_copy = recovery;
      OfflineDataset buffer = adapt_set;
      Phase3Config cfg;
      cfg.episodes = 20;
      cfg.batch = 16;
      cfg.eps_risk = eps;
      cfg.critic_lr = 0.0;
      cfg.recovery_lr = 0.0;
      total += mesa::exec::run_phase3(env, agent, &critic_copy, &recovery_copy,
                                      AlgorithmMode::mesa, &buffer, cfg, rng)
                   .total_violations();
    }
    return total;
  };

  CHECK(violations_at(0.05) <= violations_at(0.3));
}
