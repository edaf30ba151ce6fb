#include "mesa/executor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "mesa/errors.hpp"
#include "mesa/oracle.hpp"

namespace mesa::exec {

namespace {

std::vector<data::TransitionRecord> sample_with_replacement(
    const std::vector<data::TransitionRecord>& buffer, std::size_t k, Rng& rng) {
  std::vector<data::TransitionRecord> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(buffer[rng.index(buffer.size())]);
  return out;
}

}  // namespace

const char* mode_name(AlgorithmMode mode) {
  switch (mode) {
    case AlgorithmMode::unconstrained: return "unconstrained";
    case AlgorithmMode::rrl: return "rrl";
    case AlgorithmMode::multitask: return "multitask";
    case AlgorithmMode::mesa: return "mesa";
  }
  throw ConfigError("unknown algorithm mode value");
}

AlgorithmMode mode_from_name(std::string_view name) {
  for (AlgorithmMode m : {AlgorithmMode::unconstrained, AlgorithmMode::rrl,
                          AlgorithmMode::multitask, AlgorithmMode::mesa})
    if (name == mode_name(m)) return m;
  throw ConfigError("unknown algorithm mode: " + std::string(name));
}

bool uses_critic(AlgorithmMode mode) { return mode != AlgorithmMode::unconstrained; }

std::size_t RunMetrics::total_violations() const {
  return episodes.empty() ? 0 : episodes.back().cumulative_violations;
}

double RunMetrics::success_rate(std::size_t last_k) const {
  if (episodes.empty()) return 0.0;
  const std::size_t k = (last_k == 0 || last_k > episodes.size()) ? episodes.size() : last_k;
  std::size_t hits = 0;
  for (std::size_t i = episodes.size() - k; i < episodes.size(); ++i)
    hits += episodes[i].success ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

double RunMetrics::mean_return(std::size_t last_k) const {
  if (episodes.empty()) return 0.0;
  const std::size_t k = (last_k == 0 || last_k > episodes.size()) ? episodes.size() : last_k;
  double sum = 0.0;
  for (std::size_t i = episodes.size() - k; i < episodes.size(); ++i)
    sum += episodes[i].episode_return;
  return sum / static_cast<double>(k);
}

ActionChoice select_action(const safety::SafetyCritic& critic, std::span<const double> state,
                           std::vector<double> task_action, std::vector<double> recovery_action,
                           double eps_risk) {
  if (eps_risk < 0.0 || eps_risk > 1.0)
    throw ConfigError("select_action: eps_risk must lie in [0, 1]");
  const double risk = critic.value(state, task_action);
  ActionChoice choice;
  if (risk <= eps_risk) {
    choice.action = std::move(task_action);
    choice.used_recovery = false;
  } else {
    choice.action = std::move(recovery_action);
    choice.used_recovery = true;
  }
  return choice;
}

RunMetrics run_phase3(const env::EnvParams& env, sac::SacAgent& agent,
                      safety::SafetyCritic* critic, safety::RecoveryPolicy* recovery,
                      AlgorithmMode mode, data::OfflineDataset* safety_buffer,
                      const Phase3Config& cfg, Rng& rng) {
  const env::CmdpSpec spec = env::spec_for(env.family);
  if (agent.state_dim != spec.state_dim || agent.action_dim != spec.action_dim)
    throw ShapeError("run_phase3: agent dimensions do not match the environment");
  if (cfg.batch == 0) throw ConfigError("run_phase3: batch size must be positive");
  if (uses_critic(mode)) {
    if (critic == nullptr || recovery == nullptr || safety_buffer == nullptr)
      throw ConfigError("run_phase3: this mode needs a critic, recovery policy, and "
                        "safety buffer");
    if (critic->state_dim != spec.state_dim || critic->action_dim != spec.action_dim)
      throw ShapeError("run_phase3: critic dimensions do not match the environment");
    if (safety_buffer->records.empty())
      throw ConfigError("run_phase3: safety buffer must be pre-seeded with offline data");
  }

  net::AdamState critic_opt;
  net::AdamState recovery_opt;
  safety::NextActionSource task_bootstrap;
  if (uses_critic(mode)) {
    critic_opt = net::AdamState::make(critic->online, cfg.critic_lr);
    recovery_opt = net::AdamState::make(recovery->params, cfg.recovery_lr);
    // Online phase: TD bootstrap actions come from the current task policy.
    task_bootstrap = [&agent, &rng](std::span<const double> s) {
      return sac::act(agent, s, sac::ActMode::sample, &rng);
    };
  }

  std::vector<data::TransitionRecord> task_buffer;
  RunMetrics metrics;
  metrics.episodes.reserve(cfg.episodes);
  std::size_t cumulative = 0;

  for (std::size_t episode = 0; episode < cfg.episodes; ++episode) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<double> state = env::reset(env, rng);
    EpisodeRow row;
    row.episode = episode;

    for (int t = 0; t < spec.horizon; ++t) {
      std::vector<double> proposed = sac::act(agent, state, sac::ActMode::sample, &rng);
      std::vector<double> executed;
      if (uses_critic(mode)) {
        ActionChoice choice =
            select_action(*critic, state, proposed, recovery->act(state), cfg.eps_risk);
        executed = std::move(choice.action);
      } else {
        executed = proposed;
      }

      const env::StepResult sr = env::step(env, state, executed, rng);
      row.episode_return += sr.reward;
      ++row.steps;

      if (uses_critic(mode)) {
        data::TransitionRecord safety_rec;
        safety_rec.state = state;
        safety_rec.action = proposed;  // the proposal, not what executed
        safety_rec.constraint = sr.constraint ? 1.0 : 0.0;
        safety_rec.reward = sr.reward;
        safety_rec.next_state = sr.next_state;
        safety_rec.done = sr.done || sr.constraint;
        safety_buffer->records.push_back(std::move(safety_rec));
      }
      data::TransitionRecord task_rec;
      task_rec.state = state;
      task_rec.action = executed;
      task_rec.constraint = sr.constraint ? 1.0 : 0.0;
      task_rec.reward = sr.reward;
      task_rec.next_state = sr.next_state;
      task_rec.done = sr.done;
      task_buffer.push_back(std::move(task_rec));

      // Per-step updates: task policy, then critic, then recovery policy.
      if (task_buffer.size() >= cfg.batch)
        sac::sac_update(agent, sample_with_replacement(task_buffer, cfg.batch, rng), rng);
      if (uses_critic(mode)) {
        const std::vector<data::TransitionRecord> safety_batch =
            sample_with_replacement(safety_buffer->records, cfg.batch, rng);
        safety::critic_update_step(*critic, critic_opt, safety_batch, task_bootstrap,
                                   cfg.polyak_tau);
        std::vector<std::vector<double>> states;
        states.reserve(safety_batch.size());
        for (const data::TransitionRecord& r : safety_batch) states.push_back(r.state);
        safety::recovery_update_step(*recovery, recovery_opt, *critic, states);
      }

      state = sr.next_state;
      row.success = sr.success;
      if (sr.done) {
        row.violated = sr.constraint;
        break;
      }
    }
    // Cartpole has no goal flag: surviving the whole horizon counts.
    if (env.family == env::Family::cartpole) row.success = !row.violated;

    cumulative += row.violated ? 1 : 0;
    row.cumulative_violations = cumulative;
    if (cfg.record_wall_time) {
      const auto elapsed = std::chrono::steady_clock::now() - started;
      row.wall_ms =
          std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(elapsed).count();
    }
    metrics.episodes.push_back(std::move(row));
  }
  return metrics;
}

std::vector<double> evaluate_critic_heatmap(const safety::SafetyCritic& critic,
                                            const StateActionRule& action_rule,
                                            std::size_t grid_n, double lo, double hi) {
  if (grid_n == 0) throw ConfigError("heatmap: grid size must be positive");
  if (!(hi > lo)) throw ConfigError("heatmap: domain bounds must satisfy lo < hi");
  if (!action_rule) throw ConfigError("heatmap: action rule must be set");
  const double pitch = (hi - lo) / static_cast<double>(grid_n);
  std::vector<double> values;
  values.reserve(grid_n * grid_n);
  for (std::size_t iy = 0; iy < grid_n; ++iy) {
    const double y = lo + (static_cast<double>(iy) + 0.5) * pitch;
    for (std::size_t ix = 0; ix < grid_n; ++ix) {
      const double x = lo + (static_cast<double>(ix) + 0.5) * pitch;
      const std::vector<double> state = {x, y};
      values.push_back(critic.value(state, action_rule(state)));
    }
  }
  return values;
}

double probe_risk(const safety::SafetyCritic& critic, std::span<const double> state,
                  std::span<const std::array<double, 2>> probes) {
  if (critic.action_dim != 2) throw ShapeError("probe_risk: needs a planar action space");
  if (probes.empty()) throw ConfigError("probe_risk: empty probe set");
  double sum = 0.0;
  for (const std::array<double, 2>& a : probes) sum += critic.value(state, a);
  return sum / static_cast<double>(probes.size());
}

RiskLabels oracle_risk_labels(const env::EnvParams& env, std::size_t grid_n,
                              std::size_t actions_per_dim, double gamma_risk, double eps_risk) {
  if (env.family == env::Family::cartpole)
    throw ConfigError("oracle_risk_labels: only planar families are supported");
  const env::CmdpSpec spec = env::spec_for(env.family);
  const std::vector<std::array<double, 2>> actions =
      oracle::midpoint_action_set(spec.action_bound, actions_per_dim);
  const oracle::DiscretizedNav disc = oracle::discretize_nav(env, grid_n, actions, gamma_risk);
  const std::vector<double> v = oracle::exact_risk(disc.mdp, oracle::uniform_policy(disc.mdp));
  const std::vector<double> w = oracle::td_state_risk(disc.mdp, v);

  RiskLabels out;
  out.states.reserve(grid_n * grid_n);
  out.labels.reserve(grid_n * grid_n);
  for (std::size_t cell = 0; cell < disc.grid.sink(); ++cell) {
    out.states.push_back(disc.grid.center_of(cell));
    out.labels.push_back(w[cell] > eps_risk ? 1 : 0);
  }
  return out;
}

double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                         double eps_risk) {
  if (scores.size() != labels.size() || scores.empty())
    throw ShapeError("balanced_accuracy: scores and labels must align and be non-empty");
  std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted_risky = scores[i] > eps_risk;
    if (labels[i] != 0) {
      ++pos;
      tp += predicted_risky ? 1 : 0;
    } else {
      ++neg;
      tn += predicted_risky ? 0 : 1;
    }
  }
  if (pos == 0 || neg == 0)
    throw ConfigError("balanced_accuracy: needs both classes present");
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) +
                static_cast<double>(tn) / static_cast<double>(neg));
}

double classification_eval(const safety::SafetyCritic& critic, const RiskLabels& labels,
                           std::span<const std::array<double, 2>> probes, double eps_risk) {
  std::vector<double> scores;
  scores.reserve(labels.states.size());
  for (const std::array<double, 2>& s : labels.states)
    scores.push_back(probe_risk(critic, s, probes));
  return balanced_accuracy(scores, labels.labels, eps_risk);
}

}  // namespace mesa::exec
