#pragma once

// Online learning loop: the task policy proposes actions, the safety critic
// decides when to fall back to the recovery policy, and every component
// keeps learning from the growing replay buffers. Also hosts the critic
// evaluation utilities (heatmaps, oracle-labelled classification).

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "mesa/datasets.hpp"
#include "mesa/envs.hpp"
#include "mesa/rng.hpp"
#include "mesa/safety.hpp"
#include "mesa/taskpolicy.hpp"

namespace mesa::exec {

enum class AlgorithmMode { unconstrained, rrl, multitask, mesa };

const char* mode_name(AlgorithmMode mode);
AlgorithmMode mode_from_name(std::string_view name);

// Every mode except unconstrained runs the critic/recovery switch.
bool uses_critic(AlgorithmMode mode);

struct EpisodeRow {
  std::size_t episode = 0;
  double episode_return = 0.0;
  std::size_t steps = 0;
  bool success = false;
  bool violated = false;  // episode ended on a constraint violation
  std::size_t cumulative_violations = 0;
  double wall_ms = 0.0;

  bool operator==(const EpisodeRow&) const = default;
};

struct RunMetrics {
  std::vector<EpisodeRow> episodes;

  std::size_t total_violations() const;
  // Fraction of successful episodes; last_k = 0 averages over all episodes.
  double success_rate(std::size_t last_k = 0) const;
  double mean_return(std::size_t last_k = 0) const;

  bool operator==(const RunMetrics&) const = default;
};

struct ActionChoice {
  std::vector<double> action;
  bool used_recovery = false;
};

// Executes the task action iff the critic's risk at it is <= eps_risk
// (inclusive), otherwise the recovery action.
ActionChoice select_action(const safety::SafetyCritic& critic, std::span<const double> state,
                           std::vector<double> task_action, std::vector<double> recovery_action,
                           double eps_risk);

struct Phase3Config {
  std::size_t episodes = 1000;
  double eps_risk = 0.1;
  std::size_t batch = 256;         // per-step update batch for every learner
  double critic_lr = 0.001;        // safety-critic Adam rate (mode-specific)
  double recovery_lr = 0.0003;
  double polyak_tau = 0.005;
  // Task-policy updates start once the task buffer holds one full batch;
  // critic/recovery updates run from step one because the safety buffer is
  // pre-seeded with the offline adaptation data.
  bool record_wall_time = false;  // off by default so runs are bit-reproducible
};

// One online run over cfg.episodes episodes. The agent always proposes; in
// critic modes the switch rule picks what executes, the safety buffer
// receives the *proposed* action with the observed outcome, and the task
// buffer receives the executed action. Unconstrained mode ignores critic,
// recovery, and safety_buffer (they may be null). Episodes end on violation,
// success, or the family horizon. All passed-in learners are updated in
// place every step.
RunMetrics run_phase3(const env::EnvParams& env, sac::SacAgent& agent,
                      safety::SafetyCritic* critic, safety::RecoveryPolicy* recovery,
                      AlgorithmMode mode, data::OfflineDataset* safety_buffer,
                      const Phase3Config& cfg, Rng& rng);

using StateActionRule = std::function<std::vector<double>(std::span<const double>)>;

// Risk surface over [lo, hi]^2: grid_n x grid_n cell centers, row-major with
// y as the slow index. The action at each state comes from the rule
// (typically the recovery policy).
std::vector<double> evaluate_critic_heatmap(const safety::SafetyCritic& critic,
                                            const StateActionRule& action_rule,
                                            std::size_t grid_n, double lo, double hi);

// Mean critic risk over a fixed probe action set; a policy-free state score.
double probe_risk(const safety::SafetyCritic& critic, std::span<const double> state,
                  std::span<const std::array<double, 2>> probes);

struct RiskLabels {
  std::vector<std::array<double, 2>> states;  // grid cell centers
  std::vector<int> labels;                    // 1 = risky under the oracle
};

// Ground-truth labels for planar families: discretize the environment, solve
// the uniform-random-policy risk exactly, and mark a cell risky when its
// state risk exceeds eps_risk. The sink cell is excluded.
RiskLabels oracle_risk_labels(const env::EnvParams& env, std::size_t grid_n,
                              std::size_t actions_per_dim, double gamma_risk, double eps_risk);

// Balanced accuracy (mean of true-positive and true-negative rates) of
// "score > eps_risk" predictions against binary labels. Requires both
// classes present.
double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                         double eps_risk);

// Scores every labelled state with the probe-set mean risk and thresholds at
// eps_risk.
double classification_eval(const safety::SafetyCritic& critic, const RiskLabels& labels,
                           std::span<const std::array<double, 2>> probes, double eps_risk);

}  // namespace mesa::exec
