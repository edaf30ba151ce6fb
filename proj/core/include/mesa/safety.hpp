#pragma once

// Safety critic (discounted future probability of constraint violation) and
// the recovery policy that descends it. Covers offline meta-training across
// environments, pooled multi-task training, test-time adaptation, and the
// single-step updates used during online learning.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mesa/checkpoint.hpp"
#include "mesa/datasets.hpp"
#include "mesa/net.hpp"
#include "mesa/rng.hpp"

namespace mesa::safety {

// Sigmoid-head network over the concatenated state-action vector, plus a
// Polyak-averaged target copy used for TD bootstrap targets.
struct SafetyCritic {
  net::ParameterSet online;
  net::ParameterSet target;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  double gamma_risk = 0.8;

  double value(std::span<const double> state, std::span<const double> action) const;
  double target_value(std::span<const double> state, std::span<const double> action) const;
};

SafetyCritic make_critic(std::size_t state_dim, std::size_t action_dim,
                         const std::vector<std::size_t>& hidden, double gamma_risk, Rng& rng);

// Deterministic policy: tanh-head network scaled to the action bound.
struct RecoveryPolicy {
  net::ParameterSet params;
  double action_bound = 0.1;

  std::vector<double> act(std::span<const double> state) const;
};

RecoveryPolicy make_recovery(std::size_t state_dim, std::size_t action_dim,
                             const std::vector<std::size_t>& hidden, double action_bound,
                             Rng& rng);

// target = c + gamma_risk * (1 - c) * q_next. Inputs c in {0,1} and
// q_next in [0,1] give a target in [0,1].
double td_target(double c, double q_next, double gamma_risk);

// Supplies the bootstrap action a' for a next state s'.
using NextActionSource = std::function<std::vector<double>(std::span<const double>)>;

// Source that always evaluates the current parameters of `policy` (held by
// reference; the policy must outlive the returned source).
NextActionSource recovery_action_source(const RecoveryPolicy& policy);

// Network inputs s‖a with stop-gradient TD targets from the target network.
// The bootstrap term is masked on terminal records.
net::Batch td_batch(const SafetyCritic& critic, std::span<const data::TransitionRecord> records,
                    const NextActionSource& next_action);

struct LossGrad {
  double loss = 0.0;
  net::Gradient grad;
};

// Mean squared error between the online critic and the TD targets; the
// gradient flows only through the online evaluation of (s, a).
LossGrad critic_loss(const SafetyCritic& critic, std::span<const data::TransitionRecord> batch,
                     const NextActionSource& next_action);

// Mean critic value at the policy's own actions; the gradient covers only the
// policy parameters (the critic stays frozen).
LossGrad recovery_loss(const RecoveryPolicy& policy, const SafetyCritic& critic,
                       std::span<const std::vector<double>> states);

// One Adam step on critic_loss followed by a Polyak target update. Returns
// the minibatch loss before the step.
double critic_update_step(SafetyCritic& critic, net::AdamState& opt,
                          std::span<const data::TransitionRecord> batch,
                          const NextActionSource& next_action, double polyak_tau);

// One Adam step on recovery_loss. Returns the minibatch objective before the
// step.
double recovery_update_step(RecoveryPolicy& policy, net::AdamState& opt,
                            const SafetyCritic& critic,
                            std::span<const std::vector<double>> states);

struct MetaTrainConfig {
  std::size_t iterations = 10000;  // 15000 at cartpole scale
  std::size_t task_batch = 5;      // environments sampled per iteration
  std::size_t inner_batch = 256;
  std::size_t outer_batch = 256;
  double inner_lr = 0.001;
  double outer_lr = 0.00001;
  double recovery_lr = 0.0003;
  std::size_t adapt_steps = 500;  // navigation-scale runs use 100
  net::MetaMode mode = net::MetaMode::first_order;
  double polyak_tau = 0.005;
};

struct Phase1Trace {
  std::vector<double> outer_loss;      // mean over the task batch
  std::vector<double> recovery_value;  // objective on the adaptation batch
};

// Offline meta-training. Per iteration: sample task_batch training datasets
// (with replacement when fewer datasets exist); per dataset take one inner
// step (inner_lr) on an inner batch and accumulate the outer gradient on a
// disjoint batch from the same dataset; apply the summed outer step
// (outer_lr); Polyak-update the target; take one recovery step (recovery_lr,
// Adam) on a batch of adaptation-set states. Bootstrap actions come from the
// recovery policy as it trains. Reads only states, actions, constraint flags,
// next states and termination flags — never rewards.
Phase1Trace meta_train_phase1(SafetyCritic& critic, RecoveryPolicy& recovery,
                              std::span<const data::OfflineDataset> train,
                              const data::OfflineDataset& adaptation_set,
                              const MetaTrainConfig& cfg, Rng& rng);

struct PooledTrainConfig {
  std::size_t iterations = 10000;
  std::size_t batch = 256;
  double adam_lr = 0.0003;
  double polyak_tau = 0.005;
};

// Multi-task baseline: per iteration one Adam TD step on a batch drawn
// uniformly from the union of the training datasets. Trains the critic only.
Phase1Trace pooled_train_phase1(SafetyCritic& critic,
                                std::span<const data::OfflineDataset> train,
                                const NextActionSource& next_action,
                                const PooledTrainConfig& cfg, Rng& rng);

struct AdaptConfig {
  std::size_t steps = 500;  // navigation-scale runs use 100
  std::size_t batch = 256;  // navigation-scale runs use 64
  double critic_lr = 0.001;
  double recovery_lr = 0.0003;
  double polyak_tau = 0.005;
  double heldout_fraction = 0.0;  // > 0 reserves a split for trace evaluation
  std::size_t trace_every = 0;    // 0 records only the first and last step
  // When set, TD bootstrap actions come from this source instead of the
  // recovery policy, letting the critic estimate a chosen policy's risk
  // (e.g. the policy that collected the data).
  NextActionSource bootstrap_override;
};

struct AdaptTraceRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double heldout_loss = 0.0;  // NaN when no held-out split was reserved
};

// Test-time adaptation: `steps` Adam steps of critic_loss and recovery_loss
// on batches from the adaptation dataset, with a Polyak target update each
// step. Bootstrap actions come from the recovery policy as it trains.
std::vector<AdaptTraceRow> adapt_phase2(SafetyCritic& critic, RecoveryPolicy& recovery,
                                        const data::OfflineDataset& adaptation_set,
                                        const AdaptConfig& cfg, Rng& rng);

// Checkpoint round trip for a critic/recovery pair.
ckpt::Checkpoint to_checkpoint(const SafetyCritic& critic, const RecoveryPolicy& recovery);
void from_checkpoint(const ckpt::Checkpoint& ckpt, SafetyCritic& critic,
                     RecoveryPolicy& recovery);

}  // namespace mesa::safety
