#pragma once

// Soft actor-critic task policy: tanh-squashed Gaussian actor, twin critics
// with Polyak-averaged targets, and optional automatic entropy-temperature
// tuning. Used for online task learning and for generating replay-style
// offline datasets from checkpointed policies.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mesa/checkpoint.hpp"
#include "mesa/datasets.hpp"
#include "mesa/envs.hpp"
#include "mesa/net.hpp"
#include "mesa/rng.hpp"

namespace mesa::sac {

enum class ActMode { sample, mean };

struct SacConfig {
  std::vector<std::size_t> hidden = {256, 256};
  double lr = 0.0003;
  double gamma = 0.99;
  double polyak_tau = 0.005;
  double init_temperature = 1.0;
  bool auto_temperature = true;  // tunes toward target entropy -action_dim
};

// Scalar Adam for the log-temperature parameter.
struct ScalarAdam {
  double lr = 0.0003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  double m = 0.0;
  double v = 0.0;

  void update(double& x, double g);
};

struct SacAgent {
  net::ParameterSet actor;  // identity head: [pre-squash mean, raw log-std]
  net::ParameterSet critic1;
  net::ParameterSet critic2;
  net::ParameterSet target1;
  net::ParameterSet target2;
  double log_temperature = 0.0;
  double gamma = 0.99;
  double polyak_tau = 0.005;
  double target_entropy = -1.0;
  bool auto_temperature = true;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  double action_bound = 1.0;

  // Optimizer state lives with the agent; checkpoints persist parameters and
  // scalars only, so a resumed agent restarts with fresh moments.
  net::AdamState actor_opt;
  net::AdamState critic1_opt;
  net::AdamState critic2_opt;
  ScalarAdam temperature_opt;

  double temperature() const;
};

SacAgent make_sac(std::size_t state_dim, std::size_t action_dim, double action_bound,
                  const SacConfig& cfg, Rng& rng);

// mean mode is deterministic and ignores rng; sample mode requires one.
std::vector<double> act(const SacAgent& agent, std::span<const double> state, ActMode mode,
                        Rng* rng = nullptr);

// TD targets y = r + gamma * (1 - done) * (min target Q(s', a') - alpha *
// log pi(a'|s')) with a' sampled from the current actor. Terminal records get
// y = r exactly.
std::vector<double> sac_targets(const SacAgent& agent,
                                std::span<const data::TransitionRecord> batch, Rng& rng);

struct SacLosses {
  double critic1 = 0.0;
  double critic2 = 0.0;
  double actor = 0.0;
  double temperature = 0.0;
  double entropy = 0.0;  // Monte-Carlo estimate from the actor samples
};

// One full update: both critics toward sac_targets, reparameterized actor
// step against the minimum critic, temperature step (when auto-tuned), then
// Polyak target updates.
SacLosses sac_update(SacAgent& agent, std::span<const data::TransitionRecord> batch, Rng& rng);

ckpt::Checkpoint to_checkpoint(const SacAgent& agent);
SacAgent from_checkpoint(const ckpt::Checkpoint& ckpt);

// Rolls out the checkpointed stochastic policy (sample mode, standard
// terminate-on-done episodes) and logs the transitions.
data::OfflineDataset collect_policy_replay(const env::EnvParams& env,
                                           const std::string& checkpoint_path,
                                           std::size_t n_episodes, Rng& rng);

}  // namespace mesa::sac
