#include "mesa/taskpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mesa/errors.hpp"

namespace mesa::sac {

namespace {

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// log(1 - tanh(z)^2) in a form that stays finite for saturated z.
double log_one_minus_tanh_sq(double z) {
  return 2.0 * (std::log(2.0) - z - softplus(-2.0 * z));
}

std::vector<double> concat(std::span<const double> state, std::span<const double> action) {
  std::vector<double> joint;
  joint.reserve(state.size() + action.size());
  joint.insert(joint.end(), state.begin(), state.end());
  joint.insert(joint.end(), action.begin(), action.end());
  return joint;
}

struct ActorSample {
  std::vector<double> action;   // squashed and scaled
  std::vector<double> z;        // pre-squash draw
  std::vector<double> xi;       // standard-normal noise
  std::vector<double> sigma;    // post-clamp standard deviation
  std::vector<double> in_clamp; // 1 where the raw log-std was inside the clamp
  double log_prob = 0.0;
};

// One stochastic actor draw with everything the gradients need.
ActorSample sample_actor(const SacAgent& agent, std::span<const double> state, Rng& rng,
                         net::EvalTrace* trace) {
  const std::vector<double> out =
      trace ? net::forward_trace(agent.actor, net::Head::identity, state, *trace)
            : net::forward(agent.actor, net::Head::identity, state);
  const std::size_t dim = agent.action_dim;
  ActorSample s;
  s.action.resize(dim);
  s.z.resize(dim);
  s.xi.resize(dim);
  s.sigma.resize(dim);
  s.in_clamp.resize(dim);
  for (std::size_t k = 0; k < dim; ++k) {
    const double mean = out[k];
    const double raw = out[dim + k];
    const double log_std = std::clamp(raw, kLogStdMin, kLogStdMax);
    s.in_clamp[k] = (raw > kLogStdMin && raw < kLogStdMax) ? 1.0 : 0.0;
    s.sigma[k] = std::exp(log_std);
    s.xi[k] = rng.normal(0.0, 1.0);
    s.z[k] = mean + s.sigma[k] * s.xi[k];
    s.action[k] = agent.action_bound * std::tanh(s.z[k]);
    s.log_prob += -log_std - 0.5 * s.xi[k] * s.xi[k] - kHalfLog2Pi -
                  log_one_minus_tanh_sq(s.z[k]) - std::log(agent.action_bound);
  }
  return s;
}

void check_batch(const SacAgent& agent, std::span<const data::TransitionRecord> batch) {
  if (batch.empty()) throw ShapeError("sac: empty batch");
  for (const data::TransitionRecord& r : batch)
    if (r.state.size() != agent.state_dim || r.next_state.size() != agent.state_dim ||
        r.action.size() != agent.action_dim)
      throw ShapeError("sac: record dimensions do not match the agent");
}

}  // namespace

void ScalarAdam::update(double& x, double g) {
  ++step;
  m = beta1 * m + (1.0 - beta1) * g;
  v = beta2 * v + (1.0 - beta2) * g * g;
  const double mhat = m / (1.0 - std::pow(beta1, step));
  const double vhat = v / (1.0 - std::pow(beta2, step));
  x -= lr * mhat / (std::sqrt(vhat) + eps);
}

double SacAgent::temperature() const { return std::exp(log_temperature); }

SacAgent make_sac(std::size_t state_dim, std::size_t action_dim, double action_bound,
                  const SacConfig& cfg, Rng& rng) {
  if (state_dim == 0 || action_dim == 0)
    throw ShapeError("sac: state and action dims must be positive");
  if (!(action_bound > 0.0)) throw ConfigError("sac: action bound must be positive");
  if (!(cfg.init_temperature > 0.0)) throw ConfigError("sac: temperature must be positive");

  SacAgent agent;
  agent.state_dim = state_dim;
  agent.action_dim = action_dim;
  agent.action_bound = action_bound;
  agent.gamma = cfg.gamma;
  agent.polyak_tau = cfg.polyak_tau;
  agent.target_entropy = -static_cast<double>(action_dim);
  agent.auto_temperature = cfg.auto_temperature;
  agent.log_temperature = std::log(cfg.init_temperature);

  agent.actor = net::ParameterSet::random_init(
      net::ParameterSet::mlp_shapes(state_dim, cfg.hidden, 2 * action_dim), rng);
  agent.critic1 = net::ParameterSet::random_init(
      net::ParameterSet::mlp_shapes(state_dim + action_dim, cfg.hidden, 1), rng);
  agent.critic2 = net::ParameterSet::random_init(
      net::ParameterSet::mlp_shapes(state_dim + action_dim, cfg.hidden, 1), rng);
  agent.target1 = agent.critic1;
  agent.target2 = agent.critic2;

  agent.actor_opt = net::AdamState::make(agent.actor, cfg.lr);
  agent.critic1_opt = net::AdamState::make(agent.critic1, cfg.lr);
  agent.critic2_opt = net::AdamState::make(agent.critic2, cfg.lr);
  agent.temperature_opt.lr = cfg.lr;
  return agent;
}

std::vector<double> act(const SacAgent& agent, std::span<const double> state, ActMode mode,
                        Rng* rng) {
  if (state.size() != agent.state_dim)
    throw ShapeError("sac act: state dimension does not match the agent");
  if (mode == ActMode::mean) {
    const std::vector<double> out = net::forward(agent.actor, net::Head::identity, state);
    std::vector<double> a(agent.action_dim);
    for (std::size_t k = 0; k < agent.action_dim; ++k)
      a[k] = agent.action_bound * std::tanh(out[k]);
    return a;
  }
  if (rng == nullptr) throw ConfigError("sac act: sample mode needs a generator");
  return sample_actor(agent, state, *rng, nullptr).action;
}

std::vector<double> sac_targets(const SacAgent& agent,
                                std::span<const data::TransitionRecord> batch, Rng& rng) {
  check_batch(agent, batch);
  const double alpha = agent.temperature();
  std::vector<double> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const data::TransitionRecord& r = batch[i];
    if (r.done) {
      y[i] = r.reward;
      continue;
    }
    const ActorSample next = sample_actor(agent, r.next_state, rng, nullptr);
    const std::vector<double> joint = concat(r.next_state, next.action);
    const double q1 = net::forward(agent.target1, net::Head::identity, joint)[0];
    const double q2 = net::forward(agent.target2, net::Head::identity, joint)[0];
    y[i] = r.reward + agent.gamma * (std::min(q1, q2) - alpha * next.log_prob);
  }
  return y;
}

SacLosses sac_update(SacAgent& agent, std::span<const data::TransitionRecord> batch, Rng& rng) {
  check_batch(agent, batch);
  const std::size_t n = batch.size();
  SacLosses losses;

  // Critic regression toward the sampled targets.
  const std::vector<double> y = sac_targets(agent, batch, rng);
  net::Batch critic_batch;
  critic_batch.n = n;
  critic_batch.in_dim = agent.state_dim + agent.action_dim;
  critic_batch.out_dim = 1;
  critic_batch.targets = y;
  critic_batch.inputs.reserve(n * critic_batch.in_dim);
  for (const data::TransitionRecord& r : batch) {
    critic_batch.inputs.insert(critic_batch.inputs.end(), r.state.begin(), r.state.end());
    critic_batch.inputs.insert(critic_batch.inputs.end(), r.action.begin(), r.action.end());
  }
  net::Gradient g1(agent.critic1.shapes());
  net::Gradient g2(agent.critic2.shapes());
  losses.critic1 = net::mse_backward(agent.critic1, net::Head::identity, critic_batch, g1);
  losses.critic2 = net::mse_backward(agent.critic2, net::Head::identity, critic_batch, g2);
  net::adam_step(agent.critic1, g1, agent.critic1_opt);
  net::adam_step(agent.critic2, g2, agent.critic2_opt);

  // Reparameterized actor step against the minimum of the updated critics.
  const double alpha = agent.temperature();
  const double inv_n = 1.0 / static_cast<double>(n);
  net::Gradient actor_grad(agent.actor.shapes());
  net::EvalTrace actor_trace;
  net::EvalTrace critic_trace;
  double log_prob_sum = 0.0;
  for (const data::TransitionRecord& r : batch) {
    const ActorSample s = sample_actor(agent, r.state, rng, &actor_trace);
    log_prob_sum += s.log_prob;

    const std::vector<double> joint = concat(r.state, s.action);
    // Evaluate both critics but trace only the smaller one for the gradient.
    const double q1 = net::forward(agent.critic1, net::Head::identity, joint)[0];
    const double q2 = net::forward(agent.critic2, net::Head::identity, joint)[0];
    const net::ParameterSet& active = q1 <= q2 ? agent.critic1 : agent.critic2;
    const double q_min =
        net::forward_trace(active, net::Head::identity, joint, critic_trace)[0];
    losses.actor += (alpha * s.log_prob - q_min) * inv_n;

    const std::vector<double> dq = {1.0};
    const std::vector<double> djoint =
        net::backward_trace(active, net::Head::identity, critic_trace, dq, nullptr);

    std::vector<double> dout(2 * agent.action_dim);
    for (std::size_t k = 0; k < agent.action_dim; ++k) {
      const double u = std::tanh(s.z[k]);
      const double dq_da = djoint[agent.state_dim + k];
      const double da_dz = agent.action_bound * (1.0 - u * u);
      const double dloss_dz = alpha * 2.0 * u - dq_da * da_dz;
      dout[k] = dloss_dz * inv_n;
      dout[agent.action_dim + k] =
          (alpha * (-1.0 + 2.0 * u * s.sigma[k] * s.xi[k]) - dq_da * da_dz * s.sigma[k] * s.xi[k]) *
          s.in_clamp[k] * inv_n;
    }
    net::backward_trace(agent.actor, net::Head::identity, actor_trace, dout, &actor_grad);
  }
  if (!std::isfinite(losses.actor) || !actor_grad.all_finite())
    throw NumericError("sac: non-finite actor loss or gradient");
  net::adam_step(agent.actor, actor_grad, agent.actor_opt);

  // Temperature toward the entropy target.
  const double mean_log_prob = log_prob_sum * inv_n;
  losses.entropy = -mean_log_prob;
  losses.temperature = -agent.log_temperature * (mean_log_prob + agent.target_entropy);
  if (agent.auto_temperature) {
    const double g = -(mean_log_prob + agent.target_entropy);
    agent.temperature_opt.update(agent.log_temperature, g);
  }

  net::polyak_update(agent.target1, agent.critic1, agent.polyak_tau);
  net::polyak_update(agent.target2, agent.critic2, agent.polyak_tau);

  if (!std::isfinite(losses.critic1) || !std::isfinite(losses.critic2) ||
      !std::isfinite(losses.temperature))
    throw NumericError("sac: non-finite loss");
  return losses;
}

ckpt::Checkpoint to_checkpoint(const SacAgent& agent) {
  ckpt::Checkpoint out;
  out.put("actor", agent.actor);
  out.put("critic1", agent.critic1);
  out.put("critic2", agent.critic2);
  out.put("target1", agent.target1);
  out.put("target2", agent.target2);
  out.put_scalar("log_temperature", agent.log_temperature);
  out.put_scalar("gamma", agent.gamma);
  out.put_scalar("polyak_tau", agent.polyak_tau);
  out.put_scalar("target_entropy", agent.target_entropy);
  out.put_scalar("auto_temperature", agent.auto_temperature ? 1.0 : 0.0);
  out.put_scalar("state_dim", static_cast<double>(agent.state_dim));
  out.put_scalar("action_dim", static_cast<double>(agent.action_dim));
  out.put_scalar("action_bound", agent.action_bound);
  out.put_scalar("adam_lr", agent.actor_opt.lr);
  return out;
}

SacAgent from_checkpoint(const ckpt::Checkpoint& ckpt) {
  SacAgent agent;
  agent.actor = ckpt.require("actor");
  agent.critic1 = ckpt.require("critic1");
  agent.critic2 = ckpt.require("critic2");
  agent.target1 = ckpt.require("target1");
  agent.target2 = ckpt.require("target2");
  agent.log_temperature = ckpt.scalar("log_temperature");
  agent.gamma = ckpt.scalar("gamma");
  agent.polyak_tau = ckpt.scalar("polyak_tau");
  agent.target_entropy = ckpt.scalar("target_entropy");
  agent.auto_temperature = ckpt.scalar("auto_temperature") != 0.0;
  agent.state_dim = static_cast<std::size_t>(ckpt.scalar("state_dim"));
  agent.action_dim = static_cast<std::size_t>(ckpt.scalar("action_dim"));
  agent.action_bound = ckpt.scalar("action_bound");

  if (agent.actor.input_dim() != agent.state_dim ||
      agent.actor.output_dim() != 2 * agent.action_dim)
    throw IoError("sac checkpoint: actor dimensions do not match the stored dims");
  if (agent.critic1.input_dim() != agent.state_dim + agent.action_dim ||
      !agent.critic2.congruent_with(agent.critic1) ||
      !agent.target1.congruent_with(agent.critic1) ||
      !agent.target2.congruent_with(agent.critic2))
    throw IoError("sac checkpoint: critic dimensions do not match the stored dims");

  const double lr = ckpt.scalar("adam_lr");
  agent.actor_opt = net::AdamState::make(agent.actor, lr);
  agent.critic1_opt = net::AdamState::make(agent.critic1, lr);
  agent.critic2_opt = net::AdamState::make(agent.critic2, lr);
  agent.temperature_opt.lr = lr;
  return agent;
}

data::OfflineDataset collect_policy_replay(const env::EnvParams& env,
                                           const std::string& checkpoint_path,
                                           std::size_t n_episodes, Rng& rng) {
  const SacAgent agent = from_checkpoint(ckpt::load(checkpoint_path));
  const env::CmdpSpec spec = env::spec_for(env.family);
  if (agent.state_dim != spec.state_dim || agent.action_dim != spec.action_dim)
    throw ShapeError("collect_policy_replay: checkpoint dims incompatible with environment");
  if (agent.action_bound > spec.action_bound + 1e-12)
    throw ShapeError("collect_policy_replay: checkpoint action bound exceeds the environment's");
  const data::ActionSampler sampler = [&agent](std::span<const double> s, Rng& r) {
    return act(agent, s, ActMode::sample, &r);
  };
  return data::collect_policy(env, sampler, n_episodes, rng);
}

}  // namespace mesa::sac
