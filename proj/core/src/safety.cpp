#include "mesa/safety.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "mesa/errors.hpp"

namespace mesa::safety {

namespace {

std::vector<double> concat(std::span<const double> state, std::span<const double> action) {
  std::vector<double> joint;
  joint.reserve(state.size() + action.size());
  joint.insert(joint.end(), state.begin(), state.end());
  joint.insert(joint.end(), action.begin(), action.end());
  return joint;
}

void check_pair(const SafetyCritic& critic) {
  if (critic.online.input_dim() != critic.state_dim + critic.action_dim)
    throw ShapeError("safety critic: input width must equal state dim + action dim");
  if (!critic.target.congruent_with(critic.online))
    throw ShapeError("safety critic: target network shape differs from online network");
}

std::vector<std::vector<double>> gather_states(const data::OfflineDataset& ds,
                                               std::span<const std::size_t> idx) {
  std::vector<std::vector<double>> states;
  states.reserve(idx.size());
  for (std::size_t i : idx) states.push_back(ds.records[i].state);
  return states;
}

// Disjoint inner/outer index draws from one dataset; falls back to two
// independent with-replacement draws when the dataset is too small to split.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_batches(
    std::size_t n, std::size_t n_inner, std::size_t n_outer, Rng& rng) {
  if (n >= n_inner + n_outer) {
    std::vector<std::size_t> idx = rng.sample_without_replacement(n, n_inner + n_outer);
    std::vector<std::size_t> inner(idx.begin(), idx.begin() + static_cast<long>(n_inner));
    std::vector<std::size_t> outer(idx.begin() + static_cast<long>(n_inner), idx.end());
    return {std::move(inner), std::move(outer)};
  }
  return {data::sample_indices(n, n_inner, rng), data::sample_indices(n, n_outer, rng)};
}

net::Batch td_batch_indices(const SafetyCritic& critic, const data::OfflineDataset& ds,
                            std::span<const std::size_t> idx,
                            const NextActionSource& next_action) {
  std::vector<data::TransitionRecord> records;
  records.reserve(idx.size());
  for (std::size_t i : idx) records.push_back(ds.records[i]);
  return td_batch(critic, records, next_action);
}

double eval_split_loss(const SafetyCritic& critic, const data::OfflineDataset& ds,
                       std::span<const std::size_t> idx, const NextActionSource& next_action) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  const net::Batch batch = td_batch_indices(critic, ds, idx, next_action);
  return net::mse_loss(critic.online, net::Head::sigmoid, batch);
}

}  // namespace

double SafetyCritic::value(std::span<const double> state, std::span<const double> action) const {
  return net::forward(online, net::Head::sigmoid, concat(state, action))[0];
}

double SafetyCritic::target_value(std::span<const double> state,
                                  std::span<const double> action) const {
  return net::forward(target, net::Head::sigmoid, concat(state, action))[0];
}

SafetyCritic make_critic(std::size_t state_dim, std::size_t action_dim,
                         const std::vector<std::size_t>& hidden, double gamma_risk, Rng& rng) {
  if (state_dim == 0 || action_dim == 0)
    throw ShapeError("safety critic: state and action dims must be positive");
  if (!(gamma_risk > 0.0) || gamma_risk >= 1.0)
    throw ConfigError("safety critic: risk discount must lie in (0, 1)");
  SafetyCritic critic;
  critic.state_dim = state_dim;
  critic.action_dim = action_dim;
  critic.gamma_risk = gamma_risk;
  critic.online = net::ParameterSet::random_init(
      net::ParameterSet::mlp_shapes(state_dim + action_dim, hidden, 1), rng);
  critic.target = critic.online;
  return critic;
}

std::vector<double> RecoveryPolicy::act(std::span<const double> state) const {
  std::vector<double> a = net::forward(params, net::Head::tanh, state);
  for (double& x : a) x *= action_bound;
  return a;
}

RecoveryPolicy make_recovery(std::size_t state_dim, std::size_t action_dim,
                             const std::vector<std::size_t>& hidden, double action_bound,
                             Rng& rng) {
  if (state_dim == 0 || action_dim == 0)
    throw ShapeError("recovery policy: state and action dims must be positive");
  if (!(action_bound > 0.0))
    throw ConfigError("recovery policy: action bound must be positive");
  RecoveryPolicy policy;
  policy.action_bound = action_bound;
  policy.params = net::ParameterSet::random_init(
      net::ParameterSet::mlp_shapes(state_dim, hidden, action_dim), rng);
  return policy;
}

double td_target(double c, double q_next, double gamma_risk) {
  if (c != 0.0 && c != 1.0)
    throw NumericError("td_target: constraint flag outside {0,1}");
  if (!(q_next >= 0.0) || q_next > 1.0)
    throw NumericError("td_target: bootstrap value outside [0,1]");
  return c + gamma_risk * (1.0 - c) * q_next;
}

NextActionSource recovery_action_source(const RecoveryPolicy& policy) {
  return [&policy](std::span<const double> state) { return policy.act(state); };
}

net::Batch td_batch(const SafetyCritic& critic, std::span<const data::TransitionRecord> records,
                    const NextActionSource& next_action) {
  check_pair(critic);
  if (records.empty()) throw ShapeError("td_batch: empty batch");
  net::Batch batch;
  batch.n = records.size();
  batch.in_dim = critic.state_dim + critic.action_dim;
  batch.out_dim = 1;
  batch.inputs.reserve(batch.n * batch.in_dim);
  batch.targets.reserve(batch.n);
  for (const data::TransitionRecord& r : records) {
    if (r.state.size() != critic.state_dim || r.action.size() != critic.action_dim)
      throw ShapeError("td_batch: record dimensions do not match the critic");
    batch.inputs.insert(batch.inputs.end(), r.state.begin(), r.state.end());
    batch.inputs.insert(batch.inputs.end(), r.action.begin(), r.action.end());
    double q_next = 0.0;
    if (!r.done) {
      const std::vector<double> a_next = next_action(r.next_state);
      q_next = critic.target_value(r.next_state, a_next);
    }
    batch.targets.push_back(td_target(r.constraint, q_next, critic.gamma_risk));
  }
  return batch;
}

LossGrad critic_loss(const SafetyCritic& critic, std::span<const data::TransitionRecord> batch,
                     const NextActionSource& next_action) {
  const net::Batch td = td_batch(critic, batch, next_action);
  LossGrad out;
  out.grad = net::Gradient(critic.online.shapes());
  out.loss = net::mse_backward(critic.online, net::Head::sigmoid, td, out.grad);
  return out;
}

LossGrad recovery_loss(const RecoveryPolicy& policy, const SafetyCritic& critic,
                       std::span<const std::vector<double>> states) {
  check_pair(critic);
  if (states.empty()) throw ShapeError("recovery_loss: empty state batch");
  if (policy.params.output_dim() != critic.action_dim ||
      policy.params.input_dim() != critic.state_dim)
    throw ShapeError("recovery_loss: policy dimensions do not match the critic");

  LossGrad out;
  out.grad = net::Gradient(policy.params.shapes());
  const double inv_n = 1.0 / static_cast<double>(states.size());
  net::EvalTrace policy_trace;
  net::EvalTrace critic_trace;
  for (const std::vector<double>& s : states) {
    const std::vector<double> raw =
        net::forward_trace(policy.params, net::Head::tanh, s, policy_trace);
    std::vector<double> action = raw;
    for (double& x : action) x *= policy.action_bound;

    const std::vector<double> q =
        net::forward_trace(critic.online, net::Head::sigmoid, concat(s, action), critic_trace);
    out.loss += q[0] * inv_n;

    const std::vector<double> dq = {inv_n};
    const std::vector<double> dinput =
        net::backward_trace(critic.online, net::Head::sigmoid, critic_trace, dq, nullptr);
    std::vector<double> draw(critic.action_dim);
    for (std::size_t k = 0; k < critic.action_dim; ++k)
      draw[k] = dinput[critic.state_dim + k] * policy.action_bound;
    net::backward_trace(policy.params, net::Head::tanh, policy_trace, draw, &out.grad);
  }
  if (!std::isfinite(out.loss) || !out.grad.all_finite())
    throw NumericError("recovery_loss: non-finite objective or gradient");
  return out;
}

double critic_update_step(SafetyCritic& critic, net::AdamState& opt,
                          std::span<const data::TransitionRecord> batch,
                          const NextActionSource& next_action, double polyak_tau) {
  LossGrad lg = critic_loss(critic, batch, next_action);
  net::adam_step(critic.online, lg.grad, opt);
  net::polyak_update(critic.target, critic.online, polyak_tau);
  return lg.loss;
}

double recovery_update_step(RecoveryPolicy& policy, net::AdamState& opt,
                            const SafetyCritic& critic,
                            std::span<const std::vector<double>> states) {
  LossGrad lg = recovery_loss(policy, critic, states);
  net::adam_step(policy.params, lg.grad, opt);
  return lg.loss;
}

Phase1Trace meta_train_phase1(SafetyCritic& critic, RecoveryPolicy& recovery,
                              std::span<const data::OfflineDataset> train,
                              const data::OfflineDataset& adaptation_set,
                              const MetaTrainConfig& cfg, Rng& rng) {
  check_pair(critic);
  if (train.empty()) throw ShapeError("meta training: need at least one training dataset");
  for (const data::OfflineDataset& ds : train)
    if (ds.records.empty()) throw ShapeError("meta training: empty training dataset");
  if (adaptation_set.records.empty())
    throw ShapeError("meta training: empty adaptation dataset");
  if (cfg.task_batch == 0 || cfg.inner_batch == 0 || cfg.outer_batch == 0)
    throw ConfigError("meta training: batch sizes must be positive");

  const NextActionSource bootstrap = recovery_action_source(recovery);
  net::AdamState recovery_opt = net::AdamState::make(recovery.params, cfg.recovery_lr);

  Phase1Trace trace;
  trace.outer_loss.reserve(cfg.iterations);
  trace.recovery_value.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    // Task draw: distinct datasets when enough exist, otherwise with
    // replacement.
    std::vector<std::size_t> tasks;
    if (cfg.task_batch <= train.size()) {
      tasks = rng.sample_without_replacement(train.size(), cfg.task_batch);
    } else {
      tasks.resize(cfg.task_batch);
      for (std::size_t& t : tasks) t = rng.index(train.size());
    }

    net::Gradient outer_sum(critic.online.shapes());
    double loss_sum = 0.0;
    for (std::size_t t : tasks) {
      const data::OfflineDataset& ds = train[t];
      auto [inner_idx, outer_idx] =
          split_batches(ds.size(), cfg.inner_batch, cfg.outer_batch, rng);
      const net::Batch inner = td_batch_indices(critic, ds, inner_idx, bootstrap);
      const net::Batch outer = td_batch_indices(critic, ds, outer_idx, bootstrap);
      double outer_loss = 0.0;
      const net::Gradient g = net::meta_gradient(critic.online, net::Head::sigmoid, inner, outer,
                                                 cfg.inner_lr, cfg.mode, &outer_loss);
      outer_sum.axpy(1.0, g);
      loss_sum += outer_loss;
    }
    critic.online.axpy(-cfg.outer_lr, outer_sum);
    if (!critic.online.all_finite())
      throw NumericError("meta training: non-finite critic parameters");
    net::polyak_update(critic.target, critic.online, cfg.polyak_tau);

    const std::vector<std::size_t> rec_idx =
        data::sample_indices(adaptation_set.size(), cfg.outer_batch, rng);
    const std::vector<std::vector<double>> rec_states = gather_states(adaptation_set, rec_idx);
    const double rec_value = recovery_update_step(recovery, recovery_opt, critic, rec_states);

    trace.outer_loss.push_back(loss_sum / static_cast<double>(cfg.task_batch));
    trace.recovery_value.push_back(rec_value);
  }
  return trace;
}

Phase1Trace pooled_train_phase1(SafetyCritic& critic,
                                std::span<const data::OfflineDataset> train,
                                const NextActionSource& next_action,
                                const PooledTrainConfig& cfg, Rng& rng) {
  check_pair(critic);
  if (train.empty()) throw ShapeError("pooled training: need at least one training dataset");
  std::size_t total = 0;
  for (const data::OfflineDataset& ds : train) total += ds.size();
  if (total == 0) throw ShapeError("pooled training: all training datasets are empty");
  if (cfg.batch == 0) throw ConfigError("pooled training: batch size must be positive");

  net::AdamState opt = net::AdamState::make(critic.online, cfg.adam_lr);
  Phase1Trace trace;
  trace.outer_loss.reserve(cfg.iterations);
  std::vector<data::TransitionRecord> batch(cfg.batch);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      std::size_t flat = rng.index(total);
      for (const data::OfflineDataset& ds : train) {
        if (flat < ds.size()) {
          batch[b] = ds.records[flat];
          break;
        }
        flat -= ds.size();
      }
    }
    const double loss = critic_update_step(critic, opt, batch, next_action, cfg.polyak_tau);
    trace.outer_loss.push_back(loss);
  }
  return trace;
}

std::vector<AdaptTraceRow> adapt_phase2(SafetyCritic& critic, RecoveryPolicy& recovery,
                                        const data::OfflineDataset& adaptation_set,
                                        const AdaptConfig& cfg, Rng& rng) {
  check_pair(critic);
  if (adaptation_set.records.empty()) throw ShapeError("adaptation: empty dataset");
  if (cfg.batch == 0) throw ConfigError("adaptation: batch size must be positive");
  if (cfg.heldout_fraction < 0.0 || cfg.heldout_fraction >= 1.0)
    throw ConfigError("adaptation: held-out fraction must lie in [0, 1)");

  // Optional held-out split for trace evaluation; updates never touch it.
  const std::size_t n = adaptation_set.size();
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> heldout_idx;
  if (cfg.heldout_fraction > 0.0) {
    const auto k = std::min<std::size_t>(
        n - 1, static_cast<std::size_t>(std::ceil(cfg.heldout_fraction * static_cast<double>(n))));
    std::vector<std::size_t> shuffled = rng.sample_without_replacement(n, n);
    heldout_idx.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(k));
    train_idx.assign(shuffled.begin() + static_cast<long>(k), shuffled.end());
  } else {
    train_idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) train_idx[i] = i;
  }

  const NextActionSource bootstrap =
      cfg.bootstrap_override ? cfg.bootstrap_override : recovery_action_source(recovery);
  net::AdamState critic_opt = net::AdamState::make(critic.online, cfg.critic_lr);
  net::AdamState recovery_opt = net::AdamState::make(recovery.params, cfg.recovery_lr);

  std::vector<AdaptTraceRow> trace;
  const auto record_row = [&](std::size_t step) {
    AdaptTraceRow row;
    row.step = step;
    row.train_loss = eval_split_loss(critic, adaptation_set, train_idx, bootstrap);
    row.heldout_loss = eval_split_loss(critic, adaptation_set, heldout_idx, bootstrap);
    trace.push_back(row);
  };

  record_row(0);
  std::vector<data::TransitionRecord> batch;
  batch.reserve(cfg.batch);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch; ++b)
      batch.push_back(adaptation_set.records[train_idx[rng.index(train_idx.size())]]);

    critic_update_step(critic, critic_opt, batch, bootstrap, cfg.polyak_tau);

    std::vector<std::vector<double>> states;
    states.reserve(cfg.batch);
    for (const data::TransitionRecord& r : batch) states.push_back(r.state);
    recovery_update_step(recovery, recovery_opt, critic, states);

    const bool last = step == cfg.steps;
    if (last || (cfg.trace_every > 0 && step % cfg.trace_every == 0)) record_row(step);
  }
  return trace;
}

ckpt::Checkpoint to_checkpoint(const SafetyCritic& critic, const RecoveryPolicy& recovery) {
  ckpt::Checkpoint out;
  out.put("risk_online", critic.online);
  out.put("risk_target", critic.target);
  out.put("recovery_policy", recovery.params);
  out.put_scalar("gamma_risk", critic.gamma_risk);
  out.put_scalar("state_dim", static_cast<double>(critic.state_dim));
  out.put_scalar("action_dim", static_cast<double>(critic.action_dim));
  out.put_scalar("action_bound", recovery.action_bound);
  return out;
}

void from_checkpoint(const ckpt::Checkpoint& ckpt, SafetyCritic& critic,
                     RecoveryPolicy& recovery) {
  critic.online = ckpt.require("risk_online");
  critic.target = ckpt.require("risk_target");
  recovery.params = ckpt.require("recovery_policy");
  critic.gamma_risk = ckpt.scalar("gamma_risk");
  critic.state_dim = static_cast<std::size_t>(ckpt.scalar("state_dim"));
  critic.action_dim = static_cast<std::size_t>(ckpt.scalar("action_dim"));
  recovery.action_bound = ckpt.scalar("action_bound");
  check_pair(critic);
  if (recovery.params.input_dim() != critic.state_dim ||
      recovery.params.output_dim() != critic.action_dim)
    throw IoError("checkpoint: recovery policy dimensions do not match the critic");
}

}  // namespace mesa::safety
