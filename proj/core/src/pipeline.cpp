#include "mesa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "mesa/checkpoint.hpp"
#include "mesa/csvio.hpp"
#include "mesa/datasets.hpp"
#include "mesa/errors.hpp"
#include "mesa/svgplot.hpp"

namespace mesa::pipe {

namespace fs = std::filesystem;

const char* const kCodeVersion = "0.1.0";

namespace {

constexpr exec::AlgorithmMode kAllModes[] = {
    exec::AlgorithmMode::unconstrained, exec::AlgorithmMode::rrl,
    exec::AlgorithmMode::multitask, exec::AlgorithmMode::mesa};

bool is_nav(env::Family family) { return family != env::Family::cartpole; }

void log_line(std::ostream* log, const std::string& text) {
  if (log) *log << text << std::endl;
}

void require_positive(double value, const char* what) {
  if (!(value > 0.0)) throw ConfigError(std::string("config: ") + what + " must be positive");
}

void require_unit_interval(double value, const char* what, bool open_low, bool open_high) {
  const bool lo_ok = open_low ? value > 0.0 : value >= 0.0;
  const bool hi_ok = open_high ? value < 1.0 : value <= 1.0;
  if (!(lo_ok && hi_ok))
    throw ConfigError(std::string("config: ") + what + " is outside its valid range");
}

std::size_t require_count(const cfg::Config& c, const char* section, const char* key) {
  const long long v = c.get_int(section, key);
  if (v < 1)
    throw ConfigError(std::string("config: ") + section + "." + key + " must be >= 1");
  return static_cast<std::size_t>(v);
}

// Subsamples the adaptation set when a fraction below one is requested. The
// draw depends only on (seed, fraction), so train and run rebuild the same
// subset.
data::OfflineDataset adaptation_subset(const data::OfflineDataset& full, double fraction,
                                       std::uint64_t seed) {
  if (fraction >= 1.0) return full;
  Rng rng(derive_seed(seed, "subsample/" + csv::format_double(fraction)));
  return data::subsample_fraction(full, fraction, rng);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(std::span<const double> values) {
  MeanSe out;
  const double n = static_cast<double>(values.size());
  for (double v : values) out.mean += v;
  out.mean /= n;
  if (values.size() > 1) {
    double var = 0.0;
    for (double v : values) var += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(var / (n - 1.0) / n);
  }
  return out;
}

void write_manifest(const ExperimentConfig& cfg, const std::string& run_dir) {
  cfg::save(cfg.manifest, run_dir + "/manifest.cfg");
}

void write_phase1_trace(const safety::Phase1Trace& trace, const std::string& path) {
  csv::Table table;
  const bool with_recovery = !trace.recovery_value.empty();
  table.columns = with_recovery
                      ? std::vector<std::string>{"iteration", "loss", "recovery_value"}
                      : std::vector<std::string>{"iteration", "loss"};
  for (std::size_t i = 0; i < trace.outer_loss.size(); ++i) {
    if (with_recovery)
      table.rows.push_back(
          {static_cast<double>(i), trace.outer_loss[i], trace.recovery_value[i]});
    else
      table.rows.push_back({static_cast<double>(i), trace.outer_loss[i]});
  }
  csv::save(table, path);
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    throw ConfigError("missing file '" + path + "' (" + hint + ")");
}

data::OfflineDataset load_test_dataset(const ExperimentConfig& cfg, const Paths& paths) {
  const std::string path = paths.test_dataset(cfg.family);
  require_file(path, "run the collect command first");
  data::OfflineDataset ds = data::load(path);
  if (ds.env_params.family != cfg.family)
    throw ConfigError("dataset '" + path + "' belongs to family '" +
                      env::family_name(ds.env_params.family) + "'");
  return ds;
}

std::vector<data::OfflineDataset> load_train_datasets(const ExperimentConfig& cfg,
                                                      const Paths& paths) {
  // Validate every path before loading anything.
  for (std::size_t i = 0; i < cfg.n_train_datasets; ++i)
    require_file(paths.train_dataset(cfg.family, i), "run the collect command first");
  std::vector<data::OfflineDataset> out;
  out.reserve(cfg.n_train_datasets);
  for (std::size_t i = 0; i < cfg.n_train_datasets; ++i) {
    out.push_back(data::load(paths.train_dataset(cfg.family, i)));
    if (out.back().env_params.family != cfg.family)
      throw ConfigError("training dataset " + std::to_string(i) +
                        " belongs to a different family");
  }
  return out;
}

// Loads the adapted critic/recovery pair a previous train step wrote.
void load_safety(const std::string& run_dir, safety::SafetyCritic& critic,
                 safety::RecoveryPolicy& recovery) {
  const std::string path = run_dir + "/safety.ckpt";
  require_file(path, "run the train command first");
  safety::from_checkpoint(ckpt::load(path), critic, recovery);
}

const char* mode_color(exec::AlgorithmMode mode) {
  switch (mode) {
    case exec::AlgorithmMode::unconstrained: return "#7f7f7f";
    case exec::AlgorithmMode::rrl: return "#ff7f0e";
    case exec::AlgorithmMode::multitask: return "#2ca02c";
    case exec::AlgorithmMode::mesa: return "#1f77b4";
  }
  return "#000000";
}

void train_one_seed(const ExperimentConfig& cfg, const Paths& paths, std::uint64_t seed,
                    const std::string& fraction_tag,
                    const std::vector<data::OfflineDataset>& train_sets,
                    const data::OfflineDataset& test_full, std::ostream* log) {
  const std::string run_dir = paths.run_dir(cfg.family, cfg.mode, seed, fraction_tag);
  fs::create_directories(run_dir);

  const env::CmdpSpec spec = env::spec_for(cfg.family);
  const data::OfflineDataset adaptation =
      adaptation_subset(test_full, cfg.test_fraction, seed);

  Rng phase1_rng(derive_seed(seed, "phase1"));
  safety::SafetyCritic critic = safety::make_critic(spec.state_dim, spec.action_dim,
                                                    cfg.hidden, cfg.gamma_risk, phase1_rng);
  safety::RecoveryPolicy recovery = safety::make_recovery(
      spec.state_dim, spec.action_dim, cfg.hidden, spec.action_bound, phase1_rng);

  if (cfg.mode == exec::AlgorithmMode::mesa) {
    const safety::Phase1Trace trace =
        meta_train_phase1(critic, recovery, train_sets, adaptation, cfg.meta, phase1_rng);
    write_phase1_trace(trace, run_dir + "/phase1_trace.csv");
    log_line(log, "  seed " + std::to_string(seed) + ": meta-training done (" +
                      std::to_string(cfg.meta.iterations) + " iterations)");
  } else if (cfg.mode == exec::AlgorithmMode::multitask) {
    const safety::NextActionSource bootstrap = safety::recovery_action_source(recovery);
    const safety::Phase1Trace trace =
        pooled_train_phase1(critic, train_sets, bootstrap, cfg.pooled, phase1_rng);
    write_phase1_trace(trace, run_dir + "/phase1_trace.csv");
    log_line(log, "  seed " + std::to_string(seed) + ": pooled training done (" +
                      std::to_string(cfg.pooled.iterations) + " iterations)");
  }

  Rng phase2_rng(derive_seed(seed, "phase2"));
  const std::vector<safety::AdaptTraceRow> trace =
      adapt_phase2(critic, recovery, adaptation, cfg.adapt, phase2_rng);
  ckpt::save(safety::to_checkpoint(critic, recovery), run_dir + "/safety.ckpt");
  csv::save(csv::trace_table(trace), run_dir + "/trace.csv");
  write_manifest(cfg, run_dir);
  log_line(log, "  seed " + std::to_string(seed) + ": adaptation done (" +
                    std::to_string(cfg.adapt.steps) + " steps, " +
                    std::to_string(adaptation.size()) + " records)");
}

void train_impl(const ExperimentConfig& cfg, const std::string& fraction_tag,
                std::ostream* log) {
  const Paths paths{cfg.output_root};
  if (cfg.mode == exec::AlgorithmMode::unconstrained) {
    for (std::uint64_t seed : cfg.seeds) {
      const std::string run_dir = paths.run_dir(cfg.family, cfg.mode, seed, fraction_tag);
      fs::create_directories(run_dir);
      write_manifest(cfg, run_dir);
    }
    log_line(log, "train: unconstrained mode has no offline phases; manifests written");
    return;
  }

  // Validate dataset presence before any compute.
  const bool needs_phase1 = cfg.mode == exec::AlgorithmMode::mesa ||
                            cfg.mode == exec::AlgorithmMode::multitask;
  require_file(paths.test_dataset(cfg.family), "run the collect command first");
  std::vector<data::OfflineDataset> train_sets;
  if (needs_phase1) train_sets = load_train_datasets(cfg, paths);
  const data::OfflineDataset test_full = load_test_dataset(cfg, paths);

  log_line(log, std::string("train: ") + exec::mode_name(cfg.mode) + " on " +
                    env::family_name(cfg.family) +
                    (fraction_tag.empty() ? "" : " [" + fraction_tag + "]"));
  for (std::uint64_t seed : cfg.seeds)
    train_one_seed(cfg, paths, seed, fraction_tag, train_sets, test_full, log);
}

std::vector<exec::RunMetrics> run_impl(const ExperimentConfig& cfg,
                                       const std::string& fraction_tag, std::ostream* log) {
  const Paths paths{cfg.output_root};
  const env::CmdpSpec spec = env::spec_for(cfg.family);
  const bool critic_mode = exec::uses_critic(cfg.mode);

  // Validate run prerequisites before any compute.
  data::OfflineDataset test_full;
  if (critic_mode) {
    test_full = load_test_dataset(cfg, paths);
    for (std::uint64_t seed : cfg.seeds)
      require_file(paths.run_dir(cfg.family, cfg.mode, seed, fraction_tag) + "/safety.ckpt",
                   "run the train command first");
  }

  log_line(log, std::string("run: ") + exec::mode_name(cfg.mode) + " on " +
                    env::family_name(cfg.family) +
                    (fraction_tag.empty() ? "" : " [" + fraction_tag + "]"));
  std::vector<exec::RunMetrics> all;
  all.reserve(cfg.seeds.size());
  for (std::uint64_t seed : cfg.seeds) {
    const std::string run_dir = paths.run_dir(cfg.family, cfg.mode, seed, fraction_tag);
    fs::create_directories(run_dir);

    Rng phase3_rng(derive_seed(seed, "phase3"));
    const env::EnvParams test_env = env::sample_env(cfg.family, env::Role::test, phase3_rng);
    sac::SacAgent agent =
        sac::make_sac(spec.state_dim, spec.action_dim, spec.action_bound, cfg.sac, phase3_rng);

    exec::RunMetrics metrics;
    if (critic_mode) {
      safety::SafetyCritic critic;
      safety::RecoveryPolicy recovery;
      load_safety(run_dir, critic, recovery);
      data::OfflineDataset buffer = adaptation_subset(test_full, cfg.test_fraction, seed);
      metrics = exec::run_phase3(test_env, agent, &critic, &recovery, cfg.mode, &buffer,
                                 cfg.phase3, phase3_rng);
    } else {
      metrics = exec::run_phase3(test_env, agent, nullptr, nullptr, cfg.mode, nullptr,
                                 cfg.phase3, phase3_rng);
    }

    csv::save(csv::metrics_table(metrics), run_dir + "/metrics.csv");
    write_manifest(cfg, run_dir);
    log_line(log, "  seed " + std::to_string(seed) + ": " +
                      std::to_string(metrics.total_violations()) + " violations, success " +
                      csv::format_double(metrics.success_rate()));
    all.push_back(std::move(metrics));
  }

  csv::save(csv::aggregate_metrics(all),
            paths.mode_dir(cfg.family, cfg.mode, fraction_tag) + "/aggregate.csv");
  return all;
}

}  // namespace

std::string Paths::dataset_dir(env::Family family) const {
  return root + "/datasets/" + env::family_name(family);
}

std::string Paths::train_dataset(env::Family family, std::size_t index) const {
  return dataset_dir(family) + "/train_" + std::to_string(index) + ".bin";
}

std::string Paths::test_dataset(env::Family family) const {
  return dataset_dir(family) + "/test.bin";
}

std::string Paths::mode_dir(env::Family family, exec::AlgorithmMode mode,
                            const std::string& fraction_tag) const {
  std::string dir =
      root + "/runs/" + env::family_name(family) + "/" + exec::mode_name(mode);
  if (!fraction_tag.empty()) dir += "/" + fraction_tag;
  return dir;
}

std::string Paths::run_dir(env::Family family, exec::AlgorithmMode mode, std::uint64_t seed,
                           const std::string& fraction_tag) const {
  return mode_dir(family, mode, fraction_tag) + "/seed" + std::to_string(seed);
}

std::string Paths::plot_dir(env::Family family) const {
  return root + "/plots/" + env::family_name(family);
}

std::string fraction_tag(double fraction) {
  std::string tag = "frac_" + csv::format_double(fraction);
  std::replace(tag.begin(), tag.end(), '.', 'p');
  return tag;
}

cfg::Config defaults_for(env::Family family, exec::AlgorithmMode mode) {
  const bool nav = is_nav(family);
  const bool critic = exec::uses_critic(mode);
  cfg::Config d;

  d.set("experiment", "family", env::family_name(family));
  d.set("experiment", "mode", exec::mode_name(mode));
  d.set("experiment", "seeds", "0,1,2,3,4");
  d.set("experiment", "collect_seed", "1");
  d.set("experiment", "test_fraction", "1");

  d.set("network", "hidden", "256,256");

  d.set("collect", "n_train_datasets", "20");
  if (nav) {
    d.set("collect", "train_size", "10000");
    d.set("collect", "test_size", family == env::Family::nav1 ? "100" : "200");
  } else {
    d.set("collect", "train_episodes", "200");
    d.set("collect", "pretrain_episodes", "100");
    d.set("collect", "intermediate_fraction", "0.25");
    d.set("collect", "test_size", "1000");
  }

  const char* phase1_iters = nav ? "10000" : "15000";
  if (mode == exec::AlgorithmMode::mesa) {
    d.set("phase1", "iterations", phase1_iters);
    d.set("phase1", "task_batch", "5");
    d.set("phase1", "inner_batch", "256");
    d.set("phase1", "outer_batch", "256");
    d.set("phase1", "inner_lr", "0.001");
    d.set("phase1", "outer_lr", "0.00001");
    d.set("phase1", "recovery_lr", "0.0003");
    d.set("phase1", "meta_mode", "first_order");
  } else if (mode == exec::AlgorithmMode::multitask) {
    d.set("phase1", "iterations", phase1_iters);
    d.set("phase1", "batch", "256");
    d.set("phase1", "lr", "0.0003");
  }

  if (critic) {
    const bool rrl = mode == exec::AlgorithmMode::rrl;
    const bool mesa = mode == exec::AlgorithmMode::mesa;
    d.set("phase2", "steps", rrl ? (nav ? "2000" : "10000") : (nav ? "100" : "500"));
    d.set("phase2", "batch", nav ? "64" : "256");
    d.set("phase2", "critic_lr", mesa ? "0.001" : "0.0003");
    d.set("phase2", "recovery_lr", "0.0003");
    d.set("phase2", "heldout_fraction", "0");
    d.set("phase2", "trace_every", "0");

    d.set("phase3", "eps_risk", family == env::Family::nav1 ? "0.3" : "0.1");
    d.set("phase3", "critic_lr", mesa ? "0.001" : "0.0003");
    d.set("phase3", "recovery_lr", "0.0003");

    d.set("risk", "gamma_risk", family == env::Family::nav2 ? "0.65" : "0.8");
    d.set("risk", "polyak_tau", "0.005");

    d.set("ablation", "fractions", "1,0.5,0.25,0.125,0.0625");
    if (nav) d.set("heatmap", "grid_n", "32");
  }

  d.set("phase3", "episodes", "1000");
  d.set("phase3", "batch", "256");
  d.set("phase3", "record_wall_time", "false");

  d.set("sac", "lr", "0.0003");
  d.set("sac", "gamma", "0.99");
  d.set("sac", "polyak_tau", "0.005");
  d.set("sac", "init_temperature", "1");
  d.set("sac", "auto_temperature", "true");

  return d;
}

ExperimentConfig resolve(const cfg::Config& user) {
  ExperimentConfig ec;
  ec.family = env::family_from_name(user.get_string("experiment", "family", "maze"));
  ec.mode = exec::mode_from_name(user.get_string("experiment", "mode", "mesa"));

  cfg::Config merged = defaults_for(ec.family, ec.mode);
  for (const cfg::Entry& entry : user.entries) {
    if (entry.section == "meta" && entry.key == "version") continue;
    const bool known = merged.has(entry.section, entry.key) ||
                       (entry.section == "experiment" && entry.key == "output_root");
    if (!known)
      throw ConfigError("config: unknown key '" + entry.section + "." + entry.key + "'");
    merged.set(entry.section, entry.key, entry.value);
  }

  std::string root = merged.get_string("experiment", "output_root", "");
  if (root.empty()) {
    const char* env_root = std::getenv("MESA_OUTPUT_ROOT");
    root = env_root && *env_root ? env_root : "mesa_out";
  }
  ec.output_root = root;
  merged.set("experiment", "output_root", root);
  merged.set("meta", "version", kCodeVersion);

  const std::vector<std::size_t> seeds = merged.get_size_list("experiment", "seeds");
  if (seeds.empty()) throw ConfigError("config: experiment.seeds must not be empty");
  ec.seeds.assign(seeds.begin(), seeds.end());
  for (std::size_t i = 0; i < ec.seeds.size(); ++i)
    for (std::size_t j = i + 1; j < ec.seeds.size(); ++j)
      if (ec.seeds[i] == ec.seeds[j])
        throw ConfigError("config: duplicate seed " + std::to_string(ec.seeds[i]));

  ec.collect_seed = static_cast<std::uint64_t>(merged.get_int("experiment", "collect_seed"));
  ec.test_fraction = merged.get_double("experiment", "test_fraction");
  require_unit_interval(ec.test_fraction, "experiment.test_fraction", true, false);

  ec.hidden = merged.get_size_list("network", "hidden");
  if (ec.hidden.empty()) throw ConfigError("config: network.hidden must not be empty");
  for (std::size_t width : ec.hidden)
    if (width == 0) throw ConfigError("config: network.hidden widths must be >= 1");

  ec.n_train_datasets = require_count(merged, "collect", "n_train_datasets");
  ec.test_dataset_size = require_count(merged, "collect", "test_size");
  if (is_nav(ec.family)) {
    ec.train_dataset_size = require_count(merged, "collect", "train_size");
  } else {
    ec.train_episodes = require_count(merged, "collect", "train_episodes");
    ec.pretrain_episodes = require_count(merged, "collect", "pretrain_episodes");
    ec.intermediate_fraction = merged.get_double("collect", "intermediate_fraction");
    require_unit_interval(ec.intermediate_fraction, "collect.intermediate_fraction", true,
                          false);
  }

  const bool critic = exec::uses_critic(ec.mode);
  if (critic) {
    ec.gamma_risk = merged.get_double("risk", "gamma_risk");
    require_unit_interval(ec.gamma_risk, "risk.gamma_risk", true, true);
    const double risk_tau = merged.get_double("risk", "polyak_tau");
    require_unit_interval(risk_tau, "risk.polyak_tau", true, false);

    ec.adapt.steps = static_cast<std::size_t>(merged.get_int("phase2", "steps"));
    ec.adapt.batch = require_count(merged, "phase2", "batch");
    ec.adapt.critic_lr = merged.get_double("phase2", "critic_lr");
    ec.adapt.recovery_lr = merged.get_double("phase2", "recovery_lr");
    require_positive(ec.adapt.critic_lr, "phase2.critic_lr");
    require_positive(ec.adapt.recovery_lr, "phase2.recovery_lr");
    ec.adapt.polyak_tau = risk_tau;
    ec.adapt.heldout_fraction = merged.get_double("phase2", "heldout_fraction");
    require_unit_interval(ec.adapt.heldout_fraction, "phase2.heldout_fraction", false, true);
    ec.adapt.trace_every = static_cast<std::size_t>(merged.get_int("phase2", "trace_every"));

    ec.phase3.eps_risk = merged.get_double("phase3", "eps_risk");
    require_unit_interval(ec.phase3.eps_risk, "phase3.eps_risk", false, false);
    ec.phase3.critic_lr = merged.get_double("phase3", "critic_lr");
    ec.phase3.recovery_lr = merged.get_double("phase3", "recovery_lr");
    require_positive(ec.phase3.critic_lr, "phase3.critic_lr");
    require_positive(ec.phase3.recovery_lr, "phase3.recovery_lr");
    ec.phase3.polyak_tau = risk_tau;

    ec.ablate_fractions = merged.get_double_list("ablation", "fractions");
    if (ec.ablate_fractions.empty())
      throw ConfigError("config: ablation.fractions must not be empty");
    for (double f : ec.ablate_fractions)
      require_unit_interval(f, "ablation.fractions", true, false);

    if (is_nav(ec.family)) ec.heatmap_grid = require_count(merged, "heatmap", "grid_n");
  }

  if (ec.mode == exec::AlgorithmMode::mesa) {
    ec.meta.iterations = static_cast<std::size_t>(merged.get_int("phase1", "iterations"));
    ec.meta.task_batch = require_count(merged, "phase1", "task_batch");
    ec.meta.inner_batch = require_count(merged, "phase1", "inner_batch");
    ec.meta.outer_batch = require_count(merged, "phase1", "outer_batch");
    ec.meta.inner_lr = merged.get_double("phase1", "inner_lr");
    ec.meta.outer_lr = merged.get_double("phase1", "outer_lr");
    ec.meta.recovery_lr = merged.get_double("phase1", "recovery_lr");
    require_positive(ec.meta.inner_lr, "phase1.inner_lr");
    require_positive(ec.meta.outer_lr, "phase1.outer_lr");
    require_positive(ec.meta.recovery_lr, "phase1.recovery_lr");
    ec.meta.adapt_steps = ec.adapt.steps;
    ec.meta.polyak_tau = ec.adapt.polyak_tau;
    const std::string mode_text = merged.get_string("phase1", "meta_mode");
    if (mode_text == "first_order")
      ec.meta.mode = net::MetaMode::first_order;
    else if (mode_text == "exact")
      ec.meta.mode = net::MetaMode::exact;
    else
      throw ConfigError("config: phase1.meta_mode must be first_order or exact");
  } else if (ec.mode == exec::AlgorithmMode::multitask) {
    ec.pooled.iterations = static_cast<std::size_t>(merged.get_int("phase1", "iterations"));
    ec.pooled.batch = require_count(merged, "phase1", "batch");
    ec.pooled.adam_lr = merged.get_double("phase1", "lr");
    require_positive(ec.pooled.adam_lr, "phase1.lr");
    ec.pooled.polyak_tau = ec.adapt.polyak_tau;
  }

  ec.phase3.episodes = require_count(merged, "phase3", "episodes");
  ec.phase3.batch = require_count(merged, "phase3", "batch");
  ec.phase3.record_wall_time = merged.get_bool("phase3", "record_wall_time");

  ec.sac.hidden = ec.hidden;
  ec.sac.lr = merged.get_double("sac", "lr");
  require_positive(ec.sac.lr, "sac.lr");
  ec.sac.gamma = merged.get_double("sac", "gamma");
  require_unit_interval(ec.sac.gamma, "sac.gamma", true, true);
  ec.sac.polyak_tau = merged.get_double("sac", "polyak_tau");
  require_unit_interval(ec.sac.polyak_tau, "sac.polyak_tau", true, false);
  ec.sac.init_temperature = merged.get_double("sac", "init_temperature");
  if (ec.sac.init_temperature < 0.0)
    throw ConfigError("config: sac.init_temperature must be >= 0");
  ec.sac.auto_temperature = merged.get_bool("sac", "auto_temperature");

  ec.manifest = std::move(merged);
  return ec;
}

void cmd_collect(const ExperimentConfig& cfg, std::ostream* log) {
  const Paths paths{cfg.output_root};
  fs::create_directories(paths.dataset_dir(cfg.family));
  const env::CmdpSpec spec = env::spec_for(cfg.family);
  const std::string family = env::family_name(cfg.family);

  for (std::size_t i = 0; i < cfg.n_train_datasets; ++i) {
    Rng rng(derive_seed(cfg.collect_seed, "collect/" + family + "/train/" + std::to_string(i)));
    const env::EnvParams params = env::sample_env(cfg.family, env::Role::train, rng);
    data::OfflineDataset ds;
    if (is_nav(cfg.family)) {
      ds = data::collect_random(params, cfg.train_dataset_size, rng);
    } else {
      // Train a task policy on this environment, stop at the intermediate
      // point of the budget, and replay the checkpointed policy.
      sac::SacAgent agent =
          sac::make_sac(spec.state_dim, spec.action_dim, spec.action_bound, cfg.sac, rng);
      exec::Phase3Config pretrain = cfg.phase3;
      pretrain.episodes = std::max<std::size_t>(
          1, static_cast<std::size_t>(
                 std::llround(cfg.intermediate_fraction *
                              static_cast<double>(cfg.pretrain_episodes))));
      pretrain.record_wall_time = false;
      exec::run_phase3(params, agent, nullptr, nullptr, exec::AlgorithmMode::unconstrained,
                       nullptr, pretrain, rng);
      const std::string policy_path =
          paths.dataset_dir(cfg.family) + "/collect_policy_" + std::to_string(i) + ".ckpt";
      ckpt::save(sac::to_checkpoint(agent), policy_path);
      ds = sac::collect_policy_replay(params, policy_path, cfg.train_episodes, rng);
    }
    data::save(ds, paths.train_dataset(cfg.family, i));
    log_line(log, "collect: " + paths.train_dataset(cfg.family, i) + " (" +
                      std::to_string(ds.size()) + " records, " +
                      std::to_string(ds.violation_count()) + " violations)");
  }

  Rng rng(derive_seed(cfg.collect_seed, "collect/" + family + "/test"));
  const env::EnvParams params = env::sample_env(cfg.family, env::Role::test, rng);
  // Navigation test sets keep the continue-past-violation collection regime;
  // a fallen cartpole cannot keep balancing, so there episodes restart.
  const data::OfflineDataset ds = data::collect_random(
      params, cfg.test_dataset_size, rng, /*terminate_on_violation=*/!is_nav(cfg.family));
  data::save(ds, paths.test_dataset(cfg.family));
  log_line(log, "collect: " + paths.test_dataset(cfg.family) + " (" +
                    std::to_string(ds.size()) + " records, " +
                    std::to_string(ds.violation_count()) + " violations)");
}

void cmd_train(const ExperimentConfig& cfg, std::ostream* log) { train_impl(cfg, "", log); }

void cmd_run(const ExperimentConfig& cfg, std::ostream* log) { (void)run_impl(cfg, "", log); }

void cmd_ablate_testsize(const ExperimentConfig& cfg, std::ostream* log) {
  if (!exec::uses_critic(cfg.mode))
    throw ConfigError("ablation: the unconstrained mode has no test dataset to ablate");
  const Paths paths{cfg.output_root};

  csv::Table summary;
  summary.columns = {"fraction", "violations_mean", "violations_se", "success_mean",
                     "success_se"};
  for (double fraction : cfg.ablate_fractions) {
    ExperimentConfig cell = cfg;
    cell.test_fraction = fraction;
    cell.manifest.set("experiment", "test_fraction", csv::format_double(fraction));
    const std::string tag = fraction_tag(fraction);
    train_impl(cell, tag, log);
    const std::vector<exec::RunMetrics> runs = run_impl(cell, tag, log);

    std::vector<double> violations, successes;
    for (const exec::RunMetrics& run : runs) {
      violations.push_back(static_cast<double>(run.total_violations()));
      successes.push_back(run.success_rate());
    }
    const MeanSe v = mean_se(violations);
    const MeanSe s = mean_se(successes);
    summary.rows.push_back({fraction, v.mean, v.se, s.mean, s.se});
  }
  csv::save(summary, paths.mode_dir(cfg.family, cfg.mode) + "/ablation.csv");
  log_line(log, "ablation summary: " + paths.mode_dir(cfg.family, cfg.mode) + "/ablation.csv");
}

void cmd_export_plots(const ExperimentConfig& cfg, std::ostream* log) {
  const Paths paths{cfg.output_root};
  std::vector<svg::Series> returns, violations;
  for (exec::AlgorithmMode mode : kAllModes) {
    const std::string path = paths.mode_dir(cfg.family, mode) + "/aggregate.csv";
    if (!fs::exists(path)) continue;
    const csv::Table agg = csv::load(path);
    const std::size_t c_episode = agg.col("episode");
    const std::size_t c_ret = agg.col("return_mean");
    const std::size_t c_ret_se = agg.col("return_se");
    const std::size_t c_cum = agg.col("cumulative_violations_mean");
    const std::size_t c_cum_se = agg.col("cumulative_violations_se");

    svg::Series ret, cum;
    ret.label = cum.label = exec::mode_name(mode);
    ret.color = cum.color = mode_color(mode);
    for (const std::vector<double>& row : agg.rows) {
      ret.x.push_back(row[c_episode]);
      ret.y.push_back(row[c_ret]);
      ret.band.push_back(row[c_ret_se]);
      cum.x.push_back(row[c_episode]);
      cum.y.push_back(row[c_cum]);
      cum.band.push_back(row[c_cum_se]);
    }
    returns.push_back(std::move(ret));
    violations.push_back(std::move(cum));
  }
  if (returns.empty())
    throw ConfigError("export-plots: no aggregate.csv found under " + paths.root + "/runs/" +
                      env::family_name(cfg.family));

  fs::create_directories(paths.plot_dir(cfg.family));
  svg::PlotSpec ret_spec;
  ret_spec.title = std::string(env::family_name(cfg.family)) + ": episode return";
  ret_spec.x_label = "episode";
  ret_spec.y_label = "return";
  const std::string ret_path = paths.plot_dir(cfg.family) + "/returns.svg";
  {
    std::ofstream out(ret_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("export-plots: cannot write '" + ret_path + "'");
    out << svg::line_chart(ret_spec, returns);
  }

  svg::PlotSpec cum_spec;
  cum_spec.title = std::string(env::family_name(cfg.family)) + ": cumulative violations";
  cum_spec.x_label = "episode";
  cum_spec.y_label = "cumulative violations";
  const std::string cum_path = paths.plot_dir(cfg.family) + "/violations.svg";
  {
    std::ofstream out(cum_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("export-plots: cannot write '" + cum_path + "'");
    out << svg::line_chart(cum_spec, violations);
  }
  log_line(log, "plots: " + ret_path + ", " + cum_path);
}

void cmd_heatmap(const ExperimentConfig& cfg, std::ostream* log) {
  if (!exec::uses_critic(cfg.mode))
    throw ConfigError("heatmap: the unconstrained mode has no safety critic");
  if (!is_nav(cfg.family))
    throw ConfigError("heatmap: requires a 2-d navigation family");
  const Paths paths{cfg.output_root};
  const env::CmdpSpec spec = env::spec_for(cfg.family);

  for (std::uint64_t seed : cfg.seeds) {
    const std::string run_dir = paths.run_dir(cfg.family, cfg.mode, seed);
    safety::SafetyCritic critic;
    safety::RecoveryPolicy recovery;
    load_safety(run_dir, critic, recovery);
    const exec::StateActionRule rule = [&recovery](std::span<const double> state) {
      return recovery.act(state);
    };
    const std::vector<double> values = exec::evaluate_critic_heatmap(
        critic, rule, cfg.heatmap_grid, spec.domain_lo, spec.domain_hi);
    csv::save_heatmap(run_dir + "/heatmap.csv", cfg.heatmap_grid, values);

    svg::PlotSpec map_spec;
    map_spec.title = std::string(exec::mode_name(cfg.mode)) + " risk, seed " +
                     std::to_string(seed);
    map_spec.width = 480.0;
    map_spec.height = 480.0;
    const std::string svg_path = run_dir + "/heatmap.svg";
    std::ofstream out(svg_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("heatmap: cannot write '" + svg_path + "'");
    out << svg::heatmap_chart(map_spec, cfg.heatmap_grid, values);
    log_line(log, "heatmap: " + run_dir + "/heatmap.csv");
  }
}

}  // namespace mesa::pipe
