#pragma once

// Experiment orchestration: resolves configs against per-family/per-mode
// default tables, lays out datasets and run directories under an output
// root, and drives the full pipeline — offline data collection, offline
// critic training and adaptation, online runs, the test-set-size ablation
// sweep, and CSV/SVG artifact export.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mesa/config.hpp"
#include "mesa/envs.hpp"
#include "mesa/executor.hpp"
#include "mesa/safety.hpp"
#include "mesa/taskpolicy.hpp"

namespace mesa::pipe {

extern const char* const kCodeVersion;

// Fully validated experiment settings. `manifest` is the merged config
// (defaults overlaid with user values) that reproduces this struct.
struct ExperimentConfig {
  env::Family family = env::Family::maze;
  exec::AlgorithmMode mode = exec::AlgorithmMode::mesa;
  std::vector<std::uint64_t> seeds;
  std::uint64_t collect_seed = 1;
  double test_fraction = 1.0;
  std::string output_root;
  std::vector<std::size_t> hidden;
  double gamma_risk = 0.8;

  // Offline collection.
  std::size_t n_train_datasets = 20;
  std::size_t train_dataset_size = 10000;  // navigation families: random rollouts
  std::size_t train_episodes = 200;        // cartpole: replay episodes per dataset
  std::size_t pretrain_episodes = 100;     // cartpole: budget of the collection policy's run
  double intermediate_fraction = 0.25;     // cartpole: checkpoint point within that budget
  std::size_t test_dataset_size = 200;

  // Offline training (phase applicability depends on the mode).
  safety::MetaTrainConfig meta;
  safety::PooledTrainConfig pooled;
  safety::AdaptConfig adapt;

  // Online learning.
  exec::Phase3Config phase3;
  sac::SacConfig sac;

  std::size_t heatmap_grid = 32;
  std::vector<double> ablate_fractions;

  cfg::Config manifest;
};

// The complete default table for one family/mode cell. Every key the
// resolver understands appears here (except experiment.output_root, which
// falls back to the MESA_OUTPUT_ROOT environment variable).
cfg::Config defaults_for(env::Family family, exec::AlgorithmMode mode);

// Overlays `user` onto the matching default table and validates everything.
// Unknown keys and out-of-range values throw ConfigError.
ExperimentConfig resolve(const cfg::Config& user);

// Directory layout under the output root.
struct Paths {
  std::string root;

  std::string dataset_dir(env::Family family) const;
  std::string train_dataset(env::Family family, std::size_t index) const;
  std::string test_dataset(env::Family family) const;
  // fraction_tag "" gives runs/<family>/<mode>/seed<k>; a tag inserts one
  // more level, e.g. runs/<family>/<mode>/frac_0p25/seed<k>.
  std::string mode_dir(env::Family family, exec::AlgorithmMode mode,
                       const std::string& fraction_tag = "") const;
  std::string run_dir(env::Family family, exec::AlgorithmMode mode, std::uint64_t seed,
                      const std::string& fraction_tag = "") const;
  std::string plot_dir(env::Family family) const;
};

// File-name tag for an ablation fraction: 0.25 -> "frac_0p25".
std::string fraction_tag(double fraction);

// Phase-0: writes n_train training datasets plus one test dataset for the
// family. Navigation families roll out a uniform random policy; cartpole
// trains a task policy per training environment, checkpoints it at
// intermediate_fraction of the budget, and replays it.
void cmd_collect(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// Phases 1-2 for every seed: offline training (mode-dependent) followed by
// test-dataset adaptation; writes safety.ckpt, trace.csv, and manifest.cfg
// per seed. Validates dataset presence before any compute. A no-op apart
// from the manifest for the unconstrained mode.
void cmd_train(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// Phase 3 for every seed: online learning in the fixed test environment;
// writes metrics.csv per seed and aggregate.csv across seeds.
void cmd_run(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// Repeats train + run for each ablation fraction of the test dataset;
// writes per-fraction run trees plus ablation.csv summarizing final
// cumulative violations and success rates by fraction.
void cmd_ablate_testsize(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// Renders aggregate CSVs of every mode found under the family's run tree
// into SVG learning curves (returns and cumulative violations, with
// standard-error bands).
void cmd_export_plots(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// Evaluates each seed's adapted critic on a grid over the navigation
// domain (actions from the checkpointed recovery policy) and writes
// heatmap.csv + heatmap.svg into the run directory.
void cmd_heatmap(const ExperimentConfig& cfg, std::ostream* log = nullptr);

}  // namespace mesa::pipe
