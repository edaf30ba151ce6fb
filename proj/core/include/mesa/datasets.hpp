#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mesa/envs.hpp"
#include "mesa/rng.hpp"

namespace mesa::data {

struct TransitionRecord {
  std::vector<double> state;
  std::vector<double> action;
  double constraint = 0.0;  // violation indicator in {0, 1}
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;

  bool operator==(const TransitionRecord&) const = default;
};

struct OfflineDataset {
  env::EnvParams env_params;
  std::vector<TransitionRecord> records;

  std::size_t size() const { return records.size(); }
  std::size_t violation_count() const;

  bool operator==(const OfflineDataset&) const = default;
};

// Uniform-random actions within bounds. Episodes run to the horizon and are
// not cut short by constraint violations (the collection regime) unless
// terminate_on_violation is set; success still ends an episode.
OfflineDataset collect_random(const env::EnvParams& env, std::size_t n_transitions, Rng& rng,
                              bool terminate_on_violation = false);

// Rollouts of an arbitrary action sampler under standard episode semantics
// (done ends the episode). Used for policy-replay collection.
using ActionSampler = std::function<std::vector<double>(std::span<const double>, Rng&)>;
OfflineDataset collect_policy(const env::EnvParams& env, const ActionSampler& sampler,
                              std::size_t n_episodes, Rng& rng);

// Batch index sampling: uniform with replacement by default; the
// without-replacement option returns batch_size distinct indices in random
// order (a permutation when batch_size == n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t batch_size, Rng& rng,
                                        bool without_replacement = false);
std::vector<TransitionRecord> sample_batch(const OfflineDataset& ds, std::size_t batch_size,
                                           Rng& rng, bool without_replacement = false);

// Uniform random subset of ceil(fraction * n) records, original order kept.
OfflineDataset subsample_fraction(const OfflineDataset& ds, double fraction, Rng& rng);

// Fixed little-endian binary format: magic "MESA", format version, the
// environment parameter block, the record dimensions and count, then packed
// records (floats as 64-bit, flags as single bytes). Loading normalizes
// done |= constraint so temporal-difference targets never bootstrap across a
// violation, and validates finiteness and action bounds.
void save(const OfflineDataset& ds, const std::string& path);
OfflineDataset load(const std::string& path);

}  // namespace mesa::data
