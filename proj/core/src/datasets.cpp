#include "mesa/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mesa/errors.hpp"

namespace mesa::data {

namespace {

constexpr char kMagic[4] = {'M', 'E', 'S', 'A'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint8_t family_code(env::Family family) {
  switch (family) {
    case env::Family::nav1: return 0;
    case env::Family::nav2: return 1;
    case env::Family::maze: return 2;
    case env::Family::cartpole: return 3;
  }
  throw IoError("dataset: unknown environment family");
}

env::Family family_from_code(std::uint8_t code) {
  switch (code) {
    case 0: return env::Family::nav1;
    case 1: return env::Family::nav2;
    case 2: return env::Family::maze;
    case 3: return env::Family::cartpole;
    default: throw IoError("dataset: unknown environment family code");
  }
}

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in.good()) throw IoError("dataset: truncated file");
  return value;
}

std::vector<double> random_action(const env::CmdpSpec& spec, Rng& rng) {
  std::vector<double> a(spec.action_dim);
  for (double& x : a) x = rng.uniform(-spec.action_bound, spec.action_bound);
  return a;
}

void validate_record(const TransitionRecord& r, const env::CmdpSpec& spec, std::size_t index) {
  const auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(r.state) || !finite(r.action) || !finite(r.next_state) ||
      !std::isfinite(r.reward))
    throw IoError("dataset: non-finite entries in record " + std::to_string(index));
  if (r.constraint != 0.0 && r.constraint != 1.0)
    throw IoError("dataset: constraint flag outside {0,1} in record " + std::to_string(index));
  for (double a : r.action)
    if (std::abs(a) > spec.action_bound + 1e-9)
      throw IoError("dataset: action outside bounds in record " + std::to_string(index));
}

}  // namespace

std::size_t OfflineDataset::violation_count() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(),
                    [](const TransitionRecord& r) { return r.constraint == 1.0; }));
}

OfflineDataset collect_random(const env::EnvParams& env, std::size_t n_transitions, Rng& rng,
                              bool terminate_on_violation) {
  if (n_transitions == 0) throw ShapeError("collect_random: need at least one transition");
  const env::CmdpSpec spec = env::spec_for(env.family);
  OfflineDataset ds;
  ds.env_params = env;
  ds.records.reserve(n_transitions);
  while (ds.records.size() < n_transitions) {
    std::vector<double> s = env::reset(env, rng);
    for (std::size_t t = 0; t < spec.horizon && ds.records.size() < n_transitions; ++t) {
      TransitionRecord rec;
      rec.state = s;
      rec.action = random_action(spec, rng);
      env::StepResult r = env::step(env, rec.state, rec.action, rng);
      rec.constraint = r.constraint ? 1.0 : 0.0;
      rec.reward = r.reward;
      rec.next_state = r.next_state;
      rec.done = r.done;
      ds.records.push_back(std::move(rec));
      if (r.success) break;
      if (terminate_on_violation && r.constraint) break;
      s = r.next_state;
    }
  }
  return ds;
}

OfflineDataset collect_policy(const env::EnvParams& env, const ActionSampler& sampler,
                              std::size_t n_episodes, Rng& rng) {
  if (n_episodes == 0) throw ShapeError("collect_policy: need at least one episode");
  const env::CmdpSpec spec = env::spec_for(env.family);
  OfflineDataset ds;
  ds.env_params = env;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    std::vector<double> s = env::reset(env, rng);
    for (std::size_t t = 0; t < spec.horizon; ++t) {
      TransitionRecord rec;
      rec.state = s;
      rec.action = sampler(rec.state, rng);
      env::StepResult r = env::step(env, rec.state, rec.action, rng);
      rec.constraint = r.constraint ? 1.0 : 0.0;
      rec.reward = r.reward;
      rec.next_state = r.next_state;
      rec.done = r.done;
      ds.records.push_back(std::move(rec));
      if (r.done) break;
      s = r.next_state;
    }
  }
  return ds;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t batch_size, Rng& rng,
                                        bool without_replacement) {
  if (n == 0) throw ShapeError("sample_indices: empty dataset");
  if (batch_size == 0) throw ShapeError("sample_indices: empty batch");
  if (without_replacement) {
    if (batch_size > n) throw ShapeError("sample_indices: batch larger than dataset");
    return rng.sample_without_replacement(n, batch_size);
  }
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t& i : idx) i = rng.index(n);
  return idx;
}

std::vector<TransitionRecord> sample_batch(const OfflineDataset& ds, std::size_t batch_size,
                                           Rng& rng, bool without_replacement) {
  std::vector<std::size_t> idx = sample_indices(ds.size(), batch_size, rng, without_replacement);
  std::vector<TransitionRecord> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(ds.records[i]);
  return batch;
}

OfflineDataset subsample_fraction(const OfflineDataset& ds, double fraction, Rng& rng) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ShapeError("subsample_fraction: fraction must lie in (0, 1]");
  if (ds.records.empty()) throw ShapeError("subsample_fraction: empty dataset");
  const auto k = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(ds.records.size())));
  std::vector<std::size_t> idx = rng.sample_without_replacement(ds.records.size(), k);
  std::sort(idx.begin(), idx.end());
  OfflineDataset out;
  out.env_params = ds.env_params;
  out.records.reserve(k);
  for (std::size_t i : idx) out.records.push_back(ds.records[i]);
  return out;
}

void save(const OfflineDataset& ds, const std::string& path) {
  const env::CmdpSpec spec = env::spec_for(ds.env_params.family);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("dataset: cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, family_code(ds.env_params.family));
  write_pod(out, ds.env_params.a_scale);
  write_pod(out, ds.env_params.b_scale);
  write_pod(out, ds.env_params.sigma);
  write_pod(out, ds.env_params.w1);
  write_pod(out, ds.env_params.w2);
  write_pod(out, ds.env_params.pole_length);
  write_pod(out, static_cast<std::uint32_t>(spec.state_dim));
  write_pod(out, static_cast<std::uint32_t>(spec.action_dim));
  write_pod(out, static_cast<std::uint64_t>(ds.records.size()));
  for (const TransitionRecord& r : ds.records) {
    if (r.state.size() != spec.state_dim || r.next_state.size() != spec.state_dim ||
        r.action.size() != spec.action_dim)
      throw IoError("dataset: record dimensions do not match the environment");
    for (double x : r.state) write_pod(out, x);
    for (double x : r.action) write_pod(out, x);
    write_pod(out, static_cast<std::uint8_t>(r.constraint == 1.0 ? 1 : 0));
    write_pod(out, r.reward);
    for (double x : r.next_state) write_pod(out, x);
    write_pod(out, static_cast<std::uint8_t>(r.done ? 1 : 0));
  }
  out.flush();
  if (!out.good()) throw IoError("dataset: write failed: " + path);
}

OfflineDataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("dataset: cannot open: " + path);

  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("dataset: bad magic bytes: " + path);
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw IoError("dataset: unsupported format version " + std::to_string(version));

  OfflineDataset ds;
  ds.env_params.family = family_from_code(read_pod<std::uint8_t>(in));
  ds.env_params.a_scale = read_pod<double>(in);
  ds.env_params.b_scale = read_pod<double>(in);
  ds.env_params.sigma = read_pod<double>(in);
  ds.env_params.w1 = read_pod<double>(in);
  ds.env_params.w2 = read_pod<double>(in);
  ds.env_params.pole_length = read_pod<double>(in);
  const env::CmdpSpec spec = env::spec_for(ds.env_params.family);
  const auto state_dim = read_pod<std::uint32_t>(in);
  const auto action_dim = read_pod<std::uint32_t>(in);
  if (state_dim != spec.state_dim || action_dim != spec.action_dim)
    throw IoError("dataset: stored dimensions do not match the environment family");
  const auto count = read_pod<std::uint64_t>(in);

  const std::uintmax_t record_bytes =
      (2 * spec.state_dim + spec.action_dim + 1) * sizeof(double) + 2;
  const std::uintmax_t header_bytes = 4 + 4 + 1 + 6 * sizeof(double) + 4 + 4 + 8;
  std::error_code ec;
  const std::uintmax_t actual = std::filesystem::file_size(path, ec);
  if (ec || actual != header_bytes + count * record_bytes)
    throw IoError("dataset: truncated file: " + path);

  ds.records.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    TransitionRecord& r = ds.records[i];
    r.state.resize(spec.state_dim);
    for (double& x : r.state) x = read_pod<double>(in);
    r.action.resize(spec.action_dim);
    for (double& x : r.action) x = read_pod<double>(in);
    r.constraint = read_pod<std::uint8_t>(in) ? 1.0 : 0.0;
    r.reward = read_pod<double>(in);
    r.next_state.resize(spec.state_dim);
    for (double& x : r.next_state) x = read_pod<double>(in);
    r.done = read_pod<std::uint8_t>(in) != 0;
    // Collection may continue past violations; temporal-difference targets
    // must still treat a violation as terminal.
    if (r.constraint == 1.0) r.done = true;
    validate_record(r, spec, i);
  }
  return ds;
}

}  // namespace mesa::data
