#include "mesa/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mesa/errors.hpp"

namespace mesa::oracle {

namespace {

constexpr double kValueTolerance = 1e-8;
constexpr std::size_t kMaxSweeps = 200000;

void check_policy(const DiscreteMdp& mdp, const std::vector<double>& policy) {
  if (policy.size() != mdp.n_states * mdp.n_actions)
    throw ShapeError("exact_risk: policy size " + std::to_string(policy.size()) +
                     " != n_states * n_actions");
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    double sum = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions; ++a) sum += policy[s * mdp.n_actions + a];
    if (std::abs(sum - 1.0) > 1e-6)
      throw NumericError("exact_risk: policy row " + std::to_string(s) + " sums to " +
                         std::to_string(sum));
  }
}

}  // namespace

std::size_t NavGrid::cell_of(double x, double y) const {
  const double h = pitch();
  const double fx = (x - lo) / h;
  const double fy = (y - lo) / h;
  if (fx < 0.0 || fy < 0.0) return sink();
  const auto ix = static_cast<std::size_t>(fx);
  const auto iy = static_cast<std::size_t>(fy);
  if (ix >= grid_n || iy >= grid_n) return sink();
  return iy * grid_n + ix;
}

std::array<double, 2> NavGrid::center_of(std::size_t cell) const {
  const double h = pitch();
  const std::size_t ix = cell % grid_n;
  const std::size_t iy = cell / grid_n;
  return {lo + (static_cast<double>(ix) + 0.5) * h, lo + (static_cast<double>(iy) + 0.5) * h};
}

std::vector<std::array<double, 2>> midpoint_action_set(double bound, std::size_t per_dim) {
  if (per_dim == 0) throw ShapeError("midpoint_action_set: per_dim must be positive");
  std::vector<double> axis(per_dim);
  const double bin = 2.0 * bound / static_cast<double>(per_dim);
  for (std::size_t i = 0; i < per_dim; ++i)
    axis[i] = -bound + (static_cast<double>(i) + 0.5) * bin;
  std::vector<std::array<double, 2>> actions;
  actions.reserve(per_dim * per_dim);
  for (double ay : axis)
    for (double ax : axis) actions.push_back({ax, ay});
  return actions;
}

DiscretizedNav discretize_nav(const env::EnvParams& env, std::size_t grid_n,
                              std::span<const std::array<double, 2>> actions,
                              double gamma_risk) {
  if (env.family == env::Family::cartpole)
    throw ConfigError("discretize_nav: cartpole has no planar grid oracle");
  if (grid_n < 8) throw ShapeError("discretize_nav: grid_n must be >= 8");
  if (actions.empty()) throw ShapeError("discretize_nav: empty action set");

  const env::CmdpSpec spec = env::spec_for(env.family);
  DiscretizedNav out;
  out.grid = NavGrid{spec.domain_lo, spec.domain_hi, grid_n};
  out.actions.assign(actions.begin(), actions.end());

  DiscreteMdp& mdp = out.mdp;
  mdp.n_states = out.grid.n_states();
  mdp.n_actions = actions.size();
  mdp.gamma_risk = gamma_risk;
  mdp.rows.resize(mdp.n_states * mdp.n_actions);
  mdp.violation.resize(mdp.n_states);

  const double h = out.grid.pitch();
  const double lo = out.grid.lo;
  const auto n = static_cast<std::ptrdiff_t>(grid_n);
  const std::uint32_t sink = static_cast<std::uint32_t>(out.grid.sink());

  for (std::size_t cell = 0; cell < out.grid.sink(); ++cell) {
    const std::array<double, 2> center = out.grid.center_of(cell);
    mdp.violation[cell] = env::constraint_violated(env, center) ? 1.0 : 0.0;
  }
  mdp.violation[sink] = 1.0;

  // Midpoint weight of extended cell index k (may lie outside the grid) for
  // a 1-D Gaussian centred at mu.
  const auto weight = [&](std::ptrdiff_t k, double mu) {
    const double c = lo + (static_cast<double>(k) + 0.5) * h;
    const double z = (c - mu) / env.sigma;
    return std::exp(-0.5 * z * z);
  };

  std::vector<std::pair<std::uint32_t, double>> row;
  for (std::size_t cell = 0; cell < mdp.n_states; ++cell) {
    const bool absorbing = mdp.violation[cell] == 1.0;
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      if (absorbing) {
        mdp.row(cell, a) = {{static_cast<std::uint32_t>(cell), 1.0}};
        continue;
      }
      const std::array<double, 2> center = out.grid.center_of(cell);
      const std::array<double, 2> mu =
          env::nav_mean_next(env, std::span<const double>(center.data(), 2),
                             std::span<const double>(actions[a].data(), 2));
      row.clear();
      if (env.sigma == 0.0) {
        row.emplace_back(static_cast<std::uint32_t>(out.grid.cell_of(mu[0], mu[1])), 1.0);
      } else {
        // Window of midpoints within ~6 sigma of the mean (at least the
        // nearest cell), extended beyond the grid so out-of-domain mass
        // lands in the sink.
        const auto reach = static_cast<std::ptrdiff_t>(
            std::max(1.0, std::ceil(6.0 * env.sigma / h)));
        const auto near_x = static_cast<std::ptrdiff_t>(std::floor((mu[0] - lo) / h));
        const auto near_y = static_cast<std::ptrdiff_t>(std::floor((mu[1] - lo) / h));
        double total = 0.0;
        double sink_mass = 0.0;
        for (std::ptrdiff_t ky = near_y - reach; ky <= near_y + reach; ++ky) {
          const double wy = weight(ky, mu[1]);
          for (std::ptrdiff_t kx = near_x - reach; kx <= near_x + reach; ++kx) {
            const double w = wy * weight(kx, mu[0]);
            total += w;
            if (kx < 0 || kx >= n || ky < 0 || ky >= n) {
              sink_mass += w;
            } else if (w > 0.0) {
              row.emplace_back(static_cast<std::uint32_t>(ky) * grid_n +
                                   static_cast<std::uint32_t>(kx),
                               w);
            }
          }
        }
        if (total <= 0.0) {
          // All midpoint weights underflowed (sigma far below cell pitch):
          // degenerate to the deterministic mapping.
          row.assign(1, {static_cast<std::uint32_t>(out.grid.cell_of(mu[0], mu[1])), 1.0});
        } else {
          for (auto& e : row) e.second /= total;
          if (sink_mass > 0.0) row.emplace_back(sink, sink_mass / total);
        }
      }
      mdp.row(cell, a) = row;
    }
  }
  return out;
}

std::vector<double> uniform_policy(const DiscreteMdp& mdp) {
  return std::vector<double>(mdp.n_states * mdp.n_actions,
                             1.0 / static_cast<double>(mdp.n_actions));
}

std::vector<double> exact_risk(const DiscreteMdp& mdp, const std::vector<double>& policy) {
  check_policy(mdp, policy);
  std::vector<double> v(mdp.violation.begin(), mdp.violation.end());
  std::vector<double> next(mdp.n_states);
  for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double delta = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      if (mdp.violation[s] == 1.0) {
        next[s] = 1.0;
        continue;
      }
      double acc = 0.0;
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        const double pi = policy[s * mdp.n_actions + a];
        if (pi == 0.0) continue;
        double ev = 0.0;
        for (const auto& [sp, p] : mdp.row(s, a)) ev += p * v[sp];
        acc += pi * ev;
      }
      next[s] = mdp.gamma_risk * acc;
      delta = std::max(delta, std::abs(next[s] - v[s]));
    }
    v.swap(next);
    if (delta <= kValueTolerance) return v;
  }
  throw NumericError("exact_risk: value iteration did not converge");
}

std::vector<double> q_risk(const DiscreteMdp& mdp, const std::vector<double>& v) {
  if (v.size() != mdp.n_states) throw ShapeError("q_risk: value vector size mismatch");
  std::vector<double> q(mdp.n_states * mdp.n_actions, 0.0);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      double acc = 0.0;
      for (const auto& [sp, p] : mdp.row(s, a)) acc += p * v[sp];
      q[s * mdp.n_actions + a] = acc;
    }
  return q;
}

std::vector<double> td_state_risk(const DiscreteMdp& mdp, const std::vector<double>& v) {
  if (v.size() != mdp.n_states) throw ShapeError("td_state_risk: value vector size mismatch");
  if (mdp.gamma_risk <= 0.0)
    throw NumericError("td_state_risk: requires gamma_risk > 0");
  std::vector<double> w(mdp.n_states);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    w[s] = mdp.violation[s] == 1.0 ? 1.0 : v[s] / mdp.gamma_risk;
  return w;
}

}  // namespace mesa::oracle
