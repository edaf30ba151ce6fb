#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mesa/envs.hpp"

namespace mesa::oracle {

// Tabular CMDP over grid cells. Transition rows are sparse lists of
// (next_state, probability) pairs; each row sums to 1. Violating states are
// absorbing: once entered, no further risk accumulates (the episode ends).
struct DiscreteMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  double gamma_risk = 0.0;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;  // [s * n_actions + a]
  std::vector<double> violation;                                    // c[s] in {0,1}

  std::vector<std::pair<std::uint32_t, double>>& row(std::size_t s, std::size_t a) {
    return rows[s * n_actions + a];
  }
  const std::vector<std::pair<std::uint32_t, double>>& row(std::size_t s, std::size_t a) const {
    return rows[s * n_actions + a];
  }
};

// Uniform grid over the square planar domain [lo, hi]^2. Cell (ix, iy) covers
// [lo + ix*h, lo + (ix+1)*h) x [lo + iy*h, ...) and is indexed iy*grid_n + ix.
// Index grid_n^2 is the absorbing out-of-domain sink.
struct NavGrid {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t grid_n = 0;

  double pitch() const { return (hi - lo) / static_cast<double>(grid_n); }
  std::size_t sink() const { return grid_n * grid_n; }
  std::size_t n_states() const { return grid_n * grid_n + 1; }
  // Cell containing a continuous point, or sink() if out of domain.
  std::size_t cell_of(double x, double y) const;
  std::array<double, 2> center_of(std::size_t cell) const;
};

struct DiscretizedNav {
  NavGrid grid;
  std::vector<std::array<double, 2>> actions;
  DiscreteMdp mdp;
};

// Finite action set approximating the uniform box [-bound, bound]^2 by the
// midpoints of per_dim equal bins per dimension (per_dim^2 actions).
std::vector<std::array<double, 2>> midpoint_action_set(double bound, std::size_t per_dim);

// Discretizes a planar navigation environment. Transition mass for sigma > 0
// is assigned by evaluating the Gaussian kernel at cell midpoints (including
// an out-of-domain ring that feeds the sink) and renormalizing; sigma == 0
// maps each (cell, action) to the single cell containing the mean.
DiscretizedNav discretize_nav(const env::EnvParams& env, std::size_t grid_n,
                              std::span<const std::array<double, 2>> actions,
                              double gamma_risk);

// Per-state uniform distribution over the action set, row-major [s][a].
std::vector<double> uniform_policy(const DiscreteMdp& mdp);

// Fixed point of V(s) = c(s) + gamma * (1 - c(s)) * sum_a pi(a|s) * sum_s' P * V(s'),
// solved by value iteration to sup-norm tolerance 1e-8.
std::vector<double> exact_risk(const DiscreteMdp& mdp, const std::vector<double>& policy);

// Action risk in temporal-difference convention, built on top of exact_risk's
// fixed point: Q(s, a) = sum_s' P(s'|s,a) * V(s'). Equals the expected
// discounted violation indicator received at the *next* state onward.
std::vector<double> q_risk(const DiscreteMdp& mdp, const std::vector<double>& v);

// State risk in temporal-difference convention: W(s) = sum_a pi(a|s) Q(s,a).
// For non-violating states this equals V(s) / gamma; violating states have
// risk 1 by definition. Requires gamma_risk > 0.
std::vector<double> td_state_risk(const DiscreteMdp& mdp, const std::vector<double>& v);

}  // namespace mesa::oracle
