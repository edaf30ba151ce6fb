#pragma once

// Constrained environments: three planar navigation variants with linear
// Gaussian dynamics, and a continuous-force cartpole whose pole length
// varies across sampled instances. Constraint flags mark wall/boundary
// collisions (navigation) or pole/track limits (cartpole).

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mesa/rng.hpp"

namespace mesa::env {

enum class Family { nav1, nav2, maze, cartpole };
enum class Role { train, test };

const char* family_name(Family family);
Family family_from_name(std::string_view name);

// Per-instance parameters. Navigation instances vary the diagonal A/B
// scales of s' = A s + B a + eps; maze instances vary the wall-gap offsets
// (identity A/B); cartpole instances vary the pole length.
struct EnvParams {
  Family family = Family::maze;
  double a_scale = 1.0;
  double b_scale = 1.0;
  double sigma = 0.005;      // navigation transition noise
  double w1 = 0.0;           // maze gap offsets
  double w2 = 0.0;
  double pole_length = 1.0;  // cartpole full pole length

  bool operator==(const EnvParams&) const = default;
};

// Static description of a family's interface.
struct CmdpSpec {
  std::size_t state_dim = 2;
  std::size_t action_dim = 2;
  double action_bound = 0.1;  // symmetric box per dimension
  int horizon = 100;
  double domain_lo = 0.0;  // square domain (navigation families only)
  double domain_hi = 1.0;
  std::array<double, 2> goal = {0.0, 0.0};
  double goal_radius = 0.05;
};

CmdpSpec spec_for(Family family);

// Draws train-role parameters from the family's distribution; test-role
// parameters are fixed (unseen during training).
EnvParams sample_env(Family family, Role role, Rng& rng);

std::vector<double> reset(const EnvParams& env, Rng& rng);

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  bool constraint = false;  // this transition violated
  bool success = false;     // navigation: reached the goal region
  bool done = false;        // violation, or navigation success
};

StepResult step(const EnvParams& env, std::span<const double> state,
                std::span<const double> action, Rng& rng);

// Family-specific entry points (step() dispatches to these).
StepResult step_nav(const EnvParams& env, std::span<const double> state,
                    std::span<const double> action, Rng& rng);
StepResult step_cartpole(const EnvParams& env, std::span<const double> state,
                         std::span<const double> action, Rng& rng);

// True iff the state violates the family's constraint. Depends on EnvParams
// only for the maze family, whose wall gaps move across instances.
bool constraint_violated(const EnvParams& env, std::span<const double> state);

// Deterministic part of the navigation transition (clipped action, no
// noise); used by the discretization oracle.
std::array<double, 2> nav_mean_next(const EnvParams& env, std::span<const double> state,
                                    std::span<const double> action);

// Cartpole dynamics terms shared with test oracles: d/dt of
// (x, xdot, theta, thetadot) under a given force.
std::array<double, 4> cartpole_derivatives(const EnvParams& env, std::span<const double> state,
                                           double force);

}  // namespace mesa::env
