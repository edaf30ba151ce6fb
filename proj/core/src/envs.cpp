#include "mesa/envs.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mesa/errors.hpp"

namespace mesa::env {

namespace {

constexpr double kWallHalfThickness = 0.025;
constexpr double kGapHalfHeight = 0.1;
constexpr double kRimWidth = 0.1;

constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kGravity = 9.8;
constexpr double kForceBound = 10.0;
constexpr double kDt = 0.02;
constexpr double kTrackLimit = 2.4;
constexpr double kAngleLimit = 1.5707963267948966;  // pi/2

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

struct Wall {
  double x_center;
  double gap_center;
};

// Vertical walls for the navigation families. Each wall is a slab of
// half-thickness 0.025 spanning the domain except for a gap of half-height
// 0.1 around gap_center.
std::vector<Wall> walls_for(const EnvParams& env) {
  switch (env.family) {
    case Family::nav1:
      return {{0.0, 0.0}};
    case Family::nav2:
      return {{-1.0 / 6.0, 0.0}, {1.0 / 6.0, 0.0}};
    case Family::maze:
      return {{1.0 / 3.0, 0.5 + env.w1}, {2.0 / 3.0, 0.5 + env.w2}};
    case Family::cartpole:
      return {};
  }
  return {};
}

void check_dims(const EnvParams& env, std::span<const double> state,
                std::span<const double> action) {
  CmdpSpec spec = spec_for(env.family);
  if (state.size() != spec.state_dim)
    throw ShapeError("step: state dim " + std::to_string(state.size()) + " != " +
                     std::to_string(spec.state_dim));
  if (action.size() != spec.action_dim)
    throw ShapeError("step: action dim " + std::to_string(action.size()) + " != " +
                     std::to_string(spec.action_dim));
}

}  // namespace

const char* family_name(Family family) {
  switch (family) {
    case Family::nav1: return "nav1";
    case Family::nav2: return "nav2";
    case Family::maze: return "maze";
    case Family::cartpole: return "cartpole";
  }
  return "?";
}

Family family_from_name(std::string_view name) {
  if (name == "nav1") return Family::nav1;
  if (name == "nav2") return Family::nav2;
  if (name == "maze") return Family::maze;
  if (name == "cartpole") return Family::cartpole;
  throw ConfigError("unknown environment family: " + std::string(name));
}

CmdpSpec spec_for(Family family) {
  CmdpSpec spec;
  switch (family) {
    case Family::nav1:
    case Family::nav2:
      spec.state_dim = 2;
      spec.action_dim = 2;
      spec.action_bound = 0.1;
      spec.horizon = 100;
      spec.domain_lo = -0.5;
      spec.domain_hi = 0.5;
      spec.goal = {0.4, 0.0};
      spec.goal_radius = 0.05;
      break;
    case Family::maze:
      spec.state_dim = 2;
      spec.action_dim = 2;
      spec.action_bound = 0.1;
      spec.horizon = 100;
      spec.domain_lo = 0.0;
      spec.domain_hi = 1.0;
      spec.goal = {0.975, 0.5};
      spec.goal_radius = 0.05;
      break;
    case Family::cartpole:
      spec.state_dim = 4;
      spec.action_dim = 1;
      spec.action_bound = kForceBound;
      spec.horizon = 1000;
      spec.domain_lo = 0.0;  // not meaningful for cartpole
      spec.domain_hi = 0.0;
      spec.goal = {0.0, 0.0};
      spec.goal_radius = 0.0;
      break;
  }
  return spec;
}

EnvParams sample_env(Family family, Role role, Rng& rng) {
  EnvParams p;
  p.family = family;
  switch (family) {
    case Family::nav1:
    case Family::nav2:
      if (role == Role::train) {
        p.a_scale = rng.uniform(0.75, 1.0);
        p.b_scale = rng.uniform(0.75, 1.25);
      } else {
        p.a_scale = 0.7;
        p.b_scale = 1.3;
      }
      p.sigma = 0.005;
      break;
    case Family::maze:
      p.a_scale = 1.0;
      p.b_scale = 1.0;
      p.sigma = 0.005;
      if (role == Role::train) {
        p.w1 = rng.uniform(-0.1, 0.1);
        p.w2 = rng.uniform(-0.1, 0.1);
      } else {
        p.w1 = 0.08;
        p.w2 = -0.08;
      }
      break;
    case Family::cartpole:
      p.sigma = 0.0;
      p.pole_length = role == Role::train ? rng.uniform(0.4, 0.8) : 1.0;
      break;
  }
  return p;
}

std::vector<double> reset(const EnvParams& env, Rng& rng) {
  switch (env.family) {
    case Family::nav1:
    case Family::nav2:
      return {rng.uniform(-0.49, -0.45), rng.uniform(-0.4, 0.4)};
    case Family::maze:
      // Left start column, inset from the domain boundary (the boundary
      // itself counts as a collision).
      return {rng.uniform(0.005, 0.05), rng.uniform(0.1, 0.9)};
    case Family::cartpole: {
      std::vector<double> s(4);
      for (double& x : s) x = rng.uniform(-0.05, 0.05);
      return s;
    }
  }
  return {};
}

bool constraint_violated(const EnvParams& env, std::span<const double> state) {
  if (env.family == Family::cartpole) {
    return std::abs(state[2]) > kAngleLimit || std::abs(state[0]) > kTrackLimit;
  }
  CmdpSpec spec = spec_for(env.family);
  double x = state[0], y = state[1];
  // Domain boundary counts as a collision.
  if (x <= spec.domain_lo || x >= spec.domain_hi || y <= spec.domain_lo || y >= spec.domain_hi)
    return true;
  for (const Wall& wall : walls_for(env)) {
    if (std::abs(x - wall.x_center) <= kWallHalfThickness &&
        std::abs(y - wall.gap_center) >= kGapHalfHeight)
      return true;
  }
  return false;
}

std::array<double, 2> nav_mean_next(const EnvParams& env, std::span<const double> state,
                                    std::span<const double> action) {
  CmdpSpec spec = spec_for(env.family);
  double ax = clip(action[0], -spec.action_bound, spec.action_bound);
  double ay = clip(action[1], -spec.action_bound, spec.action_bound);
  return {env.a_scale * state[0] + env.b_scale * ax, env.a_scale * state[1] + env.b_scale * ay};
}

StepResult step_nav(const EnvParams& env, std::span<const double> state,
                    std::span<const double> action, Rng& rng) {
  check_dims(env, state, action);
  CmdpSpec spec = spec_for(env.family);
  std::array<double, 2> mean = nav_mean_next(env, state, action);
  StepResult r;
  // Positions are physically confined to a rim one action-bound beyond the
  // legal domain: the rim itself violates the boundary predicate, but keeps
  // trajectories compact when collection continues past violations (some
  // training tasks have expansive dynamics, a_scale > 1).
  const double rim_lo = spec.domain_lo - kRimWidth;
  const double rim_hi = spec.domain_hi + kRimWidth;
  r.next_state = {clip(mean[0] + rng.normal(0.0, env.sigma), rim_lo, rim_hi),
                  clip(mean[1] + rng.normal(0.0, env.sigma), rim_lo, rim_hi)};
  double dx = r.next_state[0] - spec.goal[0];
  double dy = r.next_state[1] - spec.goal[1];
  double dist = std::sqrt(dx * dx + dy * dy);
  r.reward = -dist;
  r.constraint = constraint_violated(env, r.next_state);
  r.success = !r.constraint && dist < spec.goal_radius;
  r.done = r.constraint || r.success;
  return r;
}

std::array<double, 4> cartpole_derivatives(const EnvParams& env, std::span<const double> state,
                                           double force) {
  // Standard frictionless cartpole; `half` is the pivot-to-center distance.
  const double half = env.pole_length / 2.0;
  const double total_mass = kCartMass + kPoleMass;
  const double xdot = state[1], theta = state[2], thetadot = state[3];
  const double sin_t = std::sin(theta), cos_t = std::cos(theta);
  const double temp = (force + kPoleMass * half * thetadot * thetadot * sin_t) / total_mass;
  const double theta_acc =
      (kGravity * sin_t - cos_t * temp) /
      (half * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total_mass));
  const double x_acc = temp - kPoleMass * half * theta_acc * cos_t / total_mass;
  return {xdot, x_acc, thetadot, theta_acc};
}

StepResult step_cartpole(const EnvParams& env, std::span<const double> state,
                         std::span<const double> action, Rng&) {
  check_dims(env, state, action);
  const double force = clip(action[0], -kForceBound, kForceBound);
  std::array<double, 4> d = cartpole_derivatives(env, state, force);
  StepResult r;
  // Explicit Euler at dt = 0.02.
  r.next_state = {state[0] + kDt * d[0], state[1] + kDt * d[1], state[2] + kDt * d[2],
                  state[3] + kDt * d[3]};
  r.constraint = constraint_violated(env, r.next_state);
  r.reward = r.constraint ? 0.0 : 1.0;
  r.success = false;  // episode-level survival is judged by the runner
  r.done = r.constraint;
  return r;
}

StepResult step(const EnvParams& env, std::span<const double> state,
                std::span<const double> action, Rng& rng) {
  if (env.family == Family::cartpole) return step_cartpole(env, state, action, rng);
  return step_nav(env, state, action, rng);
}

}  // namespace mesa::env
