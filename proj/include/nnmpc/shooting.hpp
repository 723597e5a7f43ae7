#pragma once

// Single-shooting baseline: only the control moves are decision variables,
// the model is rolled forward inside the objective, and derivatives come
// from forward finite differences. Exists to be compared against the
// transcribed formulations, not to win.

#include <functional>
#include <span>
#include <vector>

#include "nnmpc/nmpc.hpp"
#include "nnmpc/plant.hpp"
#include "nnmpc/solver.hpp"

namespace nnmpc {

// One sampling-period step of whatever model the rollout uses.
using ModelStep = std::function<void(std::span<const double> x, std::span<const double> u,
                                     std::span<double> x_next)>;

struct ShootingProblem {
  ModelStep model;
  int n_x = 0, n_fe = 0, n_u = 0;
  NmpcConfig cfg;  // horizon, moves, outputs and weights; variant is ignored
  std::vector<Interval> control_bounds;
  std::vector<double> x0, u_prev, setpoints;

  void validate() const;
};

// Wires a plant or surrogate into the rollout: the network's one-step map
// when a surrogate is given, otherwise the adaptive integrator (implicit
// stepper for plants without an explicit right-hand side) with tolerances
// tightened to 1e-8 so finite differences stay above the integration noise.
ShootingProblem make_shooting_problem(const Plant& plant, const Surrogate* surrogate,
                                      const NmpcConfig& cfg, std::span<const double> x0,
                                      std::span<const double> u_prev,
                                      std::span<const double> setpoints);

struct ShootingResult {
  std::vector<double> moves;  // n_u * M, step-major
  double objective = 0.0;
  SolveResult stats;
};

ShootingResult shooting_solve(const ShootingProblem& sp, const SolveOptions& opts = {});

}  // namespace nnmpc
