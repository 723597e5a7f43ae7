#pragma once

#include <span>
#include <vector>

#include "nnmpc/nlp.hpp"
#include "nnmpc/plant.hpp"

namespace nnmpc {

// Uniform space-time grid for direct transcription.
struct Grid {
  double dt = 0.0;
  int n_fe = 0;
  double length = 0.0;
  int horizon = 0;  // implicit time steps (states exist at 0..horizon)
  int moves = 0;    // free control vectors; steps beyond reuse the last one

  double dz() const { return length / n_fe; }
  void validate() const;
};

// Grid from the plant's native discretization; moves < 0 means every step
// carries its own control vector.
Grid make_grid(const Plant& plant, int horizon, int moves = -1);

// Handles into an NlpProblem populated by transcribe(). Layout: states for
// step k = 0..P (each state-major over nodes), then the M control vectors.
struct TranscribedSystem {
  int var0 = 0;   // first state variable
  int uvar0 = 0;  // first control variable
  int row0 = 0;   // first dynamics row
  int n_x = 0, n_u = 0, n_fe = 0, horizon = 0, moves = 0;
  int inlet_bindings = 0;

  int state_var(int k, int s, int v) const {
    return var0 + k * n_x * n_fe + s * n_fe + (v - 1);
  }
  int control_var(int k, int l) const {
    return uvar0 + (k < moves ? k : moves - 1) * n_u + l;
  }
  int dynamics_row(int k, int s, int v) const {
    return row0 + k * n_x * n_fe + s * n_fe + (v - 1);
  }
  int num_state_vars() const { return (horizon + 1) * n_x * n_fe; }
  int num_control_vars() const { return moves * n_u; }
  int num_dynamics_rows() const { return horizon * n_x * n_fe; }
  // Inlet substitutions folded into each step's first-node rows.
  int inlet_bindings_per_step() const { return inlet_bindings; }

  // All state variables of step k in profile order, and the control vector
  // the step sees (aliased past the move horizon).
  std::vector<int> step_state_vars(int k) const;
  std::vector<int> step_control_vars(int k) const;
};

// Adds decision variables and implicit-Euler dynamics rows for the whole
// horizon to `problem`. Step-0 states are pinned to `x0_profile` through
// degenerate bounds; the inlet ghost node is substituted away, so boundary
// conditions cost no extra rows. Throws std::invalid_argument when the
// profile has the wrong size or leaves the closed state bounds.
// `dynamics_rows = false` lays out the variables only, for callers that tie
// the steps together with a surrogate instead of the mechanistic model.
TranscribedSystem transcribe(NlpProblem& problem, const Plant& plant, const Grid& grid,
                             std::span<const double> x0_profile, bool dynamics_rows = true);

// The semi-discrete spatial operator at a single node (one expression per
// state), mainly for model inspection.
std::vector<ExprId> spatial_rhs(const Plant& plant, ExprGraph& g,
                                std::span<const ExprId> profile, std::span<const ExprId> u,
                                int n_fe, int v);

}  // namespace nnmpc
