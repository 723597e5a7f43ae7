#pragma once

// Primal-dual interior-point solver for the NLPs assembled in nlp.hpp.
//
// Bounds are handled with a log barrier, general rows are kept as equalities
// (inequalities get a slack bounded below), and each iteration solves one
// sparse symmetric KKT system. The Hessian of the Lagrangian is exact when
// every piece of the problem can provide second derivatives, and a damped
// BFGS approximation otherwise. Non-convergence is reported through the
// status code; solve() only throws for malformed problems.

#include <Eigen/Dense>
#include <string>

#include "nnmpc/nlp.hpp"

namespace nnmpc {

enum class SolveStatus {
  kOptimal,
  kMaxIterations,
  kLineSearchFailure,
  kInfeasible,
};

std::string to_string(SolveStatus s);

struct SolveOptions {
  double tol = 1e-6;
  int max_iter = 500;

  enum class Hessian { kAuto, kExact, kBfgs };
  Hessian hessian = Hessian::kAuto;

  double mu_init = 0.1;          // initial barrier parameter (cold start)
  bool verbose = false;          // per-iteration line on stdout
  std::string iter_trace_path;   // optional CSV with per-iteration data
};

struct SolveResult {
  SolveStatus status = SolveStatus::kMaxIterations;
  Eigen::VectorXd x;        // primal point, original variable order
  Eigen::VectorXd lambda;   // row multipliers (algebraic rows then blocks)
  Eigen::VectorXd z_lower;  // bound multipliers, 0 where the bound is absent
  Eigen::VectorXd z_upper;
  int iterations = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;         // scaled, at the barrier limit mu -> 0
  double constraint_violation = 0.0; // max-norm of row residuals
  double mu = 0.0;                   // final barrier parameter
  double wall_clock_seconds = 0.0;   // time inside solve() only
};

// `warm` may carry the result of a previous solve of a problem with the same
// layout; primal and dual values are then used as the starting point and the
// barrier parameter starts near its final value instead of mu_init.
SolveResult solve(NlpProblem& problem, const SolveOptions& opts,
                  const SolveResult* warm = nullptr);

}  // namespace nnmpc
