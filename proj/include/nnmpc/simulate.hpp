#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <vector>

#include "nnmpc/expr.hpp"
#include "nnmpc/plant.hpp"

namespace nnmpc {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulatorConfig {
  double rtol = 1e-6;
  double atol = 1e-8;
  double newton_tol = 1e-10;
  int newton_max_iter = 50;
  long max_steps = 1000000;  // adaptive integrator step budget
};

// Method-of-lines reference integrator: the plant's semi-discrete rhs driven
// by an adaptive Dormand-Prince 5(4) pair. Deterministic for fixed inputs.
class MolSimulator {
 public:
  // n_fe < 0 means the plant's default grid.
  explicit MolSimulator(const Plant& plant, int n_fe = -1, SimulatorConfig cfg = {});
  MolSimulator(const MolSimulator&) = delete;
  MolSimulator& operator=(const MolSimulator&) = delete;

  int n_fe() const { return n_fe_; }
  int dim() const { return n_; }

  // Semi-discrete time derivative at a profile; exposed for model checks.
  void rhs(std::span<const double> x, std::span<const double> u, Eigen::VectorXd& dxdt) const;

  // Integrate from x0 over [0, t_end] with the controls held constant.
  Eigen::VectorXd run(const Eigen::VectorXd& x0, std::span<const double> u, double t_end) const;

 private:
  const Plant* plant_;
  int n_fe_ = 0;
  int n_ = 0;  // n_x * n_fe
  SimulatorConfig cfg_;
  ExprGraph graph_;
  ConstraintSet rows_;
  mutable EvalWorkspace ws_;
  mutable std::vector<double> input_;
};

// One implicit Euler step of the plant's one-step residual, solved with a
// damped Newton iteration. This is the truth model for step-based plants and
// the oracle the transcription is checked against.
class ImplicitStepper {
 public:
  ImplicitStepper(const Plant& plant, double dt, int n_fe = -1, SimulatorConfig cfg = {});
  ImplicitStepper(const ImplicitStepper&) = delete;
  ImplicitStepper& operator=(const ImplicitStepper&) = delete;

  int n_fe() const { return n_fe_; }
  int dim() const { return n_; }
  double dt() const { return dt_; }

  Eigen::VectorXd step(std::span<const double> x_prev, std::span<const double> u) const;

  // One-step residual at an arbitrary point, for verification.
  Eigen::VectorXd residual(std::span<const double> x_prev, std::span<const double> x_next,
                           std::span<const double> u) const;

 private:
  void load_inputs(std::span<const double> x_prev, std::span<const double> x_next,
                   std::span<const double> u) const;

  const Plant* plant_;
  int n_fe_ = 0;
  int n_ = 0;
  double dt_ = 0.0;
  SimulatorConfig cfg_;
  ExprGraph graph_;
  ConstraintSet rows_;
  mutable EvalWorkspace ws_;
  mutable std::vector<double> input_;  // [x_next; x_prev; u]
};

// Spatial steady profile under constant controls, found by marching node by
// node: each axial node contributes n_x equations in its own n_x unknowns
// once the upstream node is known. Throws SimulationError when a node fails
// to converge.
Eigen::VectorXd steady_state(const Plant& plant, std::span<const double> u, int n_fe = -1,
                             SimulatorConfig cfg = {});

}  // namespace nnmpc
