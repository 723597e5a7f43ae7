#include "nnmpc/simulate.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace nnmpc {

namespace {

// Dormand-Prince 5(4) tableau. The fifth-order weights are the last stage row;
// the embedded fourth-order weights provide the error estimate.
constexpr double kA2[] = {1.0 / 5};
constexpr double kA3[] = {3.0 / 40, 9.0 / 40};
constexpr double kA4[] = {44.0 / 45, -56.0 / 15, 32.0 / 9};
constexpr double kA5[] = {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729};
constexpr double kA6[] = {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176,
                          -5103.0 / 18656};
constexpr double kB5[] = {35.0 / 384,     0.0,       500.0 / 1113, 125.0 / 192,
                          -2187.0 / 6784, 11.0 / 84, 0.0};
constexpr double kB4[] = {5179.0 / 57600,    0.0,          7571.0 / 16695, 393.0 / 640,
                          -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
constexpr const double* kStageCoeffs[] = {kA2, kA3, kA4, kA5, kA6, kB5};

}  // namespace

MolSimulator::MolSimulator(const Plant& plant, int n_fe, SimulatorConfig cfg)
    : plant_(&plant), n_fe_(n_fe < 0 ? plant.n_fe() : n_fe), cfg_(cfg), rows_(&graph_) {
  if (!plant.has_explicit_rhs())
    throw std::invalid_argument("plant '" + plant.info().name +
                                "' has no explicit time derivative to integrate");
  n_ = plant.n_x() * n_fe_;
  std::vector<ExprId> x_ids(static_cast<std::size_t>(n_));
  std::vector<ExprId> u_ids(static_cast<std::size_t>(plant.n_u()));
  for (int i = 0; i < n_; ++i) x_ids[static_cast<std::size_t>(i)] = graph_.variable(i);
  for (int j = 0; j < plant.n_u(); ++j)
    u_ids[static_cast<std::size_t>(j)] = graph_.variable(n_ + j);
  for (ExprId id : plant.build_rhs(graph_, x_ids, u_ids, n_fe_))
    rows_.add(id, Relation::kEq, 0.0);
  input_.resize(static_cast<std::size_t>(n_ + plant.n_u()));
}

void MolSimulator::rhs(std::span<const double> x, std::span<const double> u,
                       Eigen::VectorXd& dxdt) const {
  if (static_cast<int>(x.size()) != n_ || static_cast<int>(u.size()) != plant_->n_u())
    throw std::invalid_argument("rhs input sizes do not match the plant");
  std::copy(x.begin(), x.end(), input_.begin());
  std::copy(u.begin(), u.end(), input_.begin() + n_);
  rows_.eval_all(input_, dxdt, ws_);
}

Eigen::VectorXd MolSimulator::run(const Eigen::VectorXd& x0, std::span<const double> u,
                                  double t_end) const {
  if (static_cast<int>(x0.size()) != n_)
    throw std::invalid_argument("initial profile size does not match the plant");
  Eigen::VectorXd x = x0;
  if (t_end <= 0.0) return x;

  std::array<Eigen::VectorXd, 7> k;
  Eigen::VectorXd stage(n_), x5(n_), err(n_);
  const auto fspan = [&](const Eigen::VectorXd& v) {
    return std::span<const double>(v.data(), static_cast<std::size_t>(v.size()));
  };

  double t = 0.0;
  double h = std::min(t_end, 1e-3 * t_end);
  long steps = 0;
  while (t < t_end) {
    if (++steps > cfg_.max_steps)
      throw SimulationError("integrator exceeded its step budget at t = " + std::to_string(t));
    if (h < 1e-14 * std::max(1.0, t))
      throw SimulationError("integrator step size underflow at t = " + std::to_string(t));

    rhs(fspan(x), u, k[0]);
    for (int s = 1; s < 7; ++s) {
      stage = x;
      for (int j = 0; j < s; ++j)
        stage += h * kStageCoeffs[s - 1][j] * k[static_cast<std::size_t>(j)];
      rhs(fspan(stage), u, k[static_cast<std::size_t>(s)]);
    }
    x5 = x;
    err.setZero();
    for (int j = 0; j < 7; ++j) {
      if (kB5[j] != 0.0) x5 += h * kB5[j] * k[static_cast<std::size_t>(j)];
      const double db = kB5[j] - kB4[j];
      if (db != 0.0) err += h * db * k[static_cast<std::size_t>(j)];
    }
    if (!x5.allFinite()) throw SimulationError("integration diverged at t = " + std::to_string(t));

    double acc = 0.0;
    for (int i = 0; i < n_; ++i) {
      const double sc = cfg_.atol + cfg_.rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
      acc += (err[i] / sc) * (err[i] / sc);
    }
    const double enorm = std::sqrt(acc / n_);
    const double factor =
        enorm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(enorm, -0.2), 0.2, 5.0);
    if (enorm <= 1.0) {
      t += h;
      x.swap(x5);
      if (t_end - t <= 1e-14 * t_end) break;
    }
    h = std::min(h * factor, t_end - t);
    if (h <= 0.0) break;
  }
  return x;
}

ImplicitStepper::ImplicitStepper(const Plant& plant, double dt, int n_fe, SimulatorConfig cfg)
    : plant_(&plant), n_fe_(n_fe < 0 ? plant.n_fe() : n_fe), dt_(dt), cfg_(cfg), rows_(&graph_) {
  if (dt <= 0.0) throw std::invalid_argument("implicit step size must be positive");
  n_ = plant.n_x() * n_fe_;
  std::vector<ExprId> next_ids(static_cast<std::size_t>(n_));
  std::vector<ExprId> prev_ids(static_cast<std::size_t>(n_));
  std::vector<ExprId> u_ids(static_cast<std::size_t>(plant.n_u()));
  for (int i = 0; i < n_; ++i) {
    next_ids[static_cast<std::size_t>(i)] = graph_.variable(i);
    prev_ids[static_cast<std::size_t>(i)] = graph_.variable(n_ + i);
  }
  for (int j = 0; j < plant.n_u(); ++j)
    u_ids[static_cast<std::size_t>(j)] = graph_.variable(2 * n_ + j);
  for (ExprId id : plant.build_step_residual(graph_, prev_ids, next_ids, u_ids, n_fe_, dt_))
    rows_.add(id, Relation::kEq, 0.0);
  input_.resize(static_cast<std::size_t>(2 * n_ + plant.n_u()));
}

void ImplicitStepper::load_inputs(std::span<const double> x_prev, std::span<const double> x_next,
                                  std::span<const double> u) const {
  if (static_cast<int>(x_prev.size()) != n_ || static_cast<int>(x_next.size()) != n_ ||
      static_cast<int>(u.size()) != plant_->n_u())
    throw std::invalid_argument("step input sizes do not match the plant");
  std::copy(x_next.begin(), x_next.end(), input_.begin());
  std::copy(x_prev.begin(), x_prev.end(), input_.begin() + n_);
  std::copy(u.begin(), u.end(), input_.begin() + 2 * n_);
}

Eigen::VectorXd ImplicitStepper::residual(std::span<const double> x_prev,
                                          std::span<const double> x_next,
                                          std::span<const double> u) const {
  load_inputs(x_prev, x_next, u);
  Eigen::VectorXd r;
  rows_.eval_all(input_, r, ws_);
  return r;
}

Eigen::VectorXd ImplicitStepper::step(std::span<const double> x_prev,
                                      std::span<const double> u) const {
  load_inputs(x_prev, x_prev, u);

  const JacPattern& pattern = rows_.jacobian_pattern();
  std::vector<double> vals(pattern.rows.size());
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::SparseMatrix<double> jac(n_, n_);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  Eigen::VectorXd r, r_trial, base(n_);

  for (int iter = 0; iter < cfg_.newton_max_iter; ++iter) {
    rows_.eval_all(input_, r, ws_);
    if (!r.allFinite())
      throw SimulationError("implicit step residual is not finite");
    if (r.lpNorm<Eigen::Infinity>() <= cfg_.newton_tol)
      return Eigen::Map<const Eigen::VectorXd>(input_.data(), n_);

    rows_.jacobian_values(input_, vals, ws_);
    triplets.clear();
    for (std::size_t idx = 0; idx < vals.size(); ++idx) {
      if (pattern.cols[idx] < n_)
        triplets.emplace_back(pattern.rows[idx], pattern.cols[idx], vals[idx]);
    }
    jac.setFromTriplets(triplets.begin(), triplets.end());
    lu.compute(jac);
    if (lu.info() != Eigen::Success)
      throw SimulationError("implicit step jacobian is singular");
    const Eigen::VectorXd dx = lu.solve(-r);
    if (!dx.allFinite()) throw SimulationError("implicit step direction is not finite");

    std::copy(input_.begin(), input_.begin() + n_, base.data());
    const double r0 = r.norm();
    double alpha = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 40 && !accepted; ++bt) {
      for (int i = 0; i < n_; ++i) input_[static_cast<std::size_t>(i)] = base[i] + alpha * dx[i];
      try {
        rows_.eval_all(input_, r_trial, ws_);
        accepted = r_trial.allFinite() && r_trial.norm() <= (1.0 - 1e-4 * alpha) * r0;
      } catch (const EvalError&) {
        // trial point left the model's domain; shorten the step
      }
      if (!accepted) alpha *= 0.5;
    }
    if (!accepted)
      throw SimulationError("implicit step stalled: no descent along the newton direction");
  }
  rows_.eval_all(input_, r, ws_);
  if (r.lpNorm<Eigen::Infinity>() <= cfg_.newton_tol)
    return Eigen::Map<const Eigen::VectorXd>(input_.data(), n_);
  throw SimulationError("implicit step did not converge in " +
                        std::to_string(cfg_.newton_max_iter) + " iterations");
}

Eigen::VectorXd steady_state(const Plant& plant, std::span<const double> u, int n_fe,
                             SimulatorConfig cfg) {
  const int nfe = n_fe < 0 ? plant.n_fe() : n_fe;
  const int nx = plant.n_x();
  const int n = nx * nfe;
  if (static_cast<int>(u.size()) != plant.n_u())
    throw std::invalid_argument("control vector size does not match the plant");

  ExprGraph g;
  std::vector<ExprId> x_ids(static_cast<std::size_t>(n));
  std::vector<ExprId> u_ids(static_cast<std::size_t>(plant.n_u()));
  for (int i = 0; i < n; ++i) x_ids[static_cast<std::size_t>(i)] = g.variable(i);
  for (int j = 0; j < plant.n_u(); ++j) u_ids[static_cast<std::size_t>(j)] = g.variable(n + j);

  // With identical previous and next profiles the accumulation term cancels
  // exactly, leaving transport = production: the spatial steady equations.
  const auto rows = plant.build_step_residual(g, x_ids, x_ids, u_ids, nfe, plant.dt());

  // Seed every node with its inlet value (bound midpoint when a state has no
  // inlet) so all intermediate expressions are well defined from the start.
  std::vector<double> x(static_cast<std::size_t>(n + plant.n_u()));
  for (int s = 0; s < nx; ++s) {
    const auto& b = plant.info().state_bounds[static_cast<std::size_t>(s)];
    double seed = 0.5 * (b.lb + b.ub);
    for (const auto& spec : plant.info().inlets) {
      if (spec.state == s)
        seed = spec.control >= 0 ? u[static_cast<std::size_t>(spec.control)] : spec.value;
    }
    for (int v = 0; v < nfe; ++v) x[static_cast<std::size_t>(s * nfe + v)] = seed;
  }
  for (int j = 0; j < plant.n_u(); ++j) x[static_cast<std::size_t>(n + j)] = u[j];

  EvalWorkspace ws;
  std::vector<std::pair<int, double>> grad;
  Eigen::MatrixXd jac(nx, nx);
  Eigen::VectorXd r(nx), r_trial(nx), dx(nx), base(nx);

  const auto eval_node = [&](int v, Eigen::VectorXd& out) {
    for (int s = 0; s < nx; ++s)
      out[s] = g.eval(rows[static_cast<std::size_t>(s * nfe + (v - 1))], x, ws);
  };

  for (int v = 1; v <= nfe; ++v) {
    if (v > 1) {
      for (int s = 0; s < nx; ++s)
        x[static_cast<std::size_t>(s * nfe + v - 1)] = x[static_cast<std::size_t>(s * nfe + v - 2)];
    }
    bool converged = false;
    for (int iter = 0; iter < cfg.newton_max_iter && !converged; ++iter) {
      eval_node(v, r);
      if (r.lpNorm<Eigen::Infinity>() <= cfg.newton_tol) {
        converged = true;
        break;
      }
      jac.setZero();
      for (int s = 0; s < nx; ++s) {
        grad.clear();
        g.gradient(rows[static_cast<std::size_t>(s * nfe + (v - 1))], x, grad, ws);
        for (const auto& [var, val] : grad) {
          if (var < n && var % nfe == v - 1) jac(s, var / nfe) += val;
        }
      }
      dx = jac.fullPivLu().solve(-r);
      if (!dx.allFinite())
        throw SimulationError("steady march produced a non-finite direction at node " +
                              std::to_string(v));

      for (int s = 0; s < nx; ++s) base[s] = x[static_cast<std::size_t>(s * nfe + v - 1)];
      const double r0 = r.norm();
      double alpha = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 40 && !accepted; ++bt) {
        for (int s = 0; s < nx; ++s)
          x[static_cast<std::size_t>(s * nfe + v - 1)] = base[s] + alpha * dx[s];
        try {
          eval_node(v, r_trial);
          accepted = r_trial.allFinite() && r_trial.norm() <= (1.0 - 1e-4 * alpha) * r0;
        } catch (const EvalError&) {
          // outside the domain; shorten
        }
        if (!accepted) alpha *= 0.5;
      }
      if (!accepted)
        throw SimulationError("steady march stalled at node " + std::to_string(v));
    }
    if (!converged) {
      eval_node(v, r);
      converged = r.lpNorm<Eigen::Infinity>() <= cfg.newton_tol;
    }
    if (!converged)
      throw SimulationError("steady march did not converge at node " + std::to_string(v));
  }
  return Eigen::Map<const Eigen::VectorXd>(x.data(), n);
}

}  // namespace nnmpc
