#include "nnmpc/shooting.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "nnmpc/nn.hpp"
#include "nnmpc/simulate.hpp"

namespace nnmpc {

void ShootingProblem::validate() const {
  if (!model) throw std::invalid_argument("shooting problem carries no model step");
  if (n_x < 1 || n_fe < 1 || n_u < 1)
    throw std::invalid_argument("shooting problem dimensions must be positive");
  if (cfg.horizon < 1 || cfg.moves < 1 || cfg.moves > cfg.horizon)
    throw std::invalid_argument("move horizon must lie between 1 and the prediction horizon");
  if (cfg.outputs.empty() || cfg.output_weights.size() != cfg.outputs.size())
    throw std::invalid_argument("outputs and output weights must pair up");
  for (const OutputSelector& o : cfg.outputs) {
    const int v = o.node == kOutletNode ? n_fe : o.node;
    if (o.state < 0 || o.state >= n_x || v < 1 || v > n_fe)
      throw std::invalid_argument("output '" + o.name + "' leaves the state grid");
  }
  if (cfg.move_weights.size() != static_cast<std::size_t>(n_u))
    throw std::invalid_argument("one move weight per control is required");
  if (control_bounds.size() != static_cast<std::size_t>(n_u))
    throw std::invalid_argument("one bound interval per control is required");
  for (const Interval& b : control_bounds)
    if (!(b.lb < b.ub)) throw std::invalid_argument("control bounds must have positive width");
  if (x0.size() != static_cast<std::size_t>(n_x * n_fe))
    throw std::invalid_argument("initial profile does not match the grid");
  if (u_prev.size() != static_cast<std::size_t>(n_u))
    throw std::invalid_argument("previous move does not match the control count");
  if (setpoints.size() != cfg.outputs.size())
    throw std::invalid_argument("one setpoint per tracked output is required");
}

ShootingProblem make_shooting_problem(const Plant& plant, const Surrogate* surrogate,
                                      const NmpcConfig& cfg, std::span<const double> x0,
                                      std::span<const double> u_prev,
                                      std::span<const double> setpoints) {
  ShootingProblem sp;
  sp.n_x = plant.n_x();
  sp.n_fe = cfg.n_fe > 0 ? cfg.n_fe : plant.n_fe();
  sp.n_u = plant.n_u();
  sp.cfg = cfg;
  sp.control_bounds = plant.info().control_bounds;
  sp.x0.assign(x0.begin(), x0.end());
  sp.u_prev.assign(u_prev.begin(), u_prev.end());
  sp.setpoints.assign(setpoints.begin(), setpoints.end());

  if (surrogate != nullptr) {
    if (surrogate->params == nullptr)
      throw std::invalid_argument("surrogate shooting model has no parameters");
    surrogate->spec.validate();
    if (surrogate->spec.n_x != sp.n_x || surrogate->spec.n_fe != sp.n_fe ||
        surrogate->spec.n_u != sp.n_u)
      throw std::invalid_argument("network shape does not match the shooting grid");
    const NetworkSpec spec = surrogate->spec;
    const std::shared_ptr<const NetworkParams> params = surrogate->params;
    sp.model = [spec, params](std::span<const double> x, std::span<const double> u,
                              std::span<double> x_next) {
      const Eigen::Map<const Eigen::VectorXd> xm(x.data(), static_cast<Eigen::Index>(x.size()));
      const Eigen::Map<const Eigen::VectorXd> um(u.data(), static_cast<Eigen::Index>(u.size()));
      const Eigen::VectorXd next = nn_forward(spec, *params, xm, um);
      std::copy(next.data(), next.data() + next.size(), x_next.begin());
    };
    return sp;
  }

  // Finite differences sit on top of the rollout, so the integration error
  // has to stay well under the difference step.
  SimulatorConfig tight;
  tight.rtol = 1e-8;
  tight.atol = 1e-10;
  const double dt = plant.dt();
  if (plant.has_explicit_rhs()) {
    auto sim = std::make_shared<MolSimulator>(plant, sp.n_fe, tight);
    sp.model = [sim, dt](std::span<const double> x, std::span<const double> u,
                         std::span<double> x_next) {
      const Eigen::Map<const Eigen::VectorXd> xm(x.data(), static_cast<Eigen::Index>(x.size()));
      const Eigen::VectorXd next = sim->run(xm, u, dt);
      std::copy(next.data(), next.data() + next.size(), x_next.begin());
    };
  } else {
    auto stepper = std::make_shared<ImplicitStepper>(plant, dt, sp.n_fe, tight);
    sp.model = [stepper](std::span<const double> x, std::span<const double> u,
                         std::span<double> x_next) {
      const Eigen::VectorXd next = stepper->step(x, u);
      std::copy(next.data(), next.data() + next.size(), x_next.begin());
    };
  }
  return sp;
}

ShootingResult shooting_solve(const ShootingProblem& sp, const SolveOptions& opts) {
  sp.validate();
  const int n = sp.n_x * sp.n_fe;
  const int M = sp.cfg.moves;
  const int P = sp.cfg.horizon;
  const int nu = sp.n_u;

  NlpProblem q;
  for (int j = 0; j < M; ++j)
    for (int l = 0; l < nu; ++l) {
      const Interval b = sp.control_bounds[static_cast<std::size_t>(l)];
      const double g0 = std::clamp(sp.u_prev[static_cast<std::size_t>(l)], b.lb, b.ub);
      q.add_var("u" + std::to_string(j) + "_" + std::to_string(l), b.lb, b.ub, g0,
                VarClass::kControl);
    }

  std::vector<int> yidx(sp.cfg.outputs.size());
  for (std::size_t m = 0; m < sp.cfg.outputs.size(); ++m) {
    const OutputSelector& o = sp.cfg.outputs[m];
    const int v = o.node == kOutletNode ? sp.n_fe : o.node;
    yidx[m] = o.state * sp.n_fe + v - 1;
  }

  auto rollout = [&sp, &yidx, n, M, P, nu](std::span<const double> u) {
    std::vector<double> x(sp.x0), next(static_cast<std::size_t>(n));
    auto tracking = [&](const std::vector<double>& prof) {
      double t = 0.0;
      for (std::size_t m = 0; m < yidx.size(); ++m) {
        const double e = sp.setpoints[m] - prof[static_cast<std::size_t>(yidx[m])];
        t += sp.cfg.output_weights[m] * e * e;
      }
      return t;
    };
    double J = tracking(x);
    for (int k = 0; k < P; ++k) {
      const double* uk = u.data() + static_cast<std::size_t>(std::min(k, M - 1) * nu);
      sp.model(x, std::span<const double>(uk, static_cast<std::size_t>(nu)), next);
      x.swap(next);
      J += tracking(x);
    }
    for (int k = 0; k < M; ++k)
      for (int l = 0; l < nu; ++l) {
        const double prev = k == 0 ? sp.u_prev[static_cast<std::size_t>(l)]
                                   : u[static_cast<std::size_t>((k - 1) * nu + l)];
        const double du = u[static_cast<std::size_t>(k * nu + l)] - prev;
        J += sp.cfg.move_weights[static_cast<std::size_t>(l)] * du * du;
      }
    return J;
  };

  ExternalObjective ext;
  ext.value = rollout;
  ext.gradient = [rollout](std::span<const double> u, Eigen::VectorXd& g) {
    const double f0 = rollout(u);
    std::vector<double> up(u.begin(), u.end());
    g.resize(static_cast<Eigen::Index>(u.size()));
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(up[j]));
      const double saved = up[j];
      up[j] = saved + h;
      g[static_cast<Eigen::Index>(j)] = (rollout(up) - f0) / h;
      up[j] = saved;
    }
  };
  q.external_objective = std::move(ext);

  const SolveResult res = solve(q, opts);
  ShootingResult out;
  out.moves.assign(res.x.data(), res.x.data() + res.x.size());
  out.objective = res.objective;
  out.stats = res;
  return out;
}

}  // namespace nnmpc
