#include "nnmpc/transcription.hpp"

#include <stdexcept>
#include <string>

namespace nnmpc {

void Grid::validate() const {
  if (dt <= 0.0) throw std::invalid_argument("grid: dt must be positive");
  if (n_fe < 2) throw std::invalid_argument("grid: need at least two spatial cells");
  if (length <= 0.0) throw std::invalid_argument("grid: domain length must be positive");
  if (horizon < 1) throw std::invalid_argument("grid: horizon must be at least one step");
  if (moves < 1 || moves > horizon)
    throw std::invalid_argument("grid: moves must lie in [1, horizon]");
}

Grid make_grid(const Plant& plant, int horizon, int moves) {
  Grid g;
  g.dt = plant.dt();
  g.n_fe = plant.n_fe();
  g.length = plant.info().length;
  g.horizon = horizon;
  g.moves = moves < 0 ? horizon : moves;
  g.validate();
  return g;
}

std::vector<int> TranscribedSystem::step_state_vars(int k) const {
  std::vector<int> ids(static_cast<std::size_t>(n_x * n_fe));
  for (int i = 0; i < n_x * n_fe; ++i)
    ids[static_cast<std::size_t>(i)] = var0 + k * n_x * n_fe + i;
  return ids;
}

std::vector<int> TranscribedSystem::step_control_vars(int k) const {
  std::vector<int> ids(static_cast<std::size_t>(n_u));
  for (int l = 0; l < n_u; ++l) ids[static_cast<std::size_t>(l)] = control_var(k, l);
  return ids;
}

TranscribedSystem transcribe(NlpProblem& problem, const Plant& plant, const Grid& grid,
                             std::span<const double> x0_profile, bool dynamics_rows) {
  grid.validate();
  const PlantInfo& info = plant.info();
  const int nx = info.n_x, nu = info.n_u, nfe = grid.n_fe;

  if (static_cast<int>(x0_profile.size()) != nx * nfe)
    throw std::invalid_argument("initial profile has " + std::to_string(x0_profile.size()) +
                                " entries, expected " + std::to_string(nx * nfe));
  for (int s = 0; s < nx; ++s) {
    const Interval& b = info.state_bounds[static_cast<std::size_t>(s)];
    for (int v = 0; v < nfe; ++v) {
      const double val = x0_profile[static_cast<std::size_t>(s * nfe + v)];
      if (val < b.lb || val > b.ub)
        throw std::invalid_argument("initial profile leaves the bounds of state '" +
                                    info.state_names[static_cast<std::size_t>(s)] + "'");
    }
  }

  TranscribedSystem sys;
  sys.n_x = nx;
  sys.n_u = nu;
  sys.n_fe = nfe;
  sys.horizon = grid.horizon;
  sys.moves = grid.moves;
  sys.inlet_bindings = static_cast<int>(info.inlets.size());
  sys.var0 = problem.num_vars();
  sys.row0 = problem.constraints.size();

  // States. Step 0 is the measurement: lb == ub pins it in the solver. Later
  // steps carry the plant bounds and start from the measured profile.
  for (int k = 0; k <= grid.horizon; ++k) {
    for (int s = 0; s < nx; ++s) {
      const Interval& b = info.state_bounds[static_cast<std::size_t>(s)];
      for (int v = 1; v <= nfe; ++v) {
        const double init = x0_profile[static_cast<std::size_t>(s * nfe + v - 1)];
        const std::string name = info.state_names[static_cast<std::size_t>(s)] + "_k" +
                                 std::to_string(k) + "_v" + std::to_string(v);
        if (k == 0)
          problem.add_var(name, init, init, init, VarClass::kState);
        else
          problem.add_var(name, b.lb, b.ub, init, VarClass::kState);
      }
    }
  }

  sys.uvar0 = problem.num_vars();
  for (int k = 0; k < grid.moves; ++k) {
    for (int l = 0; l < nu; ++l) {
      const Interval& b = info.control_bounds[static_cast<std::size_t>(l)];
      problem.add_var(info.control_names[static_cast<std::size_t>(l)] + "_k" + std::to_string(k),
                      b.lb, b.ub, 0.5 * (b.lb + b.ub), VarClass::kControl);
    }
  }

  if (!dynamics_rows) return sys;

  // Dynamics rows, one implicit Euler step at a time, each built by the
  // plant's own residual so transcription and simulation share one model.
  std::vector<ExprId> prev_ids(static_cast<std::size_t>(nx * nfe));
  std::vector<ExprId> next_ids(static_cast<std::size_t>(nx * nfe));
  std::vector<ExprId> u_ids(static_cast<std::size_t>(nu));
  for (int k = 0; k < grid.horizon; ++k) {
    for (int i = 0; i < nx * nfe; ++i) {
      prev_ids[static_cast<std::size_t>(i)] =
          problem.graph.variable(sys.var0 + k * nx * nfe + i);
      next_ids[static_cast<std::size_t>(i)] =
          problem.graph.variable(sys.var0 + (k + 1) * nx * nfe + i);
    }
    for (int l = 0; l < nu; ++l)
      u_ids[static_cast<std::size_t>(l)] = problem.graph.variable(sys.control_var(k, l));

    const auto rows = plant.build_step_residual(problem.graph, prev_ids, next_ids, u_ids,
                                                nfe, grid.dt);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      problem.constraints.add(rows[i], Relation::kEq, 0.0,
                              "dyn_k" + std::to_string(k) + "_r" + std::to_string(i));
    }
  }
  return sys;
}

std::vector<ExprId> spatial_rhs(const Plant& plant, ExprGraph& g,
                                std::span<const ExprId> profile, std::span<const ExprId> u,
                                int n_fe, int v) {
  if (v < 1 || v > n_fe) throw std::invalid_argument("node index out of range");
  const auto all = plant.build_rhs(g, profile, u, n_fe);
  std::vector<ExprId> out(static_cast<std::size_t>(plant.n_x()));
  for (int s = 0; s < plant.n_x(); ++s)
    out[static_cast<std::size_t>(s)] = all[static_cast<std::size_t>(s * n_fe + v - 1)];
  return out;
}

}  // namespace nnmpc
