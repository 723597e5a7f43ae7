#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nnmpc/plant.hpp"
#include "nnmpc/simulate.hpp"
#include "nnmpc/transcription.hpp"

using namespace nnmpc;

TEST_CASE("grid validation") {
  const auto b1 = make_plant("b1");
  const Grid g = make_grid(*b1, 40, 10);
  CHECK(g.dt == 0.1);
  CHECK(g.n_fe == 10);
  CHECK(g.length == 1.0);
  CHECK(g.horizon == 40);
  CHECK(g.moves == 10);
  CHECK(g.dz() == doctest::Approx(0.1));

  CHECK(make_grid(*b1, 5).moves == 5);  // default: every step is a free move

  CHECK_THROWS_AS((void)make_grid(*b1, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)make_grid(*b1, 10, 11), std::invalid_argument);
  CHECK_THROWS_AS((void)make_grid(*b1, 10, 0), std::invalid_argument);
  Grid bad = g;
  bad.n_fe = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.dt = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("per-node spatial operator hand values") {
  const auto b1 = make_plant("b1");
  ExprGraph g;
  const int n_fe = 10;
  std::vector<ExprId> profile(n_fe);
  for (int i = 0; i < n_fe; ++i) profile[static_cast<std::size_t>(i)] = g.variable(i);
  std::vector<ExprId> u = {g.variable(n_fe), g.variable(n_fe + 1)};

  const auto node2 = spatial_rhs(*b1, g, profile, u, n_fe, 2);
  REQUIRE(node2.size() == 1);

  // dz = 0.1, C_2 = 0.5, C_1 = 0.6, F = 1, k = 1:
  // -(0.5 - 0.6)/0.1 - 0.5^2 = 1 - 0.25 = 0.75
  // (profile entry i is node v = i+1)
  std::vector<double> x(static_cast<std::size_t>(n_fe + 2), 0.0);
  x[0] = 0.6;
  x[1] = 0.5;
  x[static_cast<std::size_t>(n_fe)] = 1.0;  // C_in (unused at v = 2)
  x[static_cast<std::size_t>(n_fe) + 1] = 1.0;
  EvalWorkspace ws;
  CHECK(g.eval(node2[0], x, ws) == doctest::Approx(0.75).epsilon(1e-14));

  // Flat zero profile with no flow is stationary.
  const auto node1 = spatial_rhs(*b1, g, profile, u, n_fe, 1);
  std::fill(x.begin(), x.end(), 0.0);
  CHECK(g.eval(node1[0], x, ws) == 0.0);
}

TEST_CASE("row and variable counts for the published configurations") {
  struct Config {
    const char* plant;
    int horizon, moves;
    int want_vars, want_rows, want_bindings;
  };
  // decision variables (P+1)*n_x*n_fe + M*n_u; dynamics rows P*n_x*n_fe
  const Config cases[] = {
      {"b1", 40, 10, 430, 400, 1},
      {"b2", 40, 10, 860, 800, 2},
      {"b3", 30, 10, 7780, 7500, 5},
  };
  for (const auto& c : cases) {
    CAPTURE(c.plant);
    const auto plant = make_plant(c.plant);
    const Grid grid = make_grid(*plant, c.horizon, c.moves);
    std::vector<double> u_mid(static_cast<std::size_t>(plant->n_u()));
    for (int j = 0; j < plant->n_u(); ++j) {
      const auto& b = plant->info().control_bounds[static_cast<std::size_t>(j)];
      u_mid[static_cast<std::size_t>(j)] = 0.5 * (b.lb + b.ub);
    }
    const Eigen::VectorXd x0 = steady_state(*plant, u_mid);

    NlpProblem problem;
    const TranscribedSystem sys = transcribe(
        problem, *plant,
        grid, std::span<const double>(x0.data(), static_cast<std::size_t>(x0.size())));
    CHECK(problem.num_vars() == c.want_vars);
    CHECK(problem.constraints.size() == c.want_rows);
    CHECK(sys.inlet_bindings_per_step() == c.want_bindings);
    CHECK(sys.num_dynamics_rows() == c.want_rows);

    const VariableCounts counts = count_variables(problem);
    CHECK(counts.decision == c.want_vars);
    CHECK(counts.aux == 0);
  }

  // Minimal grid: one step on two cells gives exactly two rows.
  const auto b1 = make_plant("b1");
  Grid tiny = make_grid(*b1, 1);
  tiny.n_fe = 2;
  tiny.validate();
  NlpProblem problem;
  const std::vector<double> x0 = {0.5, 0.5};
  const TranscribedSystem sys = transcribe(problem, *b1, tiny, x0);
  CHECK(problem.constraints.size() == 2);
  CHECK(problem.num_vars() == 2 * 2 + 1 * 2);
  CHECK(sys.state_var(1, 0, 2) == 3);
}

TEST_CASE("initial profile handling") {
  const auto b1 = make_plant("b1");
  const Grid grid = make_grid(*b1, 3, 2);

  SUBCASE("first-step states are pinned to the measurement") {
    std::vector<double> x0(10);
    for (int v = 0; v < 10; ++v) x0[static_cast<std::size_t>(v)] = 0.4 + 0.01 * v;
    NlpProblem problem;
    const TranscribedSystem sys = transcribe(problem, *b1, grid, x0);
    for (int v = 1; v <= 10; ++v) {
      const auto& var = problem.vars[static_cast<std::size_t>(sys.state_var(0, 0, v))];
      CHECK(var.lb == x0[static_cast<std::size_t>(v - 1)]);
      CHECK(var.ub == x0[static_cast<std::size_t>(v - 1)]);
    }
    // later steps carry the plant bounds and start from the measurement
    const auto& later = problem.vars[static_cast<std::size_t>(sys.state_var(2, 0, 5))];
    CHECK(later.lb == 0.1);
    CHECK(later.ub == 1.0);
    CHECK(later.x0 == x0[4]);
  }

  SUBCASE("a profile sitting on a closed bound is accepted") {
    const std::vector<double> x0(10, 1.0);
    NlpProblem problem;
    CHECK_NOTHROW((void)transcribe(problem, *b1, grid, x0));
  }

  SUBCASE("out-of-bounds profiles are rejected") {
    std::vector<double> x0(10, 0.5);
    x0[3] = 1.5;
    NlpProblem problem;
    CHECK_THROWS_AS((void)transcribe(problem, *b1, grid, x0), std::invalid_argument);
  }

  SUBCASE("profile of the wrong size is rejected") {
    const std::vector<double> x0(7, 0.5);
    NlpProblem problem;
    CHECK_THROWS_AS((void)transcribe(problem, *b1, grid, x0), std::invalid_argument);
  }
}

TEST_CASE("move blocking shares control variables beyond the move horizon") {
  const auto b2 = make_plant("b2");
  const Grid grid = make_grid(*b2, 8, 3);
  const std::vector<double> u_mid = {1.0, 2.0, 310.0, 308.0};
  const Eigen::VectorXd x0 = steady_state(*b2, u_mid);
  NlpProblem problem;
  const TranscribedSystem sys =
      transcribe(problem, *b2, grid, std::span<const double>(x0.data(), 20));

  for (int l = 0; l < 4; ++l) {
    CHECK(sys.control_var(0, l) != sys.control_var(1, l));
    CHECK(sys.control_var(2, l) == sys.control_var(3, l));
    CHECK(sys.control_var(2, l) == sys.control_var(7, l));
  }
  for (const auto& var : problem.vars)
    if (var.cls == VarClass::kControl) CHECK(var.x0 == doctest::Approx(0.5 * (var.lb + var.ub)));
}

TEST_CASE("steady profile with matching controls satisfies every dynamics row") {
  for (const char* name : {"b1", "b2"}) {
    CAPTURE(name);
    const auto plant = make_plant(name);
    std::vector<double> u(static_cast<std::size_t>(plant->n_u()));
    for (int j = 0; j < plant->n_u(); ++j) {
      const auto& b = plant->info().control_bounds[static_cast<std::size_t>(j)];
      u[static_cast<std::size_t>(j)] = 0.4 * b.lb + 0.6 * b.ub;
    }
    const Eigen::VectorXd prof = steady_state(*plant, u);

    const Grid grid = make_grid(*plant, 5, 5);
    NlpProblem problem;
    const TranscribedSystem sys = transcribe(
        problem, *plant, grid,
        std::span<const double>(prof.data(), static_cast<std::size_t>(prof.size())));

    std::vector<double> x(static_cast<std::size_t>(problem.num_vars()));
    for (int k = 0; k <= grid.horizon; ++k)
      for (int s = 0; s < plant->n_x(); ++s)
        for (int v = 1; v <= grid.n_fe; ++v)
          x[static_cast<std::size_t>(sys.state_var(k, s, v))] =
              prof[s * grid.n_fe + (v - 1)];
    for (int k = 0; k < grid.moves; ++k)
      for (int l = 0; l < plant->n_u(); ++l)
        x[static_cast<std::size_t>(sys.control_var(k, l))] = u[static_cast<std::size_t>(l)];

    Eigen::VectorXd r;
    EvalWorkspace ws;
    problem.constraints.eval_all(x, r, ws);
    CHECK(r.lpNorm<Eigen::Infinity>() <= 1e-8);
  }
}

TEST_CASE("dynamics rows equal the implicit stepper residual pointwise") {
  const auto b1 = make_plant("b1");
  const Grid grid = make_grid(*b1, 3, 3);
  const int n = grid.n_fe;

  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> state(0.2, 0.9);

  std::vector<double> x0(static_cast<std::size_t>(n));
  for (auto& val : x0) val = state(rng);
  NlpProblem problem;
  const TranscribedSystem sys = transcribe(problem, *b1, grid, x0);

  ImplicitStepper stepper(*b1, grid.dt);
  std::vector<double> xk(static_cast<std::size_t>(n)), xk1(static_cast<std::size_t>(n));
  const std::vector<double> u = {0.55, 0.7};

  std::vector<double> z(static_cast<std::size_t>(problem.num_vars()), 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    for (auto& val : xk) val = state(rng);
    for (auto& val : xk1) val = state(rng);
    for (int v = 1; v <= n; ++v) {
      z[static_cast<std::size_t>(sys.state_var(1, 0, v))] = xk[static_cast<std::size_t>(v - 1)];
      z[static_cast<std::size_t>(sys.state_var(2, 0, v))] = xk1[static_cast<std::size_t>(v - 1)];
    }
    z[static_cast<std::size_t>(sys.control_var(1, 0))] = u[0];
    z[static_cast<std::size_t>(sys.control_var(1, 1))] = u[1];

    Eigen::VectorXd all;
    EvalWorkspace ws;
    problem.constraints.eval_all(z, all, ws);
    const Eigen::VectorXd oracle = stepper.residual(xk, xk1, u);
    for (int v = 1; v <= n; ++v) {
      const double row = all[sys.dynamics_row(1, 0, v)];
      CHECK(row == doctest::Approx(oracle[v - 1]).epsilon(1e-12));
    }
  }
}

TEST_CASE("dynamics rows are local: at most four variables each on benchmark 1") {
  const auto b1 = make_plant("b1");
  const Grid grid = make_grid(*b1, 4, 2);
  const std::vector<double> x0(10, 0.5);
  NlpProblem problem;
  const TranscribedSystem sys = transcribe(problem, *b1, grid, x0);

  for (int k = 0; k < grid.horizon; ++k) {
    for (int v = 1; v <= grid.n_fe; ++v) {
      const auto vars =
          problem.graph.support(problem.constraints.expr(sys.dynamics_row(k, 0, v)));
      CHECK(vars.size() <= 4);
    }
  }
}

TEST_CASE("grid refinement moves the steady outlet toward the analytic value") {
  const auto b1 = make_plant("b1");
  const std::vector<double> u = {1.0, 1.0};
  const Eigen::VectorXd coarse = steady_state(*b1, u, 10);
  const Eigen::VectorXd fine = steady_state(*b1, u, 100);
  const double exact = 0.5;  // C_in/(1 + C_in L k/F)
  CHECK(std::abs(fine[99] - exact) < std::abs(coarse[9] - exact));
}
