#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "nnmpc/plant.hpp"
#include "nnmpc/reformer.hpp"
#include "nnmpc/simulate.hpp"

using namespace nnmpc;

namespace {

// Scalar xdot = a*x test plant; the control is the rate "a".
class DecayPlant final : public Plant {
 public:
  DecayPlant() : Plant(make_info()) {}

  std::vector<ExprId> build_rhs(ExprGraph& g, std::span<const ExprId> x,
                                std::span<const ExprId> u, int) const override {
    return {g.mul(u[0], x[0])};
  }

 private:
  static PlantInfo make_info() {
    PlantInfo info;
    info.name = "decay";
    info.n_x = 1;
    info.n_u = 1;
    info.n_fe = 1;
    info.dt = 0.1;
    info.length = 1.0;
    info.state_names = {"x"};
    info.control_names = {"a"};
    info.state_bounds = {{-10.0, 10.0}};
    info.control_bounds = {{-2.0, 2.0}};
    return info;
  }
};

// xdot = x^2; one implicit step of size 1 from x0 = 1 has no real solution.
class SquarePlant final : public Plant {
 public:
  SquarePlant() : Plant(make_info()) {}

  std::vector<ExprId> build_rhs(ExprGraph& g, std::span<const ExprId> x,
                                std::span<const ExprId>, int) const override {
    return {g.square(x[0])};
  }

 private:
  static PlantInfo make_info() {
    PlantInfo info;
    info.name = "square";
    info.n_x = 1;
    info.n_u = 1;
    info.n_fe = 1;
    info.dt = 1.0;
    info.length = 1.0;
    info.state_names = {"x"};
    info.control_names = {"unused"};
    info.state_bounds = {{-10.0, 10.0}};
    info.control_bounds = {{0.0, 1.0}};
    return info;
  }
};

}  // namespace

TEST_CASE("plant descriptors load from the parameter files") {
  const auto b1 = make_plant("b1");
  CHECK(b1->n_x() == 1);
  CHECK(b1->n_u() == 2);
  CHECK(b1->n_fe() == 10);
  CHECK(b1->dt() == 0.1);
  CHECK(b1->info().length == 1.0);
  CHECK(b1->info().state_bounds[0].lb == 0.1);
  CHECK(b1->info().state_bounds[0].ub == 1.0);
  CHECK(b1->info().control_names[0] == "C_in");
  CHECK(b1->info().inlets.size() == 1);

  const auto b2 = make_plant("b2");
  CHECK(b2->n_x() == 2);
  CHECK(b2->n_u() == 4);
  CHECK(b2->info().length == 5000.0);
  CHECK(b2->info().inlets.size() == 2);

  const auto b3 = make_plant("b3");
  CHECK(b3->n_x() == 5);
  CHECK(b3->n_u() == 3);
  CHECK(b3->n_fe() == 50);
  CHECK(b3->dt() == 0.004);
  CHECK(b3->info().inlets.size() == 5);
  CHECK_FALSE(b3->has_explicit_rhs());

  CHECK_THROWS(make_plant("nope"));
}

TEST_CASE("benchmark 1 right-hand side hand values") {
  const auto b1 = make_plant("b1");
  MolSimulator sim(*b1);
  const int n = b1->n_fe();

  // Uniform profile equal to the inlet with zero flow: only the reaction
  // term survives, so dC/dt = -C_in^2 at every node.
  const double cin = 0.7;
  std::vector<double> x(static_cast<std::size_t>(n), cin);
  std::vector<double> u = {cin, 0.0};
  Eigen::VectorXd dx;
  sim.rhs(x, u, dx);
  for (int v = 0; v < n; ++v) CHECK(dx[v] == doctest::Approx(-cin * cin).epsilon(1e-12));

  // Zero profile is stationary regardless of flow.
  std::fill(x.begin(), x.end(), 0.0);
  u = {0.0, 0.8};
  sim.rhs(x, u, dx);
  for (int v = 0; v < n; ++v) CHECK(dx[v] == 0.0);
}

TEST_CASE("benchmark 1 analytic steady profile annihilates the rhs on fine grids") {
  const auto b1 = make_plant("b1");
  auto max_deriv = [&](int n_fe) {
    MolSimulator sim(*b1, n_fe);
    std::vector<double> x(static_cast<std::size_t>(n_fe));
    for (int v = 1; v <= n_fe; ++v) {
      const double z = static_cast<double>(v) / n_fe;
      x[static_cast<std::size_t>(v - 1)] = 1.0 / (1.0 + z);
    }
    const std::vector<double> u = {1.0, 1.0};
    Eigen::VectorXd dx;
    sim.rhs(x, u, dx);
    return dx.cwiseAbs().maxCoeff();
  };
  const double coarse = max_deriv(50);
  const double fine = max_deriv(200);
  CHECK(fine < coarse);
  CHECK(fine < 0.02);
}

TEST_CASE("benchmark 2 right-hand side: arrhenius constant and signs") {
  const auto b2 = make_plant("b2");
  MolSimulator sim(*b2);
  const int n = b2->n_fe();

  // Zero concentration everywhere including the inlet, equilibrated
  // temperatures: nothing moves.
  std::vector<double> x(static_cast<std::size_t>(2 * n), 0.0);
  for (int v = 0; v < n; ++v) x[static_cast<std::size_t>(n + v)] = 305.0;
  std::vector<double> u = {0.0, 1.5, 305.0, 305.0};  // C_in, F, T_a, T_in
  Eigen::VectorXd dx;
  sim.rhs(x, u, dx);
  CHECK(dx.cwiseAbs().maxCoeff() == 0.0);

  // Uniform C at 310 K with no flow isolates -k(T) C^2; recover k(310).
  const double c0 = 0.5, temp = 310.0;
  for (int v = 0; v < n; ++v) {
    x[static_cast<std::size_t>(v)] = c0;
    x[static_cast<std::size_t>(n + v)] = temp;
  }
  u = {c0, 0.0, temp, temp};
  sim.rhs(x, u, dx);
  const double k310 = 4.79e7 * std::exp(-65730.0 / (8.314 * 310.0));
  for (int v = 0; v < n; ++v) {
    CHECK(dx[v] == doctest::Approx(-k310 * c0 * c0).epsilon(1e-12));
    // Exothermic reaction (dH < 0) with T = T_a heats the fluid.
    CHECK(dx[n + v] == doctest::Approx(34.5 * k310 * c0 * c0 / 295.7).epsilon(1e-12));
    CHECK(dx[n + v] > 0.0);
  }
}

TEST_CASE("reformer kinetics invariants") {
  const ReformerParams rp = load_reformer_params(default_data_dir() + "/reformer_params.json");

  SUBCASE("mole fractions always normalize") {
    const double flowsets[][5] = {{3.11, 9.33, 0.3, 0.1, 0.05},
                                  {1.0, 2.0, 3.0, 4.0, 5.0},
                                  {6.0, 18.0, 0.5, 0.2, 0.1}};
    for (const auto& f : flowsets) {
      const auto r = reformer_kinetics(rp, std::span<const double, 5>(f, 5), 848.0);
      const double ysum = r.y[0] + r.y[1] + r.y[2] + r.y[3] + r.y[4];
      CHECK(ysum == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(r.den >= 1.0);
      for (double rr : r.rr) CHECK(std::isfinite(rr));
    }
  }

  SUBCASE("stoichiometry conserves every element") {
    // atoms per species, order CH4, H2O, H2, CO2, CO
    const int atoms[3][5] = {{1, 0, 0, 1, 1},    // C
                             {4, 2, 2, 0, 0},    // H
                             {0, 1, 0, 2, 1}};   // O
    for (int j = 0; j < 3; ++j) {
      for (int e = 0; e < 3; ++e) {
        double bal = 0.0;
        for (int s = 0; s < 5; ++s) bal += rp.nu[j][s] * atoms[e][s];
        CHECK(bal == 0.0);
      }
    }
  }

  SUBCASE("reaction 3 equilibrium is the product of reactions 1 and 2") {
    // nu_3 = nu_1 + nu_2, so K3 = K1*K2 identically in T.
    const double flows[5] = {3.11, 9.33, 0.3, 0.1, 0.05};
    for (double t : {838.0, 848.0, 858.0}) {
      const auto r = reformer_kinetics(rp, std::span<const double, 5>(flows, 5), t);
      CHECK(r.keq[2] == doctest::Approx(r.keq[0] * r.keq[1]).epsilon(1e-10));
    }
  }

  SUBCASE("equilibrium constant is 1 at the reference state when dG vanishes") {
    ReformerParams zeroed = rp;
    zeroed.dg_f = {0, 0, 0, 0, 0};
    const double flows[5] = {3.11, 9.33, 0.3, 0.1, 0.05};
    const auto r = reformer_kinetics(zeroed, std::span<const double, 5>(flows, 5), zeroed.t_ref);
    for (int j = 0; j < 3; ++j) CHECK(r.keq[j] == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("heat capacity polynomial reduces to its constant term") {
    ReformerParams flat = rp;
    for (auto& c : flat.cp) c = {c[0], 0, 0, 0, 0};
    for (int s = 0; s < 5; ++s) {
      CHECK(reformer_cp(flat, s, 700.0) == doctest::Approx(rp.cp[static_cast<std::size_t>(s)][0]));
    }
  }

  SUBCASE("fresh feed drives all three reactions forward") {
    const double flows[5] = {3.11, 9.33, 0.3, 0.1, 0.05};
    const auto r = reformer_kinetics(rp, std::span<const double, 5>(flows, 5), 848.0);
    for (double rr : r.rr) CHECK(rr > 0.0);
  }

  SUBCASE("hydrogen partial pressure floor is enforced") {
    const double flows[5] = {3.11, 9.33, 1e-9, 0.1, 0.05};
    CHECK_THROWS(reformer_kinetics(rp, std::span<const double, 5>(flows, 5), 848.0));
  }
}

TEST_CASE("adaptive integrator: trivial and analytic cases") {
  DecayPlant plant;
  SimulatorConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-12;
  MolSimulator sim(plant, -1, cfg);

  Eigen::VectorXd x0(1);
  x0[0] = 1.0;

  const std::vector<double> frozen = {0.0};
  CHECK(sim.run(x0, frozen, 0.1)[0] == 1.0);

  const std::vector<double> decay = {-1.0};
  CHECK(sim.run(x0, decay, 0.1)[0] == doctest::Approx(std::exp(-0.1)).epsilon(1e-8));

  // Determinism: identical calls produce identical bits.
  const double a = sim.run(x0, decay, 0.1)[0];
  const double b = sim.run(x0, decay, 0.1)[0];
  CHECK(a == b);
}

TEST_CASE("benchmark 1 integrates to the analytic steady outlet on a fine grid") {
  const auto b1 = make_plant("b1");
  const int n_fe = 1000;
  MolSimulator sim(*b1, n_fe);
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(n_fe, 1.0);
  const std::vector<double> u = {1.0, 1.0};  // C_in = 1, F = 1
  const Eigen::VectorXd xT = sim.run(x0, u, 5.0);
  // steady state C(z) = C_in / (1 + C_in z) has outlet 0.5 at z = 1
  CHECK(std::abs(xT[n_fe - 1] - 0.5) < 1e-3);
}

TEST_CASE("implicit stepper: closed form, residual consistency, cross-check") {
  SUBCASE("linear decay has the backward-euler closed form") {
    DecayPlant plant;
    ImplicitStepper stepper(plant, 0.1);
    const std::vector<double> x0 = {1.0};
    const std::vector<double> u = {-1.0};
    const Eigen::VectorXd x1 = stepper.step(x0, u);
    CHECK(x1[0] == doctest::Approx(1.0 / 1.1).epsilon(1e-12));
  }

  SUBCASE("no real solution reports an error") {
    SquarePlant plant;
    ImplicitStepper stepper(plant, 1.0);
    const std::vector<double> x0 = {1.0};
    const std::vector<double> u = {0.0};
    CHECK_THROWS_AS((void)stepper.step(x0, u), SimulationError);
  }

  SUBCASE("result zeroes the one-step physics residual") {
    const auto b1 = make_plant("b1");
    ImplicitStepper stepper(*b1, b1->dt());
    std::vector<double> x0(static_cast<std::size_t>(b1->n_fe()), 0.8);
    const std::vector<double> u = {0.6, 0.5};
    const Eigen::VectorXd x1 = stepper.step(x0, u);
    const Eigen::VectorXd res =
        stepper.residual(x0, std::span<const double>(x1.data(), static_cast<std::size_t>(x1.size())), u);
    CHECK(res.cwiseAbs().maxCoeff() <= 1e-8);
  }

  SUBCASE("one implicit step tracks the adaptive integrator at dt = 0.1") {
    const auto b1 = make_plant("b1");
    const int n = b1->n_fe();
    ImplicitStepper stepper(*b1, 0.1);
    MolSimulator sim(*b1);
    std::vector<double> x0(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) x0[static_cast<std::size_t>(v)] = 0.9 - 0.03 * v;
    const std::vector<double> u = {1.0, 1.0};
    const Eigen::VectorXd xi = stepper.step(x0, u);
    const Eigen::VectorXd xm =
        sim.run(Eigen::Map<const Eigen::VectorXd>(x0.data(), n), u, 0.1);
    for (int v = 0; v < n; ++v)
      CHECK(std::abs(xi[v] - xm[v]) / std::abs(xm[v]) < 0.05);
  }
}

TEST_CASE("steady-state marching") {
  SUBCASE("benchmark 1 discrete steady profile") {
    const auto b1 = make_plant("b1");
    const std::vector<double> u = {1.0, 1.0};
    const Eigen::VectorXd prof = steady_state(*b1, u);
    MolSimulator sim(*b1);
    Eigen::VectorXd dx;
    sim.rhs(std::span<const double>(prof.data(), static_cast<std::size_t>(prof.size())), u, dx);
    CHECK(dx.cwiseAbs().maxCoeff() <= 1e-9);
    // Near the analytic profile at n_fe = 10, tighter on a finer grid.
    for (int v = 1; v <= 10; ++v) {
      const double z = v / 10.0;
      CHECK(std::abs(prof[v - 1] - 1.0 / (1.0 + z)) < 5e-2);
    }
    const Eigen::VectorXd fine = steady_state(*b1, u, 200);
    CHECK(std::abs(fine[199] - 0.5) < 5e-3);
  }

  SUBCASE("transport-only reformer carries the inlet unchanged") {
    const auto b3 = make_plant("b3");
    ReformerParams rp = load_reformer_params(default_data_dir() + "/reformer_params.json");
    rp.k0 = {0.0, 0.0, 0.0};
    const auto frozen = make_reformer_plant(b3->info(), rp);
    const std::vector<double> u = {3.11, 9.33, 848.0};
    const Eigen::VectorXd prof = steady_state(*frozen, u);
    const int n = frozen->n_fe();
    const double inlet[5] = {3.11, 9.33, frozen->info().inlets[2].value,
                             frozen->info().inlets[3].value, frozen->info().inlets[4].value};
    for (int s = 0; s < 5; ++s)
      for (int v = 0; v < n; ++v)
        CHECK(prof[s * n + v] == doctest::Approx(inlet[s]).epsilon(1e-10));
  }

  SUBCASE("nominal reformer feed yields a bounded producing profile") {
    const auto b3 = make_plant("b3");
    const std::vector<double> u = {3.11, 9.33, 848.0};
    const Eigen::VectorXd prof = steady_state(*b3, u);
    const int n = b3->n_fe();
    double inlet_total = 0.0, outlet_total = 0.0;
    for (int s = 0; s < 5; ++s) {
      for (int v = 0; v < n; ++v) {
        CHECK(prof[s * n + v] > 0.0);
        CHECK(prof[s * n + v] < b3->info().state_bounds[static_cast<std::size_t>(s)].ub);
      }
      outlet_total += prof[s * n + n - 1];
    }
    inlet_total = 3.11 + 9.33 + b3->info().inlets[2].value + b3->info().inlets[3].value +
                  b3->info().inlets[4].value;
    // Reforming increases total moles; hydrogen is produced along the bed.
    CHECK(outlet_total > inlet_total);
    CHECK(prof[2 * n + n - 1] > b3->info().inlets[2].value);
  }
}
