#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>

#include "nnmpc/expr.hpp"
#include "nnmpc/plant.hpp"

namespace nnmpc {

// Intrinsic steam-methane-reforming kinetics over a Ni catalyst plus the
// ideal-gas thermochemistry needed for the temperature-dependent equilibrium
// constants. Species order everywhere: CH4, H2O, H2, CO2, CO. Reaction
// order: reforming to CO, water-gas shift, reforming to CO2.
struct ReformerParams {
  double area = 0.0;        // tube cross section, cm^2
  double rho_cat = 0.0;     // catalyst density, g/cm^3
  double p_tot = 0.0;       // operating pressure, atm
  double t_ref = 0.0;       // thermochemistry reference temperature, K
  double r_gas = 0.0;       // J/(mol K)
  double r_conc = 0.0;      // atm cm^3/(mmol K), for the concentration map
  double atm_to_bar = 0.0;  // rate laws quote pressures in bar
  double rate_unit = 0.0;   // kmol/(kg h) -> mmol/(g s)
  double p_h2_floor = 0.0;  // reject evaluations below this P_H2, bar

  std::array<std::array<double, 5>, 3> nu{};  // stoichiometry, nu[rxn][species]
  std::array<double, 3> k0{};                 // rate prefactors, kmol/(kg h) basis
  std::array<double, 3> ea{};                 // activation energies, J/mol
  std::array<double, 5> ads_b{};              // adsorption prefactors
  std::array<double, 5> ads_dh{};             // adsorption enthalpies, J/mol
  std::array<double, 5> dh_f{};               // formation enthalpies, J/mol
  std::array<double, 5> dg_f{};               // formation Gibbs energies, J/mol
  std::array<std::array<double, 5>, 5> cp{};  // heat capacity polynomial per species
};

ReformerParams load_reformer_params(const std::string& path);

// Heat capacity of one species at temperature t, J/(mol K).
double reformer_cp(const ReformerParams& rp, int species, double t);

// Numeric snapshot of the kinetics at one axial node, for diagnostics and
// tests. Throws std::domain_error on nonpositive flows or when the hydrogen
// partial pressure falls below the configured floor.
struct ReformerNodeRates {
  std::array<double, 5> y{};      // mole fractions
  std::array<double, 5> p_bar{};  // partial pressures, bar
  std::array<double, 5> conc{};   // concentrations, mmol/cm^3
  std::array<double, 3> krxn{};   // rate constants at T
  std::array<double, 3> keq{};    // equilibrium constants at T
  std::array<double, 5> kads{};   // adsorption constants at T
  double den = 0.0;               // adsorption denominator
  std::array<double, 3> rr{};     // reaction rates, mmol/(g s)
};
ReformerNodeRates reformer_kinetics(const ReformerParams& rp,
                                    std::span<const double, 5> flows, double t);

// Builds the molar-flow reformer plant; used by make_plant("b3") and by
// tests that want modified kinetics.
std::unique_ptr<Plant> make_reformer_plant(PlantInfo info, ReformerParams rp);

}  // namespace nnmpc
