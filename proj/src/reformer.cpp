#include "nnmpc/reformer.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace nnmpc {

namespace {

constexpr int kCh4 = 0, kH2o = 1, kH2 = 2, kCo2 = 3, kCo = 4;

// Temperature-only subexpressions, built once per graph and shared by every
// axial node: Arrhenius rate constants, van't Hoff adsorption constants and
// the equilibrium constants integrated from the reference state.
struct TempPack {
  ExprId inv_t;  // 1/T, reused by the concentration map
  std::array<ExprId, 3> krxn;
  std::array<ExprId, 3> keq;
  std::array<ExprId, 5> kads;
};

// Polynomial coefficient differences for one reaction, Sum_s nu_s * cp_s.
struct ReactionDelta {
  double dh0 = 0.0;
  double dg0 = 0.0;
  std::array<double, 5> dc{};  // delta of the five cp coefficients
};

ReactionDelta reaction_delta(const ReformerParams& rp, int rxn) {
  ReactionDelta d;
  for (int s = 0; s < 5; ++s) {
    const double nu = rp.nu[static_cast<std::size_t>(rxn)][static_cast<std::size_t>(s)];
    d.dh0 += nu * rp.dh_f[static_cast<std::size_t>(s)];
    d.dg0 += nu * rp.dg_f[static_cast<std::size_t>(s)];
    for (int c = 0; c < 5; ++c)
      d.dc[static_cast<std::size_t>(c)] +=
          nu * rp.cp[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
  }
  return d;
}

TempPack build_temperature_pack(ExprGraph& g, const ReformerParams& rp, ExprId t) {
  TempPack tp;
  tp.inv_t = g.div(g.constant(1.0), t);
  const ExprId t2 = g.square(t);
  const ExprId t3 = g.pow_int(t, 3);
  const ExprId t4 = g.pow_int(t, 4);
  const double t0 = rp.t_ref;
  const ExprId log_ratio = g.log_(g.mul(g.constant(1.0 / t0), t));

  for (int j = 0; j < 3; ++j) {
    const auto ja = static_cast<std::size_t>(j);
    tp.krxn[ja] = g.mul(g.constant(rp.k0[ja]),
                        g.exp_(g.mul(g.constant(-rp.ea[ja] / rp.r_gas), tp.inv_t)));

    // ln K(T) = -dG0/(R T0) + (1/R) * Int_{T0}^{T} dH(tau)/tau^2 dtau with
    // dH(tau) expanded through the cp polynomial; the integral is closed form.
    const ReactionDelta d = reaction_delta(rp, j);
    const auto [da, db, dg_, dd, de] = d.dc;
    const double h_const = d.dh0 - da * t0 - db * t0 * t0 / 2 - dg_ * t0 * t0 * t0 / 3 -
                           dd * t0 * t0 * t0 * t0 / 4 - de * t0 * t0 * t0 * t0 * t0 / 5;
    const double c0 = h_const / t0 - db * t0 / 2 - dg_ * t0 * t0 / 6 - dd * t0 * t0 * t0 / 12 -
                      de * t0 * t0 * t0 * t0 / 20;
    const ExprId integral = g.affine({tp.inv_t, log_ratio, t, t2, t3, t4},
                                     {-h_const, da, db / 2, dg_ / 6, dd / 12, de / 20}, c0);
    const ExprId log_k =
        g.affine({integral}, {1.0 / rp.r_gas}, -d.dg0 / (rp.r_gas * rp.t_ref));
    tp.keq[ja] = g.exp_(log_k);
  }

  for (int s = 0; s < 5; ++s) {
    const auto sa = static_cast<std::size_t>(s);
    tp.kads[sa] = rp.ads_b[sa] == 0.0
                      ? g.constant(0.0)
                      : g.mul(g.constant(rp.ads_b[sa]),
                              g.exp_(g.mul(g.constant(-rp.ads_dh[sa] / rp.r_gas), tp.inv_t)));
  }
  return tp;
}

struct NodeKinetics {
  std::array<ExprId, 5> y;
  std::array<ExprId, 5> p_bar;
  ExprId den;
  std::array<ExprId, 3> rr;  // mmol/(g s)
};

std::array<ExprId, 5> build_mole_fractions(ExprGraph& g, std::span<const ExprId, 5> flows) {
  const ExprId total = g.sum(std::span<const ExprId>(flows.data(), 5));
  std::array<ExprId, 5> y;
  for (int s = 0; s < 5; ++s) y[static_cast<std::size_t>(s)] = g.div(flows[static_cast<std::size_t>(s)], total);
  return y;
}

// Concentration of each species, mmol/cm^3, from flows and temperature.
std::array<ExprId, 5> build_concentrations(ExprGraph& g, const ReformerParams& rp,
                                           std::span<const ExprId, 5> flows, ExprId inv_t) {
  const auto y = build_mole_fractions(g, flows);
  std::array<ExprId, 5> conc;
  for (int s = 0; s < 5; ++s) {
    const auto sa = static_cast<std::size_t>(s);
    conc[sa] = g.mul(g.mul(g.constant(rp.p_tot / rp.r_conc), y[sa]), inv_t);
  }
  return conc;
}

NodeKinetics build_node_kinetics(ExprGraph& g, const ReformerParams& rp, const TempPack& tp,
                                 std::span<const ExprId, 5> flows) {
  NodeKinetics nk;
  nk.y = build_mole_fractions(g, flows);
  for (int s = 0; s < 5; ++s) {
    const auto sa = static_cast<std::size_t>(s);
    nk.p_bar[sa] = g.mul(g.constant(rp.p_tot * rp.atm_to_bar), nk.y[sa]);
  }

  const auto& p = nk.p_bar;
  nk.den = g.sum({g.constant(1.0), g.mul(tp.kads[kCo], p[kCo]), g.mul(tp.kads[kH2], p[kH2]),
                  g.mul(tp.kads[kCh4], p[kCh4]), g.mul(tp.kads[kH2o], g.div(p[kH2o], p[kH2]))});
  const ExprId den2 = g.square(nk.den);

  const ExprId drive1 = g.sub(g.mul(p[kCh4], p[kH2o]),
                              g.div(g.mul(g.pow_int(p[kH2], 3), p[kCo]), tp.keq[0]));
  const ExprId drive2 =
      g.sub(g.mul(p[kCo], p[kH2o]), g.div(g.mul(p[kH2], p[kCo2]), tp.keq[1]));
  const ExprId drive3 = g.sub(g.mul(p[kCh4], g.square(p[kH2o])),
                              g.div(g.mul(g.pow_int(p[kH2], 4), p[kCo2]), tp.keq[2]));

  const ExprId scale = g.constant(rp.rate_unit);
  nk.rr[0] = g.mul(scale, g.div(g.mul(tp.krxn[0], drive1),
                                g.mul(g.pow_real(p[kH2], 2.5), den2)));
  nk.rr[1] = g.mul(scale, g.div(g.mul(tp.krxn[1], drive2), g.mul(p[kH2], den2)));
  nk.rr[2] = g.mul(scale, g.div(g.mul(tp.krxn[2], drive3),
                                g.mul(g.pow_real(p[kH2], 3.5), den2)));
  return nk;
}

// Reformer in molar flows: the accumulation term converts flows to
// concentrations through the ideal-gas map at the shared bed temperature, so
// the implicit step couples consecutive profiles nonlinearly and there is no
// explicit dx/dt form.
class ReformerPlant final : public Plant {
 public:
  ReformerPlant(PlantInfo info, ReformerParams rp) : Plant(std::move(info)), rp_(rp) {}

  bool has_explicit_rhs() const override { return false; }

  std::vector<ExprId> build_rhs(ExprGraph&, std::span<const ExprId>, std::span<const ExprId>,
                                int) const override {
    throw std::logic_error("reformer model has no explicit time derivative; "
                           "use the one-step residual");
  }

  std::vector<ExprId> build_step_residual(ExprGraph& g, std::span<const ExprId> x_prev,
                                          std::span<const ExprId> x_next,
                                          std::span<const ExprId> u, int n_fe,
                                          double dt) const override {
    const auto n = static_cast<std::size_t>(n_fe);
    const double inv_adz = n_fe / (rp_.area * info_.length);
    const ExprId t = u[2];
    const TempPack tp = build_temperature_pack(g, rp_, t);

    std::vector<ExprId> rows(5 * n);
    std::array<ExprId, 5> f_prev, f_next;
    for (int v = 1; v <= n_fe; ++v) {
      const auto i = static_cast<std::size_t>(v - 1);
      for (std::size_t s = 0; s < 5; ++s) {
        f_prev[s] = x_prev[s * n + i];
        f_next[s] = x_next[s * n + i];
      }
      const auto conc_prev = build_concentrations(g, rp_, f_prev, tp.inv_t);
      const auto conc_next = build_concentrations(g, rp_, f_next, tp.inv_t);
      const NodeKinetics nk = build_node_kinetics(g, rp_, tp, f_next);

      for (int s = 0; s < 5; ++s) {
        const auto sa = static_cast<std::size_t>(s);
        const ExprId up =
            v == 1 ? inlet_expr(g, u, s) : x_next[sa * n + i - 1];
        const ExprId accum =
            g.affine({conc_next[sa], conc_prev[sa]}, {1.0 / dt, -1.0 / dt}, 0.0);
        const ExprId transport = g.affine({f_next[sa], up}, {inv_adz, -inv_adz}, 0.0);
        const ExprId production =
            g.affine({nk.rr[0], nk.rr[1], nk.rr[2]},
                     {-rp_.rho_cat * rp_.nu[0][sa], -rp_.rho_cat * rp_.nu[1][sa],
                      -rp_.rho_cat * rp_.nu[2][sa]},
                     0.0);
        rows[sa * n + i] = g.sum({accum, transport, production});
      }
    }
    return rows;
  }

 private:
  ReformerParams rp_;
};

}  // namespace

ReformerParams load_reformer_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open reformer parameter file " + path);
  nlohmann::json j;
  in >> j;

  ReformerParams rp;
  rp.area = j.at("area_cm2").get<double>();
  rp.rho_cat = j.at("rho_cat_g_cm3").get<double>();
  rp.p_tot = j.at("p_tot_atm").get<double>();
  rp.t_ref = j.at("t_ref_k").get<double>();
  rp.r_gas = j.at("r_gas_j_mol_k").get<double>();
  rp.r_conc = j.at("r_conc_atm_cm3_mmol_k").get<double>();
  rp.atm_to_bar = j.at("atm_to_bar").get<double>();
  rp.rate_unit = j.at("rate_unit_factor").get<double>();
  rp.p_h2_floor = j.at("p_h2_floor_bar").get<double>();
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 5; ++s)
      rp.nu[static_cast<std::size_t>(r)][static_cast<std::size_t>(s)] =
          j.at("nu")[static_cast<std::size_t>(r)][static_cast<std::size_t>(s)].get<double>();
  for (int r = 0; r < 3; ++r) {
    rp.k0[static_cast<std::size_t>(r)] = j.at("k0")[static_cast<std::size_t>(r)].get<double>();
    rp.ea[static_cast<std::size_t>(r)] =
        j.at("ea_j_mol")[static_cast<std::size_t>(r)].get<double>();
  }
  for (int s = 0; s < 5; ++s) {
    const auto sa = static_cast<std::size_t>(s);
    rp.ads_b[sa] = j.at("ads_b")[sa].get<double>();
    rp.ads_dh[sa] = j.at("ads_dh_j_mol")[sa].get<double>();
    rp.dh_f[sa] = j.at("dh_f_j_mol")[sa].get<double>();
    rp.dg_f[sa] = j.at("dg_f_j_mol")[sa].get<double>();
    for (int c = 0; c < 5; ++c)
      rp.cp[sa][static_cast<std::size_t>(c)] =
          j.at("cp_j_mol_k")[sa][static_cast<std::size_t>(c)].get<double>();
  }
  return rp;
}

double reformer_cp(const ReformerParams& rp, int species, double t) {
  const auto& c = rp.cp[static_cast<std::size_t>(species)];
  return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * c[4])));
}

ReformerNodeRates reformer_kinetics(const ReformerParams& rp, std::span<const double, 5> flows,
                                    double t) {
  double total = 0.0;
  for (double f : flows) {
    if (!(f > 0.0)) throw std::domain_error("reformer kinetics need strictly positive flows");
    total += f;
  }
  if ((flows[kH2] / total) * rp.p_tot * rp.atm_to_bar < rp.p_h2_floor)
    throw std::domain_error("hydrogen partial pressure below the kinetic floor");

  ExprGraph g;
  std::array<ExprId, 5> fvars;
  for (int s = 0; s < 5; ++s) fvars[static_cast<std::size_t>(s)] = g.variable(s);
  const ExprId tvar = g.variable(5);

  const TempPack tp = build_temperature_pack(g, rp, tvar);
  const NodeKinetics nk = build_node_kinetics(g, rp, tp, fvars);
  const auto conc = build_concentrations(g, rp, fvars, tp.inv_t);

  std::array<double, 6> x{};
  for (int s = 0; s < 5; ++s) x[static_cast<std::size_t>(s)] = flows[static_cast<std::size_t>(s)];
  x[5] = t;

  EvalWorkspace ws;
  ReformerNodeRates out;
  for (int s = 0; s < 5; ++s) {
    const auto sa = static_cast<std::size_t>(s);
    out.y[sa] = g.eval(nk.y[sa], x, ws);
    out.p_bar[sa] = g.eval(nk.p_bar[sa], x, ws);
    out.conc[sa] = g.eval(conc[sa], x, ws);
    out.kads[sa] = g.eval(tp.kads[sa], x, ws);
  }
  for (int r = 0; r < 3; ++r) {
    const auto ra = static_cast<std::size_t>(r);
    out.krxn[ra] = g.eval(tp.krxn[ra], x, ws);
    out.keq[ra] = g.eval(tp.keq[ra], x, ws);
    out.rr[ra] = g.eval(nk.rr[ra], x, ws);
  }
  out.den = g.eval(nk.den, x, ws);
  return out;
}

std::unique_ptr<Plant> make_reformer_plant(PlantInfo info, ReformerParams rp) {
  return std::make_unique<ReformerPlant>(std::move(info), rp);
}

}  // namespace nnmpc
