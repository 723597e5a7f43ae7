#include "nnmpc/plant.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>

#include "nnmpc/reformer.hpp"

namespace nnmpc {

std::vector<ExprId> Plant::build_step_residual(ExprGraph& g, std::span<const ExprId> x_prev,
                                               std::span<const ExprId> x_next,
                                               std::span<const ExprId> u, int n_fe,
                                               double dt) const {
  const auto rhs = build_rhs(g, x_next, u, n_fe);
  std::vector<ExprId> rows(rhs.size());
  for (std::size_t i = 0; i < rhs.size(); ++i) {
    rows[i] = g.affine({x_next[i], x_prev[i], rhs[i]}, {1.0 / dt, -1.0 / dt, -1.0}, 0.0);
  }
  return rows;
}

ExprId Plant::inlet_expr(ExprGraph& g, std::span<const ExprId> u, int state) const {
  for (const auto& spec : info_.inlets) {
    if (spec.state == state) {
      return spec.control >= 0 ? u[static_cast<std::size_t>(spec.control)]
                               : g.constant(spec.value);
    }
  }
  throw std::logic_error("no inlet bound to state '" +
                         info_.state_names[static_cast<std::size_t>(state)] + "'");
}

namespace {

using nlohmann::json;

double param(const PlantInfo& info, const std::string& key) {
  const auto it = info.params.find(key);
  if (it == info.params.end())
    throw std::invalid_argument("plant '" + info.name + "' is missing parameter '" + key + "'");
  return it->second;
}

// Isothermal tubular reactor: convection plus one second-order reaction.
class TubularPlant final : public Plant {
 public:
  explicit TubularPlant(PlantInfo info) : Plant(std::move(info)), k_(param(info_, "k_rxn")) {}

  std::vector<ExprId> build_rhs(ExprGraph& g, std::span<const ExprId> x,
                                std::span<const ExprId> u, int n_fe) const override {
    const double inv_dz = n_fe / info_.length;
    const ExprId flow = u[1];
    std::vector<ExprId> out(static_cast<std::size_t>(n_fe));
    for (int v = 1; v <= n_fe; ++v) {
      const ExprId c = x[static_cast<std::size_t>(v - 1)];
      const ExprId up = v == 1 ? inlet_expr(g, u, 0) : x[static_cast<std::size_t>(v - 2)];
      const ExprId conv = g.mul(flow, g.affine({c, up}, {-inv_dz, inv_dz}, 0.0));
      out[static_cast<std::size_t>(v - 1)] = g.add(conv, g.mul(g.constant(-k_), g.square(c)));
    }
    return out;
  }

 private:
  double k_;
};

// Non-isothermal tubular reactor with an Arrhenius rate and jacket exchange.
class JacketedPlant final : public Plant {
 public:
  explicit JacketedPlant(PlantInfo info)
      : Plant(std::move(info)),
        rho_cp_(param(info_, "rho_cp")),
        ua_(param(info_, "ua")),
        dh_(param(info_, "dh_rxn")),
        k0_(param(info_, "k0")),
        ea_(param(info_, "ea")),
        r_gas_(param(info_, "r_gas")) {}

  std::vector<ExprId> build_rhs(ExprGraph& g, std::span<const ExprId> x,
                                std::span<const ExprId> u, int n_fe) const override {
    const double inv_dz = n_fe / info_.length;
    const std::size_t n = static_cast<std::size_t>(n_fe);
    const ExprId flow = u[1];
    const ExprId t_amb = u[2];
    std::vector<ExprId> out(2 * n);
    for (int v = 1; v <= n_fe; ++v) {
      const std::size_t i = static_cast<std::size_t>(v - 1);
      const ExprId c = x[i];
      const ExprId t = x[n + i];
      const ExprId c_up = v == 1 ? inlet_expr(g, u, 0) : x[i - 1];
      const ExprId t_up = v == 1 ? inlet_expr(g, u, 1) : x[n + i - 1];

      const ExprId arrhenius =
          g.mul(g.constant(k0_), g.exp_(g.mul(g.constant(-ea_ / r_gas_), g.div(g.constant(1.0), t))));
      const ExprId rate = g.mul(arrhenius, g.square(c));

      const ExprId conv_c = g.mul(flow, g.affine({c, c_up}, {-inv_dz, inv_dz}, 0.0));
      out[i] = g.sub(conv_c, rate);

      const ExprId conv_t = g.mul(flow, g.affine({t, t_up}, {-inv_dz, inv_dz}, 0.0));
      const ExprId jacket = g.affine({t_amb, t}, {ua_ / rho_cp_, -ua_ / rho_cp_}, 0.0);
      const ExprId heat = g.mul(g.constant(-dh_ / rho_cp_), rate);
      out[n + i] = g.sum({conv_t, jacket, heat});
    }
    return out;
  }

 private:
  double rho_cp_, ua_, dh_, k0_, ea_, r_gas_;
};

PlantInfo parse_info(const json& j, const std::string& path) {
  PlantInfo info;
  info.name = j.at("name").get<std::string>();
  info.description = j.value("description", "");
  info.n_fe = j.at("n_fe").get<int>();
  info.dt = j.at("dt").get<double>();
  info.length = j.at("length").get<double>();

  for (const auto& s : j.at("states")) {
    info.state_names.push_back(s.at("name").get<std::string>());
    info.state_bounds.push_back({s.at("lb").get<double>(), s.at("ub").get<double>()});
  }
  for (const auto& c : j.at("controls")) {
    info.control_names.push_back(c.at("name").get<std::string>());
    info.control_bounds.push_back({c.at("lb").get<double>(), c.at("ub").get<double>()});
  }
  info.n_x = static_cast<int>(info.state_names.size());
  info.n_u = static_cast<int>(info.control_names.size());

  for (const auto& b : j.at("inlets")) {
    InletSpec spec;
    spec.state = b.at("state").get<int>();
    if (b.contains("control")) {
      spec.control = b.at("control").get<int>();
      if (spec.control < 0 || spec.control >= info.n_u)
        throw std::invalid_argument(path + ": inlet control index out of range");
    } else {
      spec.value = b.at("value").get<double>();
    }
    if (spec.state < 0 || spec.state >= info.n_x)
      throw std::invalid_argument(path + ": inlet state index out of range");
    info.inlets.push_back(spec);
  }

  if (j.contains("params")) {
    for (const auto& [key, val] : j.at("params").items())
      info.params[key] = val.get<double>();
  }

  std::set<std::string> names(info.state_names.begin(), info.state_names.end());
  names.insert(info.control_names.begin(), info.control_names.end());
  if (names.size() != static_cast<std::size_t>(info.n_x + info.n_u))
    throw std::invalid_argument(path + ": state and control names must be unique");
  for (const auto& b : info.state_bounds)
    if (!(b.lb < b.ub)) throw std::invalid_argument(path + ": empty state bound interval");
  for (const auto& b : info.control_bounds)
    if (!(b.lb < b.ub)) throw std::invalid_argument(path + ": empty control bound interval");
  return info;
}

}  // namespace

std::unique_ptr<Plant> make_plant(std::string_view name, const std::string& data_dir,
                                  int n_fe) {
  const std::string path = data_dir + "/plants/" + std::string(name) + ".json";
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("unknown plant '" + std::string(name) + "' (" + path + ")");
  json j;
  in >> j;

  PlantInfo info = parse_info(j, path);
  if (n_fe == 0 || n_fe < -1)
    throw std::invalid_argument(path + ": grid override must be positive");
  if (n_fe > 0) info.n_fe = n_fe;
  const std::string model = j.at("model").get<std::string>();
  if (model == "tubular_second_order") return std::make_unique<TubularPlant>(std::move(info));
  if (model == "tubular_exothermic") return std::make_unique<JacketedPlant>(std::move(info));
  if (model == "reformer") {
    const auto rp =
        load_reformer_params(data_dir + "/" + j.at("reformer_params").get<std::string>());
    return make_reformer_plant(std::move(info), rp);
  }
  throw std::invalid_argument(path + ": unknown model '" + model + "'");
}

}  // namespace nnmpc
