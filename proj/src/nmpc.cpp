#include "nnmpc/nmpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace nnmpc {

namespace {

int resolve_node(int node, int n_fe) { return node == kOutletNode ? n_fe : node; }

std::string size_msg(const char* what, std::size_t got, std::size_t want) {
  std::ostringstream out;
  out << what << " has " << got << " entries, expected " << want;
  return out.str();
}

}  // namespace

std::vector<double> SetpointSchedule::at(int step) const {
  std::vector<double> sp = initial;
  for (const auto& [when, targets] : changes) {
    if (when > step) break;
    sp = targets;
  }
  return sp;
}

void SetpointSchedule::validate(std::size_t n_outputs) const {
  if (initial.size() != n_outputs)
    throw std::invalid_argument(size_msg("initial setpoint vector", initial.size(), n_outputs));
  int prev = -1;
  for (const auto& [when, targets] : changes) {
    if (when < 0 || when <= prev)
      throw std::invalid_argument("setpoint changes must use strictly increasing steps");
    if (targets.size() != n_outputs)
      throw std::invalid_argument(size_msg("setpoint change target", targets.size(), n_outputs));
    prev = when;
  }
}

void NmpcConfig::validate(const Plant& plant) const {
  if (horizon < 1) throw std::invalid_argument("prediction horizon must be at least 1");
  if (moves < 1 || moves > horizon)
    throw std::invalid_argument("move horizon must lie between 1 and the prediction horizon");
  if (n_fe == 0 || n_fe < -1)
    throw std::invalid_argument("spatial grid override must be positive");
  const int nfe = n_fe > 0 ? n_fe : plant.n_fe();
  if (outputs.empty())
    throw std::invalid_argument("the controller needs at least one tracked output");
  for (const OutputSelector& o : outputs) {
    if (o.state < 0 || o.state >= plant.n_x())
      throw std::invalid_argument("output '" + o.name + "' selects state " +
                                  std::to_string(o.state) + " of a plant with " +
                                  std::to_string(plant.n_x()));
    const int v = resolve_node(o.node, nfe);
    if (v < 1 || v > nfe)
      throw std::invalid_argument("output '" + o.name + "' selects node " +
                                  std::to_string(o.node) + " on a grid of " +
                                  std::to_string(nfe) + " elements");
  }
  if (output_weights.size() != outputs.size())
    throw std::invalid_argument(size_msg("output weight vector", output_weights.size(),
                                         outputs.size()));
  if (move_weights.size() != static_cast<std::size_t>(plant.n_u()))
    throw std::invalid_argument(size_msg("move weight vector", move_weights.size(),
                                         static_cast<std::size_t>(plant.n_u())));
  for (double w : output_weights)
    if (!std::isfinite(w) || w < 0.0)
      throw std::invalid_argument("output weights must be finite and non-negative");
  for (double w : move_weights)
    if (!std::isfinite(w) || w < 0.0)
      throw std::invalid_argument("move weights must be finite and non-negative");
  if (!(solver.tol > 0.0) || solver.max_iter < 1)
    throw std::invalid_argument("solver settings need a positive tolerance and iteration cap");
}

NmpcController::NmpcController(const Plant& plant, NmpcConfig cfg, const Surrogate* surrogate,
                               std::span<const double> x0_profile,
                               std::span<const double> u_prev,
                               std::span<const double> setpoints)
    : plant_(&plant), cfg_(std::move(cfg)) {
  cfg_.validate(plant);
  grid_ = make_grid(plant, cfg_.horizon, cfg_.moves);
  if (cfg_.n_fe > 0) grid_.n_fe = cfg_.n_fe;
  grid_.validate();

  const std::size_t n = static_cast<std::size_t>(plant.n_x() * grid_.n_fe);
  if (x0_profile.size() != n)
    throw std::invalid_argument(size_msg("initial profile", x0_profile.size(), n));
  if (u_prev.size() != static_cast<std::size_t>(plant.n_u()))
    throw std::invalid_argument(size_msg("previous move", u_prev.size(),
                                         static_cast<std::size_t>(plant.n_u())));
  if (setpoints.size() != cfg_.outputs.size())
    throw std::invalid_argument(size_msg("setpoint vector", setpoints.size(),
                                         cfg_.outputs.size()));

  if (cfg_.variant != EmbeddingKind::kMechanistic) {
    if (surrogate == nullptr || surrogate->params == nullptr)
      throw std::invalid_argument("the " + std::string(to_string(cfg_.variant)) +
                                  " variant embeds a network and none was supplied");
    surrogate->spec.validate();
    if (surrogate->spec.n_x != plant.n_x() || surrogate->spec.n_fe != grid_.n_fe ||
        surrogate->spec.n_u != plant.n_u())
      throw std::invalid_argument("network shape (" + std::to_string(surrogate->spec.n_x) +
                                  " states, " + std::to_string(surrogate->spec.n_fe) +
                                  " nodes, " + std::to_string(surrogate->spec.n_u) +
                                  " controls) does not match the controller grid");
    sur_ = std::make_unique<Surrogate>(*surrogate);
  }

  ts_ = transcribe(nlp_, plant, grid_, x0_profile,
                   cfg_.variant == EmbeddingKind::kMechanistic);

  switch (cfg_.variant) {
    case EmbeddingKind::kMechanistic:
      break;
    case EmbeddingKind::kFullSpace:
    case EmbeddingKind::kReducedSpace: {
      steps_.reserve(static_cast<std::size_t>(grid_.horizon));
      for (int k = 0; k < grid_.horizon; ++k) {
        const std::vector<int> in = ts_.step_state_vars(k);
        const std::vector<int> uk = ts_.step_control_vars(k);
        const std::vector<int> out = ts_.step_state_vars(k + 1);
        const std::string tag = "nn" + std::to_string(k);
        if (cfg_.variant == EmbeddingKind::kReducedSpace) {
          steps_.push_back(embed_rs_dense(sur_->spec, sur_->params, in, uk, out, nlp_, tag));
        } else if (sur_->spec.layout == InputLayout::kFlat) {
          steps_.push_back(embed_fs_dense(sur_->spec, sur_->params, in, uk, out, nlp_, tag));
        } else {
          steps_.push_back(embed_fs_conv(sur_->spec, sur_->params, in, uk, out, nlp_, tag));
        }
      }
      break;
    }
    case EmbeddingKind::kExternal:
      steps_.push_back(attach_efe(nlp_, ts_, sur_->spec, sur_->params));
      break;
  }

  build_objective(setpoints, u_prev);
}

void NmpcController::build_objective(std::span<const double> setpoints,
                                     std::span<const double> u_prev) {
  ExprGraph& g = nlp_.graph;
  for (std::size_t m = 0; m < cfg_.outputs.size(); ++m) {
    const double v = setpoints[m];
    sp_vars_.push_back(
        nlp_.add_var("sp_" + cfg_.outputs[m].name, v, v, v, VarClass::kGeneric));
  }
  for (int l = 0; l < plant_->n_u(); ++l) {
    const double v = u_prev[static_cast<std::size_t>(l)];
    uprev_vars_.push_back(nlp_.add_var("u_prev_" + plant_->info().control_names[static_cast<std::size_t>(l)],
                                       v, v, v, VarClass::kGeneric));
  }

  std::vector<ExprId> terms;
  for (int k = 0; k <= grid_.horizon; ++k) {
    for (std::size_t m = 0; m < cfg_.outputs.size(); ++m) {
      const OutputSelector& o = cfg_.outputs[m];
      const ExprId y = g.variable(ts_.state_var(k, o.state, resolve_node(o.node, grid_.n_fe)));
      const ExprId err = g.sub(g.variable(sp_vars_[m]), y);
      terms.push_back(g.mul(g.constant(cfg_.output_weights[m]), g.square(err)));
    }
  }
  // Moves past the blocking horizon alias the last free vector, so their
  // increments vanish identically and only these terms remain.
  for (int k = 0; k < grid_.moves; ++k) {
    for (int l = 0; l < plant_->n_u(); ++l) {
      const ExprId uk = g.variable(ts_.control_var(k, l));
      const ExprId prev = k == 0 ? g.variable(uprev_vars_[static_cast<std::size_t>(l)])
                                 : g.variable(ts_.control_var(k - 1, l));
      const ExprId du = g.sub(uk, prev);
      terms.push_back(g.mul(g.constant(cfg_.move_weights[static_cast<std::size_t>(l)]),
                            g.square(du)));
    }
  }
  nlp_.objective = g.sum(terms);
}

VariableCounts NmpcController::counts() const {
  VariableCounts c = count_variables(nlp_);
  c.decision = ts_.num_state_vars() + ts_.num_control_vars();
  c.total = c.decision + c.aux;
  return c;
}

void NmpcController::set_state(std::span<const double> x0_profile) {
  const std::size_t n = static_cast<std::size_t>(plant_->n_x() * grid_.n_fe);
  if (x0_profile.size() != n)
    throw std::invalid_argument(size_msg("measured profile", x0_profile.size(), n));
  for (int s = 0; s < plant_->n_x(); ++s)
    for (int v = 1; v <= grid_.n_fe; ++v) {
      const double val = x0_profile[static_cast<std::size_t>(s * grid_.n_fe + v - 1)];
      if (!std::isfinite(val))
        throw std::invalid_argument("measured profile contains a non-finite entry");
      VarInfo& vi = nlp_.vars[static_cast<std::size_t>(ts_.state_var(0, s, v))];
      vi.lb = vi.ub = vi.x0 = val;
    }
}

void NmpcController::set_setpoints(std::span<const double> targets) {
  if (targets.size() != sp_vars_.size())
    throw std::invalid_argument(size_msg("setpoint vector", targets.size(), sp_vars_.size()));
  for (std::size_t m = 0; m < sp_vars_.size(); ++m) {
    VarInfo& vi = nlp_.vars[static_cast<std::size_t>(sp_vars_[m])];
    vi.lb = vi.ub = vi.x0 = targets[m];
  }
}

void NmpcController::set_previous_control(std::span<const double> u_prev) {
  if (u_prev.size() != uprev_vars_.size())
    throw std::invalid_argument(size_msg("previous move", u_prev.size(), uprev_vars_.size()));
  for (std::size_t l = 0; l < uprev_vars_.size(); ++l) {
    VarInfo& vi = nlp_.vars[static_cast<std::size_t>(uprev_vars_[l])];
    vi.lb = vi.ub = vi.x0 = u_prev[l];
  }
}

void NmpcController::rollout_states(std::span<const double> x0_profile,
                                    std::span<const double> u_hold,
                                    std::vector<double>& states) const {
  const int n = plant_->n_x() * grid_.n_fe;
  states.assign(static_cast<std::size_t>((grid_.horizon + 1) * n), 0.0);
  std::copy(x0_profile.begin(), x0_profile.end(), states.begin());

  if (cfg_.variant == EmbeddingKind::kMechanistic) {
    if (!stepper_)
      stepper_ = std::make_unique<ImplicitStepper>(*plant_, grid_.dt, grid_.n_fe);
    for (int k = 0; k < grid_.horizon; ++k) {
      const Eigen::VectorXd next = stepper_->step(
          std::span<const double>(states.data() + k * n, static_cast<std::size_t>(n)), u_hold);
      std::copy(next.data(), next.data() + n, states.begin() + (k + 1) * n);
    }
  } else {
    const Eigen::Map<const Eigen::VectorXd> u(u_hold.data(),
                                              static_cast<Eigen::Index>(u_hold.size()));
    for (int k = 0; k < grid_.horizon; ++k) {
      const Eigen::Map<const Eigen::VectorXd> xk(states.data() + k * n, n);
      const Eigen::VectorXd next = nn_forward(sur_->spec, *sur_->params, xk, u);
      std::copy(next.data(), next.data() + n, states.begin() + (k + 1) * n);
    }
  }
}

void NmpcController::initialize_feasible(std::span<const double> x0_profile,
                                         std::span<const double> u_hold, bool fill_aux) {
  set_state(x0_profile);
  if (u_hold.size() != static_cast<std::size_t>(plant_->n_u()))
    throw std::invalid_argument(size_msg("held control", u_hold.size(),
                                         static_cast<std::size_t>(plant_->n_u())));
  for (int l = 0; l < plant_->n_u(); ++l) {
    const Interval b = plant_->info().control_bounds[static_cast<std::size_t>(l)];
    const double u = u_hold[static_cast<std::size_t>(l)];
    if (!(u >= b.lb && u <= b.ub)) {
      std::ostringstream msg;
      msg << "held control " << plant_->info().control_names[static_cast<std::size_t>(l)]
          << " = " << u << " leaves its bounds [" << b.lb << ", " << b.ub << "]";
      throw std::invalid_argument(msg.str());
    }
  }

  std::vector<double> states;
  rollout_states(x0_profile, u_hold, states);
  const int n = plant_->n_x() * grid_.n_fe;
  for (int k = 1; k <= grid_.horizon; ++k)
    for (int s = 0; s < plant_->n_x(); ++s)
      for (int v = 1; v <= grid_.n_fe; ++v)
        nlp_.vars[static_cast<std::size_t>(ts_.state_var(k, s, v))].x0 =
            states[static_cast<std::size_t>(k * n + s * grid_.n_fe + v - 1)];
  for (int j = 0; j < grid_.moves; ++j)
    for (int l = 0; l < plant_->n_u(); ++l)
      nlp_.vars[static_cast<std::size_t>(ts_.control_var(j, l))].x0 =
          u_hold[static_cast<std::size_t>(l)];

  if (fill_aux && cfg_.variant == EmbeddingKind::kFullSpace) {
    std::vector<double> x(nlp_.vars.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = nlp_.vars[i].x0;
    for (const EmbeddedStep& step : steps_) initialize_aux(step, x);
    for (std::size_t i = 0; i < x.size(); ++i) nlp_.vars[i].x0 = x[i];
  }
}

SolveResult NmpcController::solve(const SolveResult* warm) {
  SolveOptions opts = cfg_.solver;
  // The horizon block carries exact curvature, and the quasi-Newton fallback
  // refuses problems of the reformer's size, so auto means exact here.
  if (opts.hessian == SolveOptions::Hessian::kAuto &&
      cfg_.variant == EmbeddingKind::kExternal)
    opts.hessian = SolveOptions::Hessian::kExact;
  return nnmpc::solve(nlp_, opts, warm);
}

SolveResult NmpcController::shift(const SolveResult& sol) const {
  if (sol.x.size() != nlp_.num_vars())
    throw std::invalid_argument(size_msg("solution", static_cast<std::size_t>(sol.x.size()),
                                         static_cast<std::size_t>(nlp_.num_vars())));
  SolveResult out = sol;
  const int P = grid_.horizon;
  const int M = grid_.moves;
  const bool bounds_ok = sol.z_lower.size() == sol.x.size() &&
                         sol.z_upper.size() == sol.x.size();

  auto shift_var = [&](int dst, int src) {
    out.x[dst] = sol.x[src];
    if (bounds_ok) {
      out.z_lower[dst] = sol.z_lower[src];
      out.z_upper[dst] = sol.z_upper[src];
    }
  };

  for (int k = 0; k < P; ++k)
    for (int s = 0; s < plant_->n_x(); ++s)
      for (int v = 1; v <= grid_.n_fe; ++v)
        shift_var(ts_.state_var(k, s, v), ts_.state_var(k + 1, s, v));
  for (int j = 0; j + 1 < M; ++j)
    for (int l = 0; l < plant_->n_u(); ++l)
      shift_var(ts_.control_var(j, l), ts_.control_var(j + 1, l));

  if (sol.lambda.size() == nlp_.num_rows()) {
    switch (cfg_.variant) {
      case EmbeddingKind::kMechanistic:
        for (int k = 0; k + 1 < P; ++k)
          for (int s = 0; s < plant_->n_x(); ++s)
            for (int v = 1; v <= grid_.n_fe; ++v)
              out.lambda[ts_.dynamics_row(k, s, v)] =
                  sol.lambda[ts_.dynamics_row(k + 1, s, v)];
        break;
      case EmbeddingKind::kFullSpace:
      case EmbeddingKind::kReducedSpace:
        for (std::size_t k = 0; k + 1 < steps_.size(); ++k) {
          const EmbeddedStep& a = steps_[k];
          const EmbeddedStep& b = steps_[k + 1];
          for (std::size_t i = 0; i < a.aux_rows.size(); ++i)
            out.lambda[a.aux_rows[i]] = sol.lambda[b.aux_rows[i]];
          for (std::size_t i = 0; i < a.output_rows.size(); ++i)
            out.lambda[a.output_rows[i]] = sol.lambda[b.output_rows[i]];
        }
        break;
      case EmbeddingKind::kExternal: {
        const int off = static_cast<int>(nlp_.constraints.size());
        const int n = plant_->n_x() * grid_.n_fe;
        for (int k = 0; k + 1 < P; ++k)
          for (int i = 0; i < n; ++i)
            out.lambda[off + k * n + i] = sol.lambda[off + (k + 1) * n + i];
        break;
      }
    }
  }

  // Lifted-layer variables move with their step, then get recomputed from
  // the shifted trajectory so the lifted rows start exact again.
  if (cfg_.variant == EmbeddingKind::kFullSpace) {
    for (std::size_t k = 0; k + 1 < steps_.size(); ++k) {
      const EmbeddedStep& a = steps_[k];
      const EmbeddedStep& b = steps_[k + 1];
      for (std::size_t ll = 0; ll < a.aux_pre.size(); ++ll)
        for (std::size_t i = 0; i < a.aux_pre[ll].size(); ++i) {
          shift_var(a.aux_pre[ll][i], b.aux_pre[ll][i]);
          shift_var(a.aux_act[ll][i], b.aux_act[ll][i]);
        }
    }
    std::vector<double> x(out.x.data(), out.x.data() + out.x.size());
    for (const EmbeddedStep& step : steps_) initialize_aux(step, x);
    for (Eigen::Index i = 0; i < out.x.size(); ++i) out.x[i] = x[static_cast<std::size_t>(i)];
  }
  return out;
}

std::vector<double> NmpcController::first_move(const SolveResult& sol) const {
  std::vector<double> u(static_cast<std::size_t>(plant_->n_u()));
  for (int l = 0; l < plant_->n_u(); ++l)
    u[static_cast<std::size_t>(l)] = sol.x[ts_.control_var(0, l)];
  return u;
}

std::vector<double> NmpcController::measured_outputs(std::span<const double> profile) const {
  const std::size_t n = static_cast<std::size_t>(plant_->n_x() * grid_.n_fe);
  if (profile.size() != n)
    throw std::invalid_argument(size_msg("profile", profile.size(), n));
  std::vector<double> y(cfg_.outputs.size());
  for (std::size_t m = 0; m < cfg_.outputs.size(); ++m) {
    const OutputSelector& o = cfg_.outputs[m];
    y[m] = profile[static_cast<std::size_t>(o.state * grid_.n_fe +
                                            resolve_node(o.node, grid_.n_fe) - 1)];
  }
  return y;
}

ClosedLoopTrace closed_loop(const Plant& plant, const NmpcConfig& cfg,
                            const Surrogate* surrogate, const SetpointSchedule& schedule,
                            const ClosedLoopOptions& opts) {
  if (opts.horizon_steps < 1)
    throw std::invalid_argument("closed loop needs at least one step");
  schedule.validate(cfg.outputs.size());

  NmpcController ctrl(plant, cfg, surrogate, opts.x0, opts.u0, schedule.at(0));
  const int nfe = ctrl.grid().n_fe;
  const int n = plant.n_x() * nfe;

  // Truth plant: the adaptive integrator where the model exposes d/dt,
  // otherwise the same implicit step the transcription discretizes.
  std::unique_ptr<MolSimulator> mol;
  std::unique_ptr<ImplicitStepper> stepper;
  if (plant.has_explicit_rhs())
    mol = std::make_unique<MolSimulator>(plant, nfe, opts.sim);
  else
    stepper = std::make_unique<ImplicitStepper>(plant, plant.dt(), nfe, opts.sim);

  ClosedLoopTrace trace;
  trace.plant = plant.info().name;
  trace.variant = std::string(to_string(cfg.variant));
  trace.model = cfg.variant == EmbeddingKind::kMechanistic ? model_tag(nullptr)
                                                           : model_tag(surrogate);
  trace.counts = ctrl.counts();
  trace.records.reserve(static_cast<std::size_t>(opts.horizon_steps));

  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(opts.x0.data(),
                                                        static_cast<Eigen::Index>(opts.x0.size()));
  std::vector<double> u_prev = opts.u0;
  SolveResult warm;
  bool have_warm = false;

  for (int t = 0; t < opts.horizon_steps; ++t) {
    const std::span<const double> xs(x.data(), static_cast<std::size_t>(n));
    ctrl.set_setpoints(schedule.at(t));
    ctrl.set_previous_control(u_prev);
    if (have_warm)
      ctrl.set_state(xs);
    else
      ctrl.initialize_feasible(xs, u_prev);

    SolveResult res;
    try {
      res = ctrl.solve(have_warm ? &warm : nullptr);
    } catch (const std::exception&) {
      res = SolveResult{};
      res.status = SolveStatus::kLineSearchFailure;
    }

    ClosedLoopRecord rec;
    rec.step = t;
    rec.state.assign(x.data(), x.data() + n);
    rec.setpoints = schedule.at(t);
    rec.outputs = ctrl.measured_outputs(xs);
    rec.status = res.status;
    rec.iterations = res.iterations;
    rec.objective = res.objective;
    rec.wall_clock_seconds = res.wall_clock_seconds;

    if (res.status == SolveStatus::kOptimal) {
      rec.controls = ctrl.first_move(res);
      warm = ctrl.shift(res);
      have_warm = true;
    } else {
      rec.controls = u_prev;
      ++trace.failures;
    }
    trace.records.push_back(rec);

    if (mol)
      x = mol->run(x, rec.controls, plant.dt());
    else
      x = stepper->step(std::span<const double>(x.data(), static_cast<std::size_t>(n)),
                        rec.controls);
    u_prev = rec.controls;
  }
  return trace;
}

std::string model_tag(const Surrogate* surrogate) {
  if (surrogate == nullptr || surrogate->params == nullptr) return "mechanistic";
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const double* p, Eigen::Index count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(count); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const NetworkParams::Layer& layer : surrogate->params->layers) {
    mix(layer.W.data(), layer.W.size());
    mix(layer.b.data(), layer.b.size());
  }
  std::ostringstream out;
  out << "nn-" << std::hex << std::setfill('0') << std::setw(16) << surrogate->spec.digest()
      << '-' << std::setw(16) << h;
  return out.str();
}

DistanceFactors default_distance_factors(const Plant& plant, int n_fe) {
  const int nfe = n_fe > 0 ? n_fe : plant.n_fe();
  DistanceFactors f;
  f.state.reserve(static_cast<std::size_t>(plant.n_x() * nfe));
  for (const Interval& b : plant.info().state_bounds)
    f.state.insert(f.state.end(), static_cast<std::size_t>(nfe), b.ub - b.lb);
  for (const Interval& b : plant.info().control_bounds) f.control.push_back(b.ub - b.lb);
  return f;
}

TrajectoryDistance trajectory_distance(const ClosedLoopTrace& a, const ClosedLoopTrace& b,
                                       const DistanceFactors& factors) {
  if (a.records.size() != b.records.size())
    throw std::invalid_argument(size_msg("trace", b.records.size(), a.records.size()));
  for (double f : factors.state)
    if (!(f > 0.0)) throw std::invalid_argument("state distance factors must be positive");
  for (double f : factors.control)
    if (!(f > 0.0)) throw std::invalid_argument("control distance factors must be positive");

  TrajectoryDistance d;
  d.state.reserve(a.records.size());
  d.control.reserve(a.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    const ClosedLoopRecord& ra = a.records[k];
    const ClosedLoopRecord& rb = b.records[k];
    if (ra.state.size() != factors.state.size() || rb.state.size() != factors.state.size())
      throw std::invalid_argument(size_msg("record profile", ra.state.size(),
                                           factors.state.size()));
    if (ra.controls.size() != factors.control.size() ||
        rb.controls.size() != factors.control.size())
      throw std::invalid_argument(size_msg("record controls", ra.controls.size(),
                                           factors.control.size()));
    double ds = 0.0, dc = 0.0;
    for (std::size_t i = 0; i < factors.state.size(); ++i) {
      const double e = (ra.state[i] - rb.state[i]) / factors.state[i];
      ds += e * e;
    }
    for (std::size_t l = 0; l < factors.control.size(); ++l) {
      const double e = (ra.controls[l] - rb.controls[l]) / factors.control[l];
      dc += e * e;
    }
    d.state.push_back(ds);
    d.control.push_back(dc);
  }
  return d;
}

}  // namespace nnmpc
