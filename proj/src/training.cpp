#include "nnmpc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "nnmpc/simulate.hpp"

namespace nnmpc {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 14695981039346656037ULL ^ seed;
  for (char c : stream) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  return h;
}

IoScaling io_scaling_for(const Plant& plant) {
  const PlantInfo& info = plant.info();
  Eigen::VectorXd xl(info.n_x), xu(info.n_x), ul(info.n_u), uu(info.n_u);
  for (int s = 0; s < info.n_x; ++s) {
    xl[s] = info.state_bounds[static_cast<std::size_t>(s)].lb;
    xu[s] = info.state_bounds[static_cast<std::size_t>(s)].ub;
  }
  for (int l = 0; l < info.n_u; ++l) {
    ul[l] = info.control_bounds[static_cast<std::size_t>(l)].lb;
    uu[l] = info.control_bounds[static_cast<std::size_t>(l)].ub;
  }
  return IoScaling::from_bounds(xl, xu, ul, uu);
}

namespace {

double draw_uniform(std::mt19937_64& rng, double lb, double ub) {
  if (lb == ub) return lb;
  return std::uniform_real_distribution<double>(lb, ub)(rng);
}

}  // namespace

SampleSet sample_inputs(const Plant& plant, int n_s, std::uint64_t seed,
                        const ProfileBand* band) {
  if (n_s <= 0) throw std::invalid_argument("need at least one sample");
  const PlantInfo& info = plant.info();
  const int nfe = plant.n_fe();
  for (const auto& b : info.state_bounds)
    if (!std::isfinite(b.lb) || !std::isfinite(b.ub))
      throw std::invalid_argument("cannot sample an unbounded state");
  for (const auto& b : info.control_bounds)
    if (!std::isfinite(b.lb) || !std::isfinite(b.ub))
      throw std::invalid_argument("cannot sample an unbounded control");
  if (band && (band->lo.rows() != info.n_x || band->lo.cols() != nfe ||
               band->hi.rows() != info.n_x || band->hi.cols() != nfe))
    throw std::invalid_argument("profile band shape does not match the plant");

  SampleSet out;
  out.seed = seed;
  out.states.resize(info.n_x * nfe, n_s);
  out.controls.resize(info.n_u, n_s);
  std::mt19937_64 rng(seed);

  for (int j = 0; j < n_s; ++j) {
    for (int s = 0; s < info.n_x; ++s) {
      if (band) {
        const double xi = draw_uniform(rng, 0.0, 1.0);
        for (int v = 0; v < nfe; ++v)
          out.states(s * nfe + v, j) =
              band->lo(s, v) + xi * (band->hi(s, v) - band->lo(s, v));
      } else {
        const Interval& b = info.state_bounds[static_cast<std::size_t>(s)];
        for (int v = 0; v < nfe; ++v) out.states(s * nfe + v, j) = draw_uniform(rng, b.lb, b.ub);
      }
    }
    for (int l = 0; l < info.n_u; ++l) {
      const Interval& b = info.control_bounds[static_cast<std::size_t>(l)];
      out.controls(l, j) = draw_uniform(rng, b.lb, b.ub);
    }
  }
  return out;
}

SampleSet sample_steady_mix(const Plant& plant, int n_s, std::uint64_t seed) {
  if (n_s <= 0) throw std::invalid_argument("need at least one sample");
  const PlantInfo& info = plant.info();
  const int nfe = plant.n_fe();
  const int n = info.n_x * nfe;
  for (const auto& b : info.control_bounds)
    if (!std::isfinite(b.lb) || !std::isfinite(b.ub))
      throw std::invalid_argument("cannot sample an unbounded control");

  SampleSet out;
  out.seed = seed;
  out.states.resize(n, n_s);
  out.controls.resize(info.n_u, n_s);
  std::mt19937_64 rng(seed);

  std::vector<double> ua(static_cast<std::size_t>(info.n_u));
  std::vector<double> ub(static_cast<std::size_t>(info.n_u));
  for (int j = 0; j < n_s; ++j) {
    for (int l = 0; l < info.n_u; ++l) {
      const Interval& b = info.control_bounds[static_cast<std::size_t>(l)];
      ua[static_cast<std::size_t>(l)] = draw_uniform(rng, b.lb, b.ub);
      ub[static_cast<std::size_t>(l)] = draw_uniform(rng, b.lb, b.ub);
    }
    const Eigen::VectorXd xa = steady_state(plant, ua);
    const Eigen::VectorXd xb = steady_state(plant, ub);
    const double w = draw_uniform(rng, 0.0, 1.0);
    for (int s = 0; s < info.n_x; ++s) {
      const Interval& b = info.state_bounds[static_cast<std::size_t>(s)];
      const double jit = 0.02 * (b.ub - b.lb);
      for (int v = 0; v < nfe; ++v) {
        const int i = s * nfe + v;
        const double mixed = w * xa[i] + (1.0 - w) * xb[i] + draw_uniform(rng, -jit, jit);
        out.states(i, j) = std::clamp(mixed, b.lb, b.ub);
      }
    }
    for (int l = 0; l < info.n_u; ++l) {
      const Interval& b = info.control_bounds[static_cast<std::size_t>(l)];
      out.controls(l, j) = draw_uniform(rng, b.lb, b.ub);
    }
  }
  return out;
}

ProfileBand compute_steady_band(const Plant& plant) {
  const PlantInfo& info = plant.info();
  const int nfe = plant.n_fe();
  ProfileBand band;
  band.lo = Eigen::MatrixXd::Constant(info.n_x, nfe, std::numeric_limits<double>::infinity());
  band.hi = Eigen::MatrixXd::Constant(info.n_x, nfe, -std::numeric_limits<double>::infinity());

  std::vector<double> u(static_cast<std::size_t>(info.n_u));
  for (unsigned corner = 0; corner < (1u << info.n_u); ++corner) {
    for (int l = 0; l < info.n_u; ++l) {
      const Interval& b = info.control_bounds[static_cast<std::size_t>(l)];
      u[static_cast<std::size_t>(l)] = (corner >> l) & 1u ? b.ub : b.lb;
    }
    const Eigen::VectorXd prof = steady_state(plant, u);
    for (int s = 0; s < info.n_x; ++s) {
      for (int v = 0; v < nfe; ++v) {
        band.lo(s, v) = std::min(band.lo(s, v), prof[s * nfe + v]);
        band.hi(s, v) = std::max(band.hi(s, v), prof[s * nfe + v]);
      }
    }
  }
  return band;
}

void write_profile_band(const ProfileBand& band, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write profile band to " + path);
  out << "state,node,lo,hi\n";
  out.precision(17);
  for (Eigen::Index s = 0; s < band.lo.rows(); ++s)
    for (Eigen::Index v = 0; v < band.lo.cols(); ++v)
      out << s << ',' << v << ',' << band.lo(s, v) << ',' << band.hi(s, v) << '\n';
}

ProfileBand load_profile_band(const std::string& path, int n_x, int n_fe) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open profile band file " + path);
  ProfileBand band;
  band.lo.resize(n_x, n_fe);
  band.hi.resize(n_x, n_fe);
  Eigen::MatrixXd seen = Eigen::MatrixXd::Zero(n_x, n_fe);

  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int s = 0, v = 0;
    double lo = 0.0, hi = 0.0;
    char comma = 0;
    if (!(ss >> s >> comma >> v >> comma >> lo >> comma >> hi))
      throw std::runtime_error("malformed band row in " + path + ": " + line);
    if (s < 0 || s >= n_x || v < 0 || v >= n_fe)
      throw std::runtime_error("band row out of range in " + path + ": " + line);
    band.lo(s, v) = lo;
    band.hi(s, v) = hi;
    seen(s, v) = 1.0;
  }
  if (seen.minCoeff() != 1.0) throw std::runtime_error("incomplete profile band in " + path);
  return band;
}

PhysicsResidual::PhysicsResidual(const Plant& plant, double dt, int n_fe)
    : rows_(&graph_) {
  if (dt <= 0.0) throw std::invalid_argument("residual step size must be positive");
  const int nfe = n_fe < 0 ? plant.n_fe() : n_fe;
  n_ = plant.n_x() * nfe;
  nu_ = plant.n_u();

  std::vector<ExprId> next_ids(static_cast<std::size_t>(n_)), prev_ids(static_cast<std::size_t>(n_));
  std::vector<ExprId> u_ids(static_cast<std::size_t>(nu_));
  for (int i = 0; i < n_; ++i) {
    next_ids[static_cast<std::size_t>(i)] = graph_.variable(i);
    prev_ids[static_cast<std::size_t>(i)] = graph_.variable(n_ + i);
  }
  for (int j = 0; j < nu_; ++j) u_ids[static_cast<std::size_t>(j)] = graph_.variable(2 * n_ + j);
  for (ExprId id : plant.build_step_residual(graph_, prev_ids, next_ids, u_ids, nfe, dt))
    rows_.add(id, Relation::kEq, 0.0);
  input_.resize(static_cast<std::size_t>(2 * n_ + nu_));

  const JacPattern& pattern = rows_.jacobian_pattern();
  jvals_.resize(pattern.rows.size());
  for (std::size_t idx = 0; idx < pattern.rows.size(); ++idx) {
    if (pattern.cols[idx] < n_) {
      jac_idx_.push_back(idx);
      jac_row_.push_back(pattern.rows[idx]);
      jac_col_.push_back(pattern.cols[idx]);
    }
  }
}

void PhysicsResidual::load_inputs(std::span<const double> x_prev, std::span<const double> x_next,
                                  std::span<const double> u) const {
  if (static_cast<int>(x_prev.size()) != n_ || static_cast<int>(x_next.size()) != n_ ||
      static_cast<int>(u.size()) != nu_)
    throw std::invalid_argument("residual input sizes do not match the plant");
  std::copy(x_next.begin(), x_next.end(), input_.begin());
  std::copy(x_prev.begin(), x_prev.end(), input_.begin() + n_);
  std::copy(u.begin(), u.end(), input_.begin() + 2 * n_);
}

void PhysicsResidual::eval(std::span<const double> x_prev, std::span<const double> x_next,
                           std::span<const double> u, Eigen::VectorXd& r) const {
  load_inputs(x_prev, x_next, u);
  rows_.eval_all(input_, r, ws_);
}

void PhysicsResidual::eval_with_adjoint(std::span<const double> x_prev,
                                        std::span<const double> x_next,
                                        std::span<const double> u, Eigen::VectorXd& r,
                                        Eigen::VectorXd& adj) const {
  load_inputs(x_prev, x_next, u);
  rows_.eval_all(input_, r, ws_);
  rows_.jacobian_values(input_, jvals_, ws_);
  adj.setZero(n_);
  for (std::size_t i = 0; i < jac_idx_.size(); ++i)
    adj[jac_col_[i]] += 2.0 * jvals_[jac_idx_[i]] * r[jac_row_[i]];
}

Eigen::VectorXd physics_residual(const Plant& plant, std::span<const double> x_prev,
                                 std::span<const double> x_next, std::span<const double> u,
                                 double dt) {
  const PhysicsResidual res(plant, dt);
  Eigen::VectorXd r;
  res.eval(x_prev, x_next, u, r);
  return r;
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(cfg.decay, epoch / cfg.decay_every);
}

void LossReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss report to " + path);
  out << "epoch,train_loss,test_loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < train_loss.size(); ++e)
    out << e << ',' << train_loss[e] << ',' << test_loss[e] << '\n';
}

double surrogate_loss(const NetworkSpec& spec, const NetworkParams& params,
                      const PhysicsResidual& residual, const SampleSet& data, int batch_size) {
  const int n_s = static_cast<int>(data.states.cols());
  const int n = static_cast<int>(data.states.rows());
  const int bs = batch_size <= 0 ? n_s : batch_size;
  double total = 0.0;
  Eigen::VectorXd r;
  for (int start = 0; start < n_s; start += bs) {
    const int m = std::min(bs, n_s - start);
    const Eigen::MatrixXd y = nn_forward_batch(spec, params, data.states.middleCols(start, m),
                                               data.controls.middleCols(start, m));
    for (int j = 0; j < m; ++j) {
      residual.eval(
          std::span<const double>(data.states.col(start + j).data(), static_cast<std::size_t>(n)),
          std::span<const double>(y.col(j).data(), static_cast<std::size_t>(n)),
          std::span<const double>(data.controls.col(start + j).data(),
                                  static_cast<std::size_t>(data.controls.rows())),
          r);
      total += r.squaredNorm();
    }
  }
  return total;
}

namespace {

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long t = 0;

  explicit AdamState(const NetworkParams& params) {
    for (const auto& layer : params.layers) {
      mw.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
      vw.push_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
      mb.push_back(Eigen::VectorXd::Zero(layer.b.size()));
      vb.push_back(Eigen::VectorXd::Zero(layer.b.size()));
    }
  }

  void step(NetworkParams& params, const NetworkParams& grad, double lr) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      auto& p = params.layers[l];
      if (p.W.size() == 0) continue;
      const auto& g = grad.layers[l];
      mw[l] = kBeta1 * mw[l] + (1.0 - kBeta1) * g.W;
      vw[l] = kBeta2 * vw[l] + (1.0 - kBeta2) * g.W.cwiseProduct(g.W);
      p.W -= lr * (mw[l] / c1).cwiseQuotient(((vw[l] / c2).cwiseSqrt().array() + kEps).matrix());
      mb[l] = kBeta1 * mb[l] + (1.0 - kBeta1) * g.b;
      vb[l] = kBeta2 * vb[l] + (1.0 - kBeta2) * g.b.cwiseProduct(g.b);
      p.b -= lr * (mb[l] / c1).cwiseQuotient(((vb[l] / c2).cwiseSqrt().array() + kEps).matrix());
    }
  }
};

[[noreturn]] void abort_training(int epoch, const std::string& why) {
  throw NnError("training aborted at epoch " + std::to_string(epoch) + ": " + why);
}

}  // namespace

TrainResult train(const NetworkSpec& spec, const Plant& plant, const TrainConfig& cfg,
                  const ProfileBand* band) {
  spec.validate();
  if (spec.n_x != plant.n_x() || spec.n_fe != plant.n_fe() || spec.n_u != plant.n_u())
    throw std::invalid_argument("network dimensions do not match the plant");
  if (cfg.decay <= 0.0 || cfg.decay > 1.0)
    throw std::invalid_argument("decay factor must lie in (0, 1]");
  if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0)
    throw std::invalid_argument("test fraction must lie in (0, 1)");
  if (cfg.n_samples < 2 || cfg.batch_size < 1 || cfg.epochs < 0 || cfg.lr0 <= 0.0 ||
      cfg.decay_every < 1)
    throw std::invalid_argument("malformed training configuration");

  const int n_test = std::max(1, static_cast<int>(std::lround(cfg.test_fraction * cfg.n_samples)));
  const int n_train = cfg.n_samples - n_test;
  if (n_train < 1) throw std::invalid_argument("test fraction leaves no training samples");

  const bool steady_mix = band == nullptr && cfg.sampling == SamplingMode::kSteadyMix;
  const SampleSet train_set =
      steady_mix ? sample_steady_mix(plant, n_train, derive_seed(cfg.seed, "train"))
                 : sample_inputs(plant, n_train, derive_seed(cfg.seed, "train"), band);
  const SampleSet test_set =
      steady_mix ? sample_steady_mix(plant, n_test, derive_seed(cfg.seed, "test"))
                 : sample_inputs(plant, n_test, derive_seed(cfg.seed, "test"), band);

  TrainResult out;
  const IoScaling scaling = io_scaling_for(plant);
  out.params = init_params(spec, scaling, derive_seed(cfg.seed, "init"));
  const PhysicsResidual residual(plant, plant.dt());
  const int n = residual.dim();
  const int nfe = plant.n_fe();

  // The optimizer works on a normalized copy of the network: uniform Adam
  // steps on parameters baked with per-channel physical scales (temperatures
  // in the hundreds next to order-one concentrations) saturate the first
  // layer within a few updates and training collapses to a constant output.
  NetworkParams params =
      init_params(spec, IoScaling::identity(spec.n_x, spec.n_u), derive_seed(cfg.seed, "init"));
  NetworkParams best = out.params;
  double best_loss = std::numeric_limits<double>::infinity();

  Eigen::VectorXd xmid(n), xhw(n);
  for (int s = 0; s < spec.n_x; ++s)
    for (int v = 0; v < nfe; ++v) {
      xmid[s * nfe + v] = scaling.state_mid[s];
      xhw[s * nfe + v] = scaling.state_halfwidth[s];
    }
  auto normalize = [](const Eigen::MatrixXd& raw, const Eigen::VectorXd& mid,
                      const Eigen::VectorXd& hw) -> Eigen::MatrixXd {
    return ((raw.colwise() - mid).array().colwise() / hw.array()).matrix();
  };
  const Eigen::MatrixXd train_x = normalize(train_set.states, xmid, xhw);
  const Eigen::MatrixXd train_u =
      normalize(train_set.controls, scaling.control_mid, scaling.control_halfwidth);

  AdamState adam(params);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  Eigen::VectorXd r, adj;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = lr_schedule(cfg, epoch);
    double epoch_loss = 0.0;

    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int m = std::min(cfg.batch_size, n_train - start);
      Eigen::MatrixXd xb(n, m), ub(train_set.controls.rows(), m);
      Eigen::MatrixXd xnb(n, m), unb(train_set.controls.rows(), m);
      for (int j = 0; j < m; ++j) {
        const int col = order[static_cast<std::size_t>(start + j)];
        xb.col(j) = train_set.states.col(col);
        ub.col(j) = train_set.controls.col(col);
        xnb.col(j) = train_x.col(col);
        unb.col(j) = train_u.col(col);
      }

      const Eigen::MatrixXd yn = nn_forward_batch(spec, params, xnb, unb);
      const Eigen::MatrixXd y = (yn.array().colwise() * xhw.array()).matrix().colwise() + xmid;
      Eigen::MatrixXd ybar(n, m);
      try {
        for (int j = 0; j < m; ++j) {
          residual.eval_with_adjoint(
              std::span<const double>(xb.col(j).data(), static_cast<std::size_t>(n)),
              std::span<const double>(y.col(j).data(), static_cast<std::size_t>(n)),
              std::span<const double>(ub.col(j).data(), static_cast<std::size_t>(ub.rows())), r,
              adj);
          epoch_loss += r.squaredNorm();
          ybar.col(j) = adj.cwiseProduct(xhw);
        }
      } catch (const EvalError& e) {
        abort_training(epoch, std::string("surrogate output left the model domain (") +
                                  e.what() + ")");
      }
      if (!std::isfinite(epoch_loss)) abort_training(epoch, "training loss is not finite");

      const NetworkParams grad = nn_param_gradient(spec, params, xnb, unb, ybar);
      adam.step(params, grad, lr);
    }

    NetworkParams baked = params;
    fold_io_scaling(spec, scaling, baked);
    double test_loss = 0.0;
    try {
      test_loss = surrogate_loss(spec, baked, residual, test_set, cfg.batch_size);
    } catch (const EvalError& e) {
      abort_training(epoch, std::string("held-out evaluation left the model domain (") +
                                e.what() + ")");
    }
    if (!std::isfinite(test_loss)) abort_training(epoch, "held-out loss is not finite");

    out.report.train_loss.push_back(epoch_loss);
    out.report.test_loss.push_back(test_loss);
    if (test_loss < best_loss) {
      best_loss = test_loss;
      best = std::move(baked);
      out.report.best_epoch = epoch;
    }
  }

  out.params = cfg.epochs > 0 ? best : out.params;
  return out;
}

}  // namespace nnmpc
