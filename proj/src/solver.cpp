#include "nnmpc/solver.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <utility>
#include <vector>

// Implementation notes.
//
// Inequalities get a nonnegative slack; bounds (including slack bounds) are
// handled with a primal-dual log barrier. Each iteration solves the sparse
// symmetric system
//
//   [ W + Sigma + dw*I   J^T  ] [dx ]   [ -(grad f + J^T lam) + mu/(x-l) - mu/(u-x) ]
//   [ J                 -dc*I ] [dlam] = [ -r                                        ]
//
// with SparseLU, followed by the explicit dual updates for the bound
// multipliers. dw is raised until the search direction is a descent direction
// for the Armijo merit  f + barrier + nu*|r|_1  (at feasible points this is
// exactly the usual curvature condition on the null space of J); dc is raised
// only when the factorization fails outright, which covers rank-deficient
// Jacobians. The barrier parameter decreases monotonically once the scaled
// KKT error for the current mu is small enough. When the line search collapses
// while the constraints are still violated, a Gauss-Newton restoration phase
// minimizes 0.5*|r|^2 inside the bounds; if that stalls, the problem is
// declared infeasible.

namespace nnmpc {

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kMaxIterations: return "max_iterations";
    case SolveStatus::kLineSearchFailure: return "line_search_failure";
    case SolveStatus::kInfeasible: return "infeasible";
  }
  return "unknown";
}

VariableCounts count_variables(const NlpProblem& p) {
  VariableCounts c;
  for (const VarInfo& v : p.vars) {
    if (v.cls == VarClass::kAux) {
      ++c.aux;
    } else {
      ++c.decision;
    }
  }
  c.total = p.num_vars();
  c.rows = p.num_rows();
  return c;
}

namespace {

using Trip = Eigen::Triplet<double>;
using Clock = std::chrono::steady_clock;

constexpr double kFixedGap = 1e-12;    // ub-lb at or below this pins the variable
constexpr double kKappaSigma = 1e10;   // clipping band for bound multipliers
constexpr double kSMax = 100.0;        // cap in the residual scaling terms
constexpr double kArmijoEta = 1e-4;
constexpr int kMaxBacktracks = 30;
constexpr double kDeltaCFail = 1e-8;   // dual regularization after a failed factorization
constexpr double kDeltaWMax = 1e14;

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0;
}

class InteriorPoint {
 public:
  InteriorPoint(NlpProblem& p, const SolveOptions& opts, const SolveResult* warm)
      : p_(p), o_(opts), warm_(warm) {}

  SolveResult run() {
    const auto t0 = Clock::now();
    setup();
    init_point();
    evaluate_all();

    SolveStatus status = iterate();

    SolveResult res;
    res.status = status;
    res.x = x_.head(nu_);
    res.lambda = lam_;
    res.z_lower = zl_.head(nu_);
    res.z_upper = zu_.head(nu_);
    res.iterations = iters_;
    res.objective = f_;
    res.kkt_residual = error(0.0);
    res.constraint_violation = inf_norm(r_);
    res.mu = mu_;
    res.wall_clock_seconds =
        std::chrono::duration<double>(Clock::now() - t0).count();
    return res;
  }

 private:
  // ---- problem digestion -------------------------------------------------

  void setup() {
    nu_ = p_.num_vars();
    for (int i = 0; i < nu_; ++i) p_.graph.variable(i);  // normalize var count

    ma_ = p_.constraints.size();
    slack_of_row_.assign(static_cast<std::size_t>(ma_), -1);
    ns_ = 0;
    for (int i = 0; i < ma_; ++i) {
      if (p_.constraints.relation(i) == Relation::kLe) slack_of_row_[i] = nu_ + ns_++;
    }
    nt_ = nu_ + ns_;

    m_ = ma_;
    block_row_off_.clear();
    for (const auto& a : p_.blocks) {
      if (!a.block) throw std::invalid_argument("null grey-box block attachment");
      if (static_cast<int>(a.var_map.size()) != a.block->num_inputs())
        throw std::invalid_argument("grey-box var_map size does not match block inputs");
      for (int v : a.var_map)
        if (v < 0 || v >= nu_) throw std::invalid_argument("grey-box var_map index out of range");
      block_row_off_.push_back(m_);
      m_ += a.block->num_outputs();
    }

    lb_.resize(nt_);
    ub_.resize(nt_);
    for (int i = 0; i < nu_; ++i) {
      lb_[i] = p_.vars[static_cast<std::size_t>(i)].lb;
      ub_[i] = p_.vars[static_cast<std::size_t>(i)].ub;
      if (lb_[i] > ub_[i]) throw std::invalid_argument("variable with lb > ub: " +
                                                       p_.vars[static_cast<std::size_t>(i)].name);
    }
    for (int i = nu_; i < nt_; ++i) {
      lb_[i] = 0.0;
      ub_[i] = kInf;
    }

    fixed_.assign(static_cast<std::size_t>(nt_), 0);
    free_of_.assign(static_cast<std::size_t>(nt_), -1);
    tot_of_.clear();
    for (int i = 0; i < nt_; ++i) {
      if (std::isfinite(lb_[i]) && std::isfinite(ub_[i]) && ub_[i] - lb_[i] <= kFixedGap) {
        fixed_[static_cast<std::size_t>(i)] = 1;
      } else {
        free_of_[static_cast<std::size_t>(i)] = static_cast<int>(tot_of_.size());
        tot_of_.push_back(i);
      }
    }
    nf_ = static_cast<int>(tot_of_.size());

    if (p_.external_objective) {
      if (!p_.external_objective->value || !p_.external_objective->gradient)
        throw std::invalid_argument("external objective requires value and gradient callbacks");
    }

    bool blocks_have_hess = true;
    for (const auto& a : p_.blocks)
      if (!a.block->has_weighted_hessian()) blocks_have_hess = false;

    switch (o_.hessian) {
      case SolveOptions::Hessian::kExact:
        if (p_.external_objective)
          throw std::invalid_argument("exact Hessian mode is unavailable with an external objective");
        if (!blocks_have_hess)
          throw std::invalid_argument("exact Hessian mode requires weighted Hessians from every block");
        use_exact_ = true;
        break;
      case SolveOptions::Hessian::kBfgs:
        use_exact_ = false;
        break;
      case SolveOptions::Hessian::kAuto:
        use_exact_ = !p_.external_objective && p_.blocks.empty();
        break;
    }
    if (!use_exact_ && nf_ > 5000)
      throw std::invalid_argument("quasi-Newton mode stores a dense matrix; problem too large");

    if (use_exact_) {
      // The Lagrangian Hessian caches per-row sweep data; rebuilding it on
      // every solve of an unchanged problem (the MPC loop re-solves with new
      // bounds) would dominate, so it is kept on the problem object.
      const ExprId obj = p_.external_objective ? kNoExpr : p_.objective;
      if (!p_.hessian_cache || p_.hessian_cache_rows != ma_ || p_.hessian_cache_objective != obj) {
        p_.hessian_cache = std::make_shared<LagrangianHessian>(&p_.graph, obj, &p_.constraints);
        p_.hessian_cache_rows = ma_;
        p_.hessian_cache_objective = obj;
      }
    } else {
      bfgs_ = Eigen::MatrixXd::Identity(nf_, nf_);
    }
  }

  bool has_lb(int i) const { return !fixed_[static_cast<std::size_t>(i)] && std::isfinite(lb_[i]); }
  bool has_ub(int i) const { return !fixed_[static_cast<std::size_t>(i)] && std::isfinite(ub_[i]); }

  void init_point() {
    x_.resize(nt_);
    const bool warm_ok = warm_ && warm_->x.size() == nu_;
    for (int i = 0; i < nu_; ++i)
      x_[i] = warm_ok ? warm_->x[i] : p_.vars[static_cast<std::size_t>(i)].x0;
    for (int i = 0; i < nt_; ++i)
      if (fixed_[static_cast<std::size_t>(i)]) x_[i] = 0.5 * (lb_[i] + ub_[i]);

    // Push strictly inside the bounds; warm starts stay closer to the walls.
    const double kappa = warm_ok ? 1e-8 : 1e-6;
    for (int i = 0; i < nu_; ++i) {
      if (fixed_[static_cast<std::size_t>(i)]) continue;
      const bool fl = std::isfinite(lb_[i]), fu = std::isfinite(ub_[i]);
      if (fl && fu) {
        const double pad = kappa * (ub_[i] - lb_[i]);
        x_[i] = std::clamp(x_[i], lb_[i] + pad, ub_[i] - pad);
      } else if (fl) {
        x_[i] = std::max(x_[i], lb_[i] + kappa * std::max(1.0, std::abs(lb_[i])));
      } else if (fu) {
        x_[i] = std::min(x_[i], ub_[i] - kappa * std::max(1.0, std::abs(ub_[i])));
      }
    }

    // Slacks start at the value that satisfies their row, floored away from 0.
    if (ns_ > 0) {
      Eigen::VectorXd ra(ma_);
      p_.constraints.eval_all(std::span<const double>(x_.data(), static_cast<std::size_t>(nt_)),
                              ra, ws_);
      for (int i = 0; i < ma_; ++i) {
        const int s = slack_of_row_[static_cast<std::size_t>(i)];
        if (s >= 0) x_[s] = std::max(1e-6, -ra[i]);
      }
    }

    const double mu_floor = mu_min();
    mu_ = warm_ok ? std::clamp(warm_->mu, mu_floor, 1e-4) : std::max(o_.mu_init, mu_floor);

    lam_ = Eigen::VectorXd::Zero(m_);
    if (warm_ok && warm_->lambda.size() == m_) lam_ = warm_->lambda;

    zl_ = Eigen::VectorXd::Zero(nt_);
    zu_ = Eigen::VectorXd::Zero(nt_);
    for (int i = 0; i < nt_; ++i) {
      if (has_lb(i)) {
        double z = mu_ / std::max(x_[i] - lb_[i], 1e-12);
        if (warm_ok && i < nu_ && warm_->z_lower.size() == nu_)
          z = std::max(warm_->z_lower[i], 1e-12);
        zl_[i] = std::clamp(z, 1e-8, 1e8);
      }
      if (has_ub(i)) {
        double z = mu_ / std::max(ub_[i] - x_[i], 1e-12);
        if (warm_ok && i < nu_ && warm_->z_upper.size() == nu_)
          z = std::max(warm_->z_upper[i], 1e-12);
        zu_[i] = std::clamp(z, 1e-8, 1e8);
      }
    }
  }

  // ---- evaluation --------------------------------------------------------

  std::span<const double> xspan(const Eigen::VectorXd& x) const {
    return {x.data(), static_cast<std::size_t>(x.size())};
  }

  double eval_f(const Eigen::VectorXd& x) {
    if (p_.external_objective)
      return p_.external_objective->value(std::span<const double>(x.data(), static_cast<std::size_t>(nu_)));
    if (p_.objective == kNoExpr) return 0.0;
    return p_.graph.eval(p_.objective, xspan(x), ws_);
  }

  void eval_grad(const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g.setZero(nt_);
    if (p_.external_objective) {
      Eigen::VectorXd gu = Eigen::VectorXd::Zero(nu_);
      p_.external_objective->gradient(
          std::span<const double>(x.data(), static_cast<std::size_t>(nu_)), gu);
      g.head(nu_) = gu;
      return;
    }
    if (p_.objective == kNoExpr) return;
    grad_pairs_.clear();
    p_.graph.gradient(p_.objective, xspan(x), grad_pairs_, ws_);
    for (const auto& [v, d] : grad_pairs_) g[v] += d;
  }

  void eval_rows(const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r.resize(m_);
    if (ma_ > 0) {
      Eigen::VectorXd ra(ma_);
      p_.constraints.eval_all(xspan(x), ra, ws_);
      r.head(ma_) = ra;
      for (int i = 0; i < ma_; ++i) {
        const int s = slack_of_row_[static_cast<std::size_t>(i)];
        if (s >= 0) r[i] += x[s];
      }
    }
    for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
      const auto& a = p_.blocks[b];
      gather(x, a.var_map, yblk_);
      wblk_.resize(static_cast<std::size_t>(a.block->num_outputs()));
      a.block->eval(std::span<const double>(yblk_.data(), yblk_.size()),
                    std::span<double>(wblk_.data(), wblk_.size()));
      for (int k = 0; k < a.block->num_outputs(); ++k)
        r[block_row_off_[b] + k] = wblk_[static_cast<std::size_t>(k)];
    }
  }

  void eval_jac(const Eigen::VectorXd& x, std::vector<Trip>& out) {
    out.clear();
    if (ma_ > 0) {
      const JacPattern& pat = p_.constraints.jacobian_pattern();
      jvals_.resize(pat.rows.size());
      p_.constraints.jacobian_values(xspan(x), std::span<double>(jvals_.data(), jvals_.size()), ws_);
      for (std::size_t k = 0; k < pat.rows.size(); ++k)
        out.emplace_back(pat.rows[k], pat.cols[k], jvals_[k]);
      for (int i = 0; i < ma_; ++i) {
        const int s = slack_of_row_[static_cast<std::size_t>(i)];
        if (s >= 0) out.emplace_back(i, s, 1.0);
      }
    }
    for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
      const auto& a = p_.blocks[b];
      gather(x, a.var_map, yblk_);
      btrips_.clear();
      a.block->jacobian(std::span<const double>(yblk_.data(), yblk_.size()), btrips_);
      for (const Trip& t : btrips_)
        out.emplace_back(block_row_off_[b] + t.row(), a.var_map[static_cast<std::size_t>(t.col())],
                         t.value());
    }
  }

  void gather(const Eigen::VectorXd& x, const std::vector<int>& map, std::vector<double>& y) const {
    y.resize(map.size());
    for (std::size_t j = 0; j < map.size(); ++j) y[j] = x[map[j]];
  }

  void evaluate_all() {
    f_ = eval_f(x_);
    eval_grad(x_, grad_);
    eval_rows(x_, r_);
    eval_jac(x_, jtrips_);
  }

  // Lower-triangular Lagrangian Hessian over the total variable space.
  void build_w(std::vector<Trip>& out) {
    out.clear();
    if (!use_exact_) {
      for (int i = 0; i < nf_; ++i)
        for (int j = 0; j <= i; ++j)
          out.emplace_back(tot_of_[static_cast<std::size_t>(i)],
                           tot_of_[static_cast<std::size_t>(j)], bfgs_(i, j));
      return;
    }
    const Eigen::SparseMatrix<double> h = p_.hessian_cache->values(
        xspan(x_), std::span<const double>(lam_.data(), static_cast<std::size_t>(ma_)), 1.0);
    for (int k = 0; k < h.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(h, k); it; ++it)
        out.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
      const auto& a = p_.blocks[b];
      if (a.block->num_outputs() == 0) continue;
      gather(x_, a.var_map, yblk_);
      btrips_.clear();
      a.block->weighted_hessian(
          std::span<const double>(yblk_.data(), yblk_.size()),
          std::span<const double>(lam_.data() + block_row_off_[b],
                                  static_cast<std::size_t>(a.block->num_outputs())),
          btrips_);
      for (const Trip& t : btrips_) {
        int vi = a.var_map[static_cast<std::size_t>(t.row())];
        int vj = a.var_map[static_cast<std::size_t>(t.col())];
        double v = t.value();
        // An off-diagonal pair collapsing onto one problem variable picks up
        // both symmetric copies.
        if (t.row() != t.col() && vi == vj) v *= 2.0;
        if (vi < vj) std::swap(vi, vj);
        out.emplace_back(vi, vj, v);
      }
    }
  }

  // ---- errors and merit --------------------------------------------------

  double mu_min() const { return o_.tol / 10.0; }

  void compute_stationarity() {
    stat_ = grad_;
    for (const Trip& t : jtrips_) stat_[t.col()] += t.value() * lam_[t.row()];
    stat_ -= zl_;
    stat_ += zu_;
  }

  // Scaled KKT error; call compute_stationarity() first.
  double error(double mu) const {
    double zsum = zl_.lpNorm<1>() + zu_.lpNorm<1>();
    int nb = 0;
    for (int i = 0; i < nt_; ++i) nb += has_lb(i) + has_ub(i);
    const double sd =
        std::max(kSMax, (lam_.lpNorm<1>() + zsum) / std::max(1, m_ + nb)) / kSMax;
    const double sc = std::max(kSMax, zsum / std::max(1, nb)) / kSMax;

    double e_stat = 0.0, e_comp = 0.0;
    for (int i : tot_of_) {
      e_stat = std::max(e_stat, std::abs(stat_[i]));
      if (has_lb(i)) e_comp = std::max(e_comp, std::abs((x_[i] - lb_[i]) * zl_[i] - mu));
      if (has_ub(i)) e_comp = std::max(e_comp, std::abs((ub_[i] - x_[i]) * zu_[i] - mu));
    }
    return std::max({e_stat / sd, inf_norm(r_), e_comp / sc});
  }

  // Barrier part of the merit; +inf when the point touches a wall.
  double barrier(const Eigen::VectorXd& x, double mu) const {
    double b = 0.0;
    for (int i : tot_of_) {
      if (std::isfinite(lb_[i])) {
        const double d = x[i] - lb_[i];
        if (d <= 0.0) return kInf;
        b -= mu * std::log(d);
      }
      if (std::isfinite(ub_[i])) {
        const double d = ub_[i] - x[i];
        if (d <= 0.0) return kInf;
        b -= mu * std::log(d);
      }
    }
    return b;
  }

  Eigen::VectorXd barrier_grad(double mu) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(nt_);
    for (int i : tot_of_) {
      if (std::isfinite(lb_[i])) g[i] -= mu / (x_[i] - lb_[i]);
      if (std::isfinite(ub_[i])) g[i] += mu / (ub_[i] - x_[i]);
    }
    return g;
  }

  // ---- the main loop -----------------------------------------------------

  SolveStatus iterate() {
    std::ofstream trace;
    if (!o_.iter_trace_path.empty()) {
      trace.open(o_.iter_trace_path);
      trace << "iter,objective,violation,kkt,mu,alpha,delta\n";
    }
    const auto t_start = Clock::now();
    double last_alpha = 0.0, last_delta = 0.0;

    for (;;) {
      compute_stationarity();
      const double e0 = error(0.0);
      const double r_inf = inf_norm(r_);

      if (trace.is_open())
        trace << iters_ << ',' << f_ << ',' << r_inf << ',' << e0 << ',' << mu_ << ','
              << last_alpha << ',' << last_delta << '\n';
      if (o_.verbose)
        std::printf("it %4d  f % .8e  viol %.2e  kkt %.2e  mu %.1e  a %.2e\n", iters_, f_, r_inf,
                    e0, mu_, last_alpha);

      if (e0 <= o_.tol && r_inf <= o_.tol) return SolveStatus::kOptimal;
      if (iters_ >= o_.max_iter) return SolveStatus::kMaxIterations;
      (void)t_start;

      double e_mu = error(mu_);
      while (mu_ > mu_min() && e_mu <= 10.0 * mu_) {
        mu_ = std::max(mu_min(), std::min(0.2 * mu_, std::pow(mu_, 1.5)));
        e_mu = error(mu_);
      }
      const double tau = std::max(0.99, 1.0 - mu_);

      build_w(wtrips_);

      // Direction computation with escalating primal regularization.
      Eigen::VectorXd dx, dlam;
      double dphi = 0.0, gphi_dx = 0.0;
      const double r1 = m_ ? r_.lpNorm<1>() : 0.0;
      double delta_w = 0.0, delta_c = 0.0;
      bool have_dir = false;
      for (int attempt = 0; attempt < 22 && !have_dir; ++attempt) {
        if (!solve_kkt(delta_w, delta_c, dx, dlam)) {
          delta_c = kDeltaCFail;
          bump(delta_w);
          continue;
        }
        // Merit slope; raise nu if the infeasibility term must dominate.
        const Eigen::VectorXd bg = barrier_grad(mu_);
        gphi_dx = 0.0;
        for (int i : tot_of_) gphi_dx += (grad_[i] + bg[i]) * dx[i];
        double nu_req = 1.1 * inf_norm(lam_ + dlam) + 0.1;
        if (r1 > 1e-14 && gphi_dx > 0.0) nu_req = std::max(nu_req, gphi_dx / (0.5 * r1) + 1e-6);
        nu_merit_ = std::max(nu_merit_, nu_req);
        dphi = gphi_dx - nu_merit_ * r1;
        if (dphi < -1e-16 * std::max(1.0, std::abs(f_)) || inf_norm(dx) < 1e-14) {
          have_dir = true;
        } else {
          bump(delta_w);
        }
      }
      last_delta = delta_w;
      if (!have_dir) {
        // Even heavy regularization produced no descent; treat like a failed
        // line search.
        if (r_inf > o_.tol) {
          const SolveStatus rs = restoration();
          if (rs != SolveStatus::kOptimal) return rs;
          continue;
        }
        return SolveStatus::kLineSearchFailure;
      }
      delta_last_ = delta_w;

      // Dual direction for the bound multipliers.
      Eigen::VectorXd dzl = Eigen::VectorXd::Zero(nt_), dzu = Eigen::VectorXd::Zero(nt_);
      for (int i : tot_of_) {
        if (has_lb(i)) {
          const double d = x_[i] - lb_[i];
          dzl[i] = mu_ / d - zl_[i] - zl_[i] * dx[i] / d;
        }
        if (has_ub(i)) {
          const double d = ub_[i] - x_[i];
          dzu[i] = mu_ / d - zu_[i] + zu_[i] * dx[i] / d;
        }
      }

      // Fraction-to-boundary limits.
      double a_max = 1.0;
      for (int i : tot_of_) {
        if (has_lb(i) && dx[i] < 0.0) a_max = std::min(a_max, tau * (x_[i] - lb_[i]) / -dx[i]);
        if (has_ub(i) && dx[i] > 0.0) a_max = std::min(a_max, tau * (ub_[i] - x_[i]) / dx[i]);
      }
      double a_z = 1.0;
      for (int i : tot_of_) {
        if (has_lb(i) && dzl[i] < 0.0) a_z = std::min(a_z, tau * zl_[i] / -dzl[i]);
        if (has_ub(i) && dzu[i] < 0.0) a_z = std::min(a_z, tau * zu_[i] / -dzu[i]);
      }

      // Armijo backtracking on the merit function. The roundoff slack keeps
      // full Newton steps acceptable once phi differences drop below double
      // precision, which is where the final quadratic convergence happens.
      const double phi0 = f_ + barrier(x_, mu_) + nu_merit_ * r1;
      const double phi_slack = 1e-15 * (1.0 + std::abs(phi0));
      double alpha = a_max;
      bool accepted = false;
      Eigen::VectorXd xt = x_, rt;
      double ft = 0.0;
      for (int bt = 0; bt < kMaxBacktracks; ++bt, alpha *= 0.5) {
        xt = x_ + alpha * dx;
        double phit;
        try {
          ft = eval_f(xt);
          eval_rows(xt, rt);
          const double bar = barrier(xt, mu_);
          const double rt1 = m_ ? rt.lpNorm<1>() : 0.0;
          phit = ft + bar + nu_merit_ * rt1;
        } catch (const EvalError&) {
          continue;
        }
        if (std::isfinite(phit) && phit <= phi0 + kArmijoEta * alpha * dphi + phi_slack) {
          accepted = true;
          break;
        }
      }

      if (!accepted) {
        if (r_inf > o_.tol) {
          const SolveStatus rs = restoration();
          if (rs != SolveStatus::kOptimal) return rs;
          continue;
        }
        return SolveStatus::kLineSearchFailure;
      }

      // Accept the step and refresh derivatives.
      const double step_inf = alpha * inf_norm(dx);
      x_ = xt;
      f_ = ft;
      r_ = std::move(rt);
      lam_ += alpha * dlam;
      for (int i : tot_of_) {
        if (has_lb(i)) {
          zl_[i] += a_z * dzl[i];
          const double d = x_[i] - lb_[i];
          zl_[i] = std::clamp(zl_[i], mu_ / (kKappaSigma * d), kKappaSigma * mu_ / d);
        }
        if (has_ub(i)) {
          zu_[i] += a_z * dzu[i];
          const double d = ub_[i] - x_[i];
          zu_[i] = std::clamp(zu_[i], mu_ / (kKappaSigma * d), kKappaSigma * mu_ / d);
        }
      }
      ++iters_;
      last_alpha = alpha;

      Eigen::VectorXd glag_old;
      if (!use_exact_) {
        glag_old = grad_;
        for (const Trip& t : jtrips_) glag_old[t.col()] += t.value() * lam_[t.row()];
      }
      eval_grad(x_, grad_);
      eval_jac(x_, jtrips_);
      if (!use_exact_) {
        Eigen::VectorXd glag_new = grad_;
        for (const Trip& t : jtrips_) glag_new[t.col()] += t.value() * lam_[t.row()];
        Eigen::VectorXd s(nf_), y(nf_);
        for (int i = 0; i < nf_; ++i) {
          s[i] = alpha * dx[tot_of_[static_cast<std::size_t>(i)]];
          y[i] = glag_new[tot_of_[static_cast<std::size_t>(i)]] -
                 glag_old[tot_of_[static_cast<std::size_t>(i)]];
        }
        bfgs_update(s, y);
      }

      // A vanishing accepted step means the current barrier subproblem cannot
      // improve further at this point.
      if (step_inf <= 1e-10 * (1.0 + inf_norm(x_))) {
        const double rn = inf_norm(r_);
        if (rn > o_.tol) {
          const SolveStatus rs = restoration();
          if (rs != SolveStatus::kOptimal) return rs;
        } else if (mu_ > mu_min()) {
          mu_ = std::max(mu_min(), std::min(0.2 * mu_, std::pow(mu_, 1.5)));
        } else {
          compute_stationarity();
          if (error(0.0) <= o_.tol) return SolveStatus::kOptimal;
          return SolveStatus::kLineSearchFailure;
        }
      }
    }
  }

  void bump(double& delta_w) const {
    if (delta_w == 0.0) {
      delta_w = std::max(1e-8, delta_last_ / 3.0);
    } else {
      delta_w = std::min(kDeltaWMax, delta_w * 10.0);
    }
  }

  // Assemble and solve one KKT system. Returns false when the factorization
  // fails or the solution does not actually satisfy the system.
  bool solve_kkt(double delta_w, double delta_c, Eigen::VectorXd& dx, Eigen::VectorXd& dlam) {
    const int dim = nf_ + m_;
    ktrips_.clear();
    ktrips_.reserve(wtrips_.size() * 2 + jtrips_.size() * 2 + static_cast<std::size_t>(dim));

    for (const Trip& t : wtrips_) {
      const int fi = free_of_[static_cast<std::size_t>(t.row())];
      const int fj = free_of_[static_cast<std::size_t>(t.col())];
      if (fi < 0 || fj < 0) continue;
      ktrips_.emplace_back(fi, fj, t.value());
      if (fi != fj) ktrips_.emplace_back(fj, fi, t.value());
    }
    for (int k = 0; k < nf_; ++k) {
      const int i = tot_of_[static_cast<std::size_t>(k)];
      double sigma = 0.0;
      if (has_lb(i)) sigma += zl_[i] / (x_[i] - lb_[i]);
      if (has_ub(i)) sigma += zu_[i] / (ub_[i] - x_[i]);
      ktrips_.emplace_back(k, k, sigma + delta_w);
    }
    for (const Trip& t : jtrips_) {
      const int fc = free_of_[static_cast<std::size_t>(t.col())];
      if (fc < 0) continue;
      ktrips_.emplace_back(nf_ + t.row(), fc, t.value());
      ktrips_.emplace_back(fc, nf_ + t.row(), t.value());
    }
    const double dc = std::max(delta_c, 1e-12);
    for (int r = 0; r < m_; ++r) ktrips_.emplace_back(nf_ + r, nf_ + r, -dc);

    Eigen::SparseMatrix<double> kkt(dim, dim);
    kkt.setFromTriplets(ktrips_.begin(), ktrips_.end());

    Eigen::VectorXd rhs(dim);
    Eigen::VectorXd jtl = Eigen::VectorXd::Zero(nt_);
    for (const Trip& t : jtrips_) jtl[t.col()] += t.value() * lam_[t.row()];
    for (int k = 0; k < nf_; ++k) {
      const int i = tot_of_[static_cast<std::size_t>(k)];
      rhs[k] = -(grad_[i] + jtl[i]);
      if (has_lb(i)) rhs[k] += mu_ / (x_[i] - lb_[i]);
      if (has_ub(i)) rhs[k] -= mu_ / (ub_[i] - x_[i]);
    }
    for (int r = 0; r < m_; ++r) rhs[nf_ + r] = -r_[r];

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(kkt);
    if (lu.info() != Eigen::Success) return false;
    const Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return false;
    const double res = (kkt * sol - rhs).lpNorm<Eigen::Infinity>();
    if (res > 1e-6 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) return false;

    dx = Eigen::VectorXd::Zero(nt_);
    for (int k = 0; k < nf_; ++k) dx[tot_of_[static_cast<std::size_t>(k)]] = sol[k];
    dlam = sol.tail(m_);
    return true;
  }

  void bfgs_update(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    if (inf_norm(s) < 1e-14) return;
    const Eigen::VectorXd bs = bfgs_ * s;
    const double sbs = s.dot(bs);
    if (sbs <= 1e-16) return;
    double sy = s.dot(y);
    Eigen::VectorXd ybar = y;
    if (sy < 0.2 * sbs) {  // Powell damping keeps the update positive definite
      const double theta = 0.8 * sbs / (sbs - sy);
      ybar = theta * y + (1.0 - theta) * bs;
      sy = s.dot(ybar);
    }
    if (sy <= 1e-16) return;
    bfgs_.noalias() -= (bs * bs.transpose()) / sbs;
    bfgs_.noalias() += (ybar * ybar.transpose()) / sy;
  }

  // ---- feasibility restoration --------------------------------------------
  //
  // Gauss-Newton on 0.5*|r|^2 inside the bounds. Returns kOptimal as the
  // "resume the main loop" signal; kInfeasible when the violation stalls.

  SolveStatus restoration() {
    const double r_enter = inf_norm(r_);
    double best = r_enter;
    int stall = 0;
    const double mu_res = std::max(mu_, 1e-8);

    for (int k = 0; k < 100; ++k) {
      const double rn = inf_norm(r_);
      if (rn <= std::max(0.1 * r_enter, 0.5 * o_.tol)) break;
      if (iters_ >= o_.max_iter) return SolveStatus::kMaxIterations;

      // Free-space Jacobian.
      res_trips_.clear();
      for (const Trip& t : jtrips_) {
        const int fc = free_of_[static_cast<std::size_t>(t.col())];
        if (fc >= 0) res_trips_.emplace_back(t.row(), fc, t.value());
      }
      Eigen::SparseMatrix<double> jf(m_, nf_);
      jf.setFromTriplets(res_trips_.begin(), res_trips_.end());

      const Eigen::VectorXd bg = barrier_grad(mu_res);
      Eigen::VectorXd gm = jf.transpose() * r_;
      for (int i = 0; i < nf_; ++i) gm[i] += bg[tot_of_[static_cast<std::size_t>(i)]];

      Eigen::VectorXd diag(nf_);
      for (int i = 0; i < nf_; ++i) {
        const int v = tot_of_[static_cast<std::size_t>(i)];
        double s = 1e-8;
        if (has_lb(v)) s += mu_res / ((x_[v] - lb_[v]) * (x_[v] - lb_[v]));
        if (has_ub(v)) s += mu_res / ((ub_[v] - x_[v]) * (ub_[v] - x_[v]));
        diag[i] = s;
      }
      Eigen::SparseMatrix<double> d(nf_, nf_);
      d.setIdentity();
      for (int i = 0; i < nf_; ++i) d.valuePtr()[i] = diag[i];
      Eigen::SparseMatrix<double> gn = Eigen::SparseMatrix<double>(jf.transpose() * jf) + d;

      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(gn);
      bool moved = false;
      if (lu.info() == Eigen::Success) {
        const Eigen::VectorXd dxf = lu.solve(-gm);
        if (dxf.allFinite()) {
          Eigen::VectorXd dx = Eigen::VectorXd::Zero(nt_);
          for (int i = 0; i < nf_; ++i) dx[tot_of_[static_cast<std::size_t>(i)]] = dxf[i];

          double a_max = 1.0;
          for (int i : tot_of_) {
            if (has_lb(i) && dx[i] < 0.0) a_max = std::min(a_max, 0.99 * (x_[i] - lb_[i]) / -dx[i]);
            if (has_ub(i) && dx[i] > 0.0) a_max = std::min(a_max, 0.99 * (ub_[i] - x_[i]) / dx[i]);
          }
          const double m0 = 0.5 * r_.squaredNorm() + barrier(x_, mu_res);
          const double dm = gm.dot(dxf);
          double alpha = a_max;
          for (int bt = 0; bt < kMaxBacktracks; ++bt, alpha *= 0.5) {
            const Eigen::VectorXd xt = x_ + alpha * dx;
            Eigen::VectorXd rt;
            try {
              eval_rows(xt, rt);
            } catch (const EvalError&) {
              continue;
            }
            const double mt = 0.5 * rt.squaredNorm() + barrier(xt, mu_res);
            if (std::isfinite(mt) && mt <= m0 + kArmijoEta * alpha * std::min(dm, 0.0)) {
              x_ = xt;
              r_ = std::move(rt);
              eval_jac(x_, jtrips_);
              moved = true;
              break;
            }
          }
        }
      }
      ++iters_;
      (void)moved;

      const double rn_new = inf_norm(r_);
      if (rn_new < best - 1e-12) {
        best = rn_new;
        stall = 0;
      } else if (++stall >= 10) {
        return SolveStatus::kInfeasible;
      }
    }

    if (inf_norm(r_) > std::max(0.1 * r_enter, 0.5 * o_.tol) && inf_norm(r_) > o_.tol)
      return SolveStatus::kInfeasible;

    // Multipliers from before the failure no longer describe this point.
    lam_.setZero();
    if (!use_exact_) bfgs_ = Eigen::MatrixXd::Identity(nf_, nf_);
    f_ = eval_f(x_);
    eval_grad(x_, grad_);
    return SolveStatus::kOptimal;  // resume signal
  }

  // ---- members -------------------------------------------------------------

  NlpProblem& p_;
  const SolveOptions& o_;
  const SolveResult* warm_;

  int nu_ = 0, ns_ = 0, nt_ = 0, ma_ = 0, m_ = 0, nf_ = 0;
  std::vector<int> slack_of_row_;
  std::vector<int> block_row_off_;
  Eigen::VectorXd lb_, ub_;
  std::vector<char> fixed_;
  std::vector<int> free_of_;
  std::vector<int> tot_of_;

  bool use_exact_ = true;
  Eigen::MatrixXd bfgs_;

  EvalWorkspace ws_;
  std::vector<std::pair<int, double>> grad_pairs_;
  std::vector<double> jvals_;
  std::vector<double> yblk_, wblk_;
  std::vector<Trip> btrips_, jtrips_, wtrips_, ktrips_, res_trips_;

  Eigen::VectorXd x_, lam_, zl_, zu_, grad_, r_, stat_;
  double f_ = 0.0;
  double mu_ = 0.1;
  double nu_merit_ = 1.0;
  double delta_last_ = 0.0;
  int iters_ = 0;
};

}  // namespace

SolveResult solve(NlpProblem& problem, const SolveOptions& opts, const SolveResult* warm) {
  InteriorPoint ipm(problem, opts, warm);
  return ipm.run();
}

}  // namespace nnmpc
