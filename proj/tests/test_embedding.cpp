#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "nnmpc/embedding.hpp"
#include "nnmpc/nn.hpp"
#include "nnmpc/plant.hpp"
#include "nnmpc/solver.hpp"
#include "nnmpc/transcription.hpp"

using namespace nnmpc;

namespace {

// A network and a bare problem holding its input, control, and output
// variables, the shared fixture of most cases below.
struct Rig {
  NetworkSpec spec;
  std::shared_ptr<const NetworkParams> params;
  NlpProblem p;
  std::vector<int> in, u, out;
};

Rig make_rig(NetworkSpec spec, std::uint64_t seed, double in_lb = 0.1, double in_ub = 1.0,
             double out_lb = -10.0, double out_ub = 10.0) {
  Rig r;
  r.spec = std::move(spec);
  r.params = std::make_shared<const NetworkParams>(
      init_params(r.spec, IoScaling::identity(r.spec.n_x, r.spec.n_u), seed));
  const int n = r.spec.n_x * r.spec.n_fe;
  for (int i = 0; i < n; ++i)
    r.in.push_back(r.p.add_var("in" + std::to_string(i), in_lb, in_ub, in_lb, VarClass::kState));
  for (int l = 0; l < r.spec.n_u; ++l)
    r.u.push_back(r.p.add_var("u" + std::to_string(l), 0.0, 1.0, 0.5, VarClass::kControl));
  for (int i = 0; i < n; ++i)
    r.out.push_back(
        r.p.add_var("out" + std::to_string(i), out_lb, out_ub, 0.0, VarClass::kState));
  return r;
}

void fix_var(NlpProblem& p, int id, double val) {
  p.vars[static_cast<std::size_t>(id)].lb = val;
  p.vars[static_cast<std::size_t>(id)].ub = val;
  p.vars[static_cast<std::size_t>(id)].x0 = val;
}

Eigen::VectorXd guess_vector(const NlpProblem& p) {
  Eigen::VectorXd x(p.num_vars());
  for (int i = 0; i < p.num_vars(); ++i) x[i] = p.vars[static_cast<std::size_t>(i)].x0;
  return x;
}

Eigen::VectorXd row_values(const NlpProblem& p, const Eigen::VectorXd& x) {
  Eigen::VectorXd r;
  EvalWorkspace ws;
  p.constraints.eval_all(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                         r, ws);
  return r;
}

}  // namespace

TEST_CASE("full-space dense embedding: counts, rows, and propagated bounds") {
  // Six tanh layers of width 24: each contributes 24 pre-activation and 24
  // activation auxiliaries, so 288 in total plus ten output-tie rows.
  Rig r = make_rig(make_pinn_spec(1, 10, 2), 7);
  const int nv0 = r.p.num_vars();
  const EmbeddedStep step = embed_fs_dense(r.spec, r.params, r.in, r.u, r.out, r.p);

  CHECK(fs_aux_per_layer(r.spec) == std::vector<int>{48, 48, 48, 48, 48, 48});
  CHECK(fs_aux_count(r.spec) == 288);
  CHECK(step.kind == EmbeddingKind::kFullSpace);
  CHECK(step.num_aux() == 288);
  CHECK(r.p.num_vars() - nv0 == 288);
  CHECK(r.p.constraints.size() == 298);
  CHECK(static_cast<int>(step.aux_rows.size()) == 288);
  CHECK(static_cast<int>(step.output_rows.size()) == 10);
  CHECK(step.lifted_layers.size() == 6);
  const VariableCounts vc = count_variables(r.p);
  CHECK(vc.aux == 288);

  // One hidden layer of width 24 adds exactly 48 auxiliaries; a pure linear
  // net adds none and ties the outputs directly.
  Rig one = make_rig(make_pinn_spec(1, 10, 2, 1, 24), 7);
  CHECK(embed_fs_dense(one.spec, one.params, one.in, one.u, one.out, one.p).num_aux() == 48);
  CHECK(one.p.constraints.size() == 58);

  Rig lin = make_rig(make_pinn_spec(1, 10, 2, 0, 24), 7);
  const EmbeddedStep lstep = embed_fs_dense(lin.spec, lin.params, lin.in, lin.u, lin.out, lin.p);
  CHECK(lstep.num_aux() == 0);
  CHECK(lin.p.constraints.size() == 10);

  // Interval propagation oracle for the first lifted layer: the inputs live
  // in [-1, 1]-dominated boxes (states [0.1, 1], controls [0, 1]), so the
  // pre-activation magnitude is at most the max absolute row sum of the
  // weights plus the max bias, and tanh squashes that into (-1, 1).
  const Eigen::MatrixXd& W = r.params->layers[0].W;
  const Eigen::VectorXd& b = r.params->layers[0].b;
  const double pre_bound =
      W.cwiseAbs().rowwise().sum().maxCoeff() * 1.0 + b.cwiseAbs().maxCoeff();
  for (int p = 0; p < 24; ++p) {
    const VarInfo& pre = r.p.vars[static_cast<std::size_t>(step.aux_pre[0][static_cast<std::size_t>(p)])];
    CHECK(pre.lb == doctest::Approx(-pre_bound).epsilon(1e-12));
    CHECK(pre.ub == doctest::Approx(pre_bound).epsilon(1e-12));
    CHECK(pre.cls == VarClass::kAux);
    const VarInfo& act = r.p.vars[static_cast<std::size_t>(step.aux_act[0][static_cast<std::size_t>(p)])];
    CHECK(act.lb == doctest::Approx(std::tanh(-pre_bound)).epsilon(1e-12));
    CHECK(act.ub == doctest::Approx(std::tanh(pre_bound)).epsilon(1e-12));
    CHECK(act.ub <= 1.0);
    CHECK(act.lb >= -1.0);
  }

  // Family validation: a convolutional spec is not a dense network.
  Rig conv = make_rig(make_picnn_spec(1, 10, 2), 7);
  CHECK_THROWS_AS((void)embed_fs_dense(conv.spec, conv.params, conv.in, conv.u, conv.out, conv.p),
                  std::invalid_argument);
}

TEST_CASE("full-space dense embedding reproduces the network on fixed inputs") {
  Rig r = make_rig(make_pinn_spec(1, 4, 2, 2, 5), 21);
  const Eigen::VectorXd xin = (Eigen::VectorXd(4) << 0.3, 0.5, 0.7, 0.9).finished();
  const Eigen::VectorXd uin = (Eigen::VectorXd(2) << 0.6, 0.4).finished();
  for (int i = 0; i < 4; ++i) fix_var(r.p, r.in[static_cast<std::size_t>(i)], xin[i]);
  for (int l = 0; l < 2; ++l) fix_var(r.p, r.u[static_cast<std::size_t>(l)], uin[l]);

  const EmbeddedStep step = embed_fs_dense(r.spec, r.params, r.in, r.u, r.out, r.p);
  r.p.objective = r.p.graph.constant(0.0);

  SolveOptions opts;
  opts.tol = 1e-10;
  const SolveResult res = solve(r.p, opts);
  REQUIRE(res.status == SolveStatus::kOptimal);

  const Eigen::VectorXd y = nn_forward(r.spec, *r.params, xin, uin);
  for (int i = 0; i < 4; ++i)
    CHECK(res.x[r.out[static_cast<std::size_t>(i)]] == doctest::Approx(y[i]).epsilon(1e-8));
  // The auxiliaries must land on the hidden activations themselves.
  ForwardTrace tr;
  (void)nn_forward_batch(r.spec, *r.params, xin, uin, &tr);
  for (std::size_t li = 0; li < step.lifted_layers.size(); ++li) {
    const auto layer = static_cast<std::size_t>(step.lifted_layers[li]);
    for (std::size_t p = 0; p < step.aux_act[li].size(); ++p) {
      CHECK(res.x[step.aux_pre[li][p]] ==
            doctest::Approx(tr.pre[layer](static_cast<Eigen::Index>(p), 0)).epsilon(1e-7));
      CHECK(res.x[step.aux_act[li][p]] ==
            doctest::Approx(tr.a[layer + 1](static_cast<Eigen::Index>(p), 0)).epsilon(1e-7));
    }
  }
}

TEST_CASE("full-space convolutional embedding: counts and identity kernel") {
  // Published-size network on the first benchmark: two conv layers of 32
  // channels with kernel 4 over 10 nodes give 2*32*7 and 2*32*4 auxiliaries.
  Rig r = make_rig(make_picnn_spec(1, 10, 2), 11);
  const EmbeddedStep step = embed_fs_conv(r.spec, r.params, r.in, r.u, r.out, r.p);
  CHECK(fs_aux_per_layer(r.spec) == std::vector<int>{448, 256});
  CHECK(step.num_aux() == 704);
  CHECK(r.p.constraints.size() == 714);
  CHECK(count_variables(r.p).aux == 704);

  // A single-output-channel kernel [1, 0] with zero bias and linear
  // activation copies the state channel through: the tie rows vanish at
  // out == in without any auxiliaries.
  NetworkSpec id_spec;
  id_spec.layout = InputLayout::kChannels;
  id_spec.n_x = 1;
  id_spec.n_fe = 4;
  id_spec.n_u = 1;
  id_spec.layers.push_back(LayerSpec::Conv(2, 1, 1, Activation::kLinear));
  id_spec.validate();
  auto id_params = std::make_shared<NetworkParams>();
  id_params->layers.resize(1);
  id_params->layers[0].W = (Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished();
  id_params->layers[0].b = Eigen::VectorXd::Zero(1);

  Rig id;
  id.spec = id_spec;
  for (int i = 0; i < 4; ++i)
    id.in.push_back(id.p.add_var("in" + std::to_string(i), 0.0, 1.0, 0.2 * (i + 1)));
  id.u.push_back(id.p.add_var("u0", 0.0, 1.0, 0.7));
  for (int i = 0; i < 4; ++i)
    id.out.push_back(id.p.add_var("out" + std::to_string(i), -5.0, 5.0, 0.2 * (i + 1)));
  const EmbeddedStep id_step = embed_fs_conv(id_spec, id_params, id.in, id.u, id.out, id.p);
  CHECK(id_step.num_aux() == 0);
  CHECK(id.p.constraints.size() == 4);
  const Eigen::VectorXd residuals = row_values(id.p, guess_vector(id.p));
  CHECK(residuals.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-15));

  // Family validation in the other direction.
  Rig dense = make_rig(make_pinn_spec(1, 10, 2), 11);
  CHECK_THROWS_AS(
      (void)embed_fs_conv(dense.spec, dense.params, dense.in, dense.u, dense.out, dense.p),
      std::invalid_argument);
}

TEST_CASE("full-space convolutional embedding reproduces the network on fixed inputs") {
  Rig r = make_rig(make_picnn_spec(1, 5, 2, 1, 3, 2), 31);
  const Eigen::VectorXd xin = (Eigen::VectorXd(5) << 0.2, 0.4, 0.5, 0.8, 0.9).finished();
  const Eigen::VectorXd uin = (Eigen::VectorXd(2) << 0.3, 0.8).finished();
  for (int i = 0; i < 5; ++i) fix_var(r.p, r.in[static_cast<std::size_t>(i)], xin[i]);
  for (int l = 0; l < 2; ++l) fix_var(r.p, r.u[static_cast<std::size_t>(l)], uin[l]);

  const EmbeddedStep step = embed_fs_conv(r.spec, r.params, r.in, r.u, r.out, r.p);
  CHECK(step.num_aux() == 2 * 3 * 4);
  r.p.objective = r.p.graph.constant(0.0);

  SolveOptions opts;
  opts.tol = 1e-10;
  const SolveResult res = solve(r.p, opts);
  REQUIRE(res.status == SolveStatus::kOptimal);
  const Eigen::VectorXd y = nn_forward(r.spec, *r.params, xin, uin);
  for (int i = 0; i < 5; ++i)
    CHECK(res.x[r.out[static_cast<std::size_t>(i)]] == doctest::Approx(y[i]).epsilon(1e-8));
}

TEST_CASE("reduced-space embedding: no auxiliaries, nested rows, node budget") {
  Rig r = make_rig(make_pinn_spec(1, 4, 2, 2, 5), 21);
  const Eigen::VectorXd xin = (Eigen::VectorXd(4) << 0.3, 0.5, 0.7, 0.9).finished();
  const Eigen::VectorXd uin = (Eigen::VectorXd(2) << 0.6, 0.4).finished();
  for (int i = 0; i < 4; ++i) fix_var(r.p, r.in[static_cast<std::size_t>(i)], xin[i]);
  for (int l = 0; l < 2; ++l) fix_var(r.p, r.u[static_cast<std::size_t>(l)], uin[l]);

  const EmbeddedStep step = embed_rs_dense(r.spec, r.params, r.in, r.u, r.out, r.p);
  CHECK(step.kind == EmbeddingKind::kReducedSpace);
  CHECK(step.num_aux() == 0);
  CHECK(count_variables(r.p).aux == 0);
  CHECK(r.p.constraints.size() == 4);

  r.p.objective = r.p.graph.constant(0.0);
  SolveOptions opts;
  opts.tol = 1e-10;
  const SolveResult res = solve(r.p, opts);
  REQUIRE(res.status == SolveStatus::kOptimal);
  const Eigen::VectorXd y = nn_forward(r.spec, *r.params, xin, uin);
  for (int i = 0; i < 4; ++i)
    CHECK(res.x[r.out[static_cast<std::size_t>(i)]] == doctest::Approx(y[i]).epsilon(1e-8));

  // Convolutional specs have no reduced-space form here, mirroring the
  // flattening restriction, and the node budget aborts oversized inlining.
  Rig conv = make_rig(make_picnn_spec(1, 10, 2), 11);
  CHECK_THROWS_AS(
      (void)embed_rs_dense(conv.spec, conv.params, conv.in, conv.u, conv.out, conv.p),
      std::invalid_argument);
  Rig big = make_rig(make_pinn_spec(1, 10, 2), 7);
  CHECK_THROWS_AS((void)embed_rs_dense(big.spec, big.params, big.in, big.u, big.out, big.p,
                                       "nn", 50),
                  std::length_error);
}

TEST_CASE("auxiliary initialization satisfies the lifted rows and is idempotent") {
  Rig r = make_rig(make_pinn_spec(1, 4, 2, 3, 6), 5);
  const EmbeddedStep step = embed_fs_dense(r.spec, r.params, r.in, r.u, r.out, r.p);

  Eigen::VectorXd x = guess_vector(r.p);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int id : r.in) x[id] = 0.1 + 0.9 * unit(rng);
  for (int id : r.u) x[id] = unit(rng);
  for (int id : r.out) x[id] = unit(rng);

  initialize_aux(step, std::span<double>(x.data(), static_cast<std::size_t>(x.size())));
  const Eigen::VectorXd rows = row_values(r.p, x);
  for (int row : step.aux_rows) CHECK(std::abs(rows[row]) <= 1e-10);

  // The output ties are left alone: their residual is exactly the gap
  // between the guessed next profile and the network's one-step image.
  Eigen::VectorXd xin(4), uin(2);
  for (int i = 0; i < 4; ++i) xin[i] = x[r.in[static_cast<std::size_t>(i)]];
  for (int l = 0; l < 2; ++l) uin[l] = x[r.u[static_cast<std::size_t>(l)]];
  const Eigen::VectorXd y = nn_forward(r.spec, *r.params, xin, uin);
  for (int i = 0; i < 4; ++i)
    CHECK(rows[step.output_rows[static_cast<std::size_t>(i)]] ==
          doctest::Approx(x[r.out[static_cast<std::size_t>(i)]] - y[i]).epsilon(1e-12));

  const Eigen::VectorXd once = x;
  initialize_aux(step, std::span<double>(x.data(), static_cast<std::size_t>(x.size())));
  CHECK((x - once).cwiseAbs().maxCoeff() == 0.0);

  // Conv variant: same contract.
  Rig c = make_rig(make_picnn_spec(1, 5, 2, 1, 3, 2), 31);
  const EmbeddedStep cstep = embed_fs_conv(c.spec, c.params, c.in, c.u, c.out, c.p);
  Eigen::VectorXd cx = guess_vector(c.p);
  for (int id : c.in) cx[id] = 0.1 + 0.9 * unit(rng);
  for (int id : c.u) cx[id] = unit(rng);
  initialize_aux(cstep, std::span<double>(cx.data(), static_cast<std::size_t>(cx.size())));
  const Eigen::VectorXd crows = row_values(c.p, cx);
  for (int row : cstep.aux_rows) CHECK(std::abs(crows[row]) <= 1e-10);
}

TEST_CASE("external block: shapes, rollout residual, and derivatives") {
  const NetworkSpec spec = make_pinn_spec(1, 4, 2, 2, 5);
  const auto params = std::make_shared<const NetworkParams>(
      init_params(spec, IoScaling::identity(1, 2), 17));
  const int P = 3, n = 4, nu = 2;
  const auto block = make_efe_block(spec, params, P);
  REQUIRE(block->num_inputs() == (P + 1) * n + P * nu);
  REQUIRE(block->num_outputs() == P * n);

  // Stack a forward rollout: by construction every residual row vanishes.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd y(block->num_inputs());
  Eigen::VectorXd xk(n), uk(nu);
  for (int i = 0; i < n; ++i) xk[i] = 0.2 + 0.6 * unit(rng);
  y.segment(0, n) = xk;
  for (int k = 0; k < P; ++k) {
    for (int l = 0; l < nu; ++l) uk[l] = unit(rng);
    y.segment((P + 1) * n + k * nu, nu) = uk;
    xk = nn_forward(spec, *params, xk, uk);
    y.segment((k + 1) * n, n) = xk;
  }
  Eigen::VectorXd w(block->num_outputs());
  block->eval(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
              std::span<double>(w.data(), static_cast<std::size_t>(w.size())));
  CHECK(w.cwiseAbs().maxCoeff() <= 1e-12);

  // Analytic Jacobian against central differences of eval.
  auto dense_jac = [&](const Eigen::VectorXd& at) {
    std::vector<Eigen::Triplet<double>> trips;
    block->jacobian(std::span<const double>(at.data(), static_cast<std::size_t>(at.size())),
                    trips);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(block->num_outputs(), block->num_inputs());
    for (const auto& t : trips) J(t.row(), t.col()) += t.value();
    return J;
  };
  auto eval_at = [&](const Eigen::VectorXd& at) {
    Eigen::VectorXd out(block->num_outputs());
    block->eval(std::span<const double>(at.data(), static_cast<std::size_t>(at.size())),
                std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
    return out;
  };
  Eigen::VectorXd y2 = y;
  for (int i = 0; i < y2.size(); ++i) y2[i] += 0.05 * (unit(rng) - 0.5);
  const Eigen::MatrixXd J = dense_jac(y2);
  const double h = 1e-6;
  Eigen::MatrixXd Jfd(block->num_outputs(), block->num_inputs());
  for (int j = 0; j < y2.size(); ++j) {
    Eigen::VectorXd lo = y2, hi = y2;
    hi[j] += h;
    lo[j] -= h;
    Jfd.col(j) = (eval_at(hi) - eval_at(lo)) / (2 * h);
  }
  CHECK((J - Jfd).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + Jfd.cwiseAbs().maxCoeff()));

  // Multiplier-weighted Hessian against differences of the exact gradient
  // J(y)^T lambda.
  REQUIRE(block->has_weighted_hessian());
  Eigen::VectorXd lam(block->num_outputs());
  for (int i = 0; i < lam.size(); ++i) lam[i] = unit(rng) - 0.5;
  std::vector<Eigen::Triplet<double>> htrips;
  block->weighted_hessian(
      std::span<const double>(y2.data(), static_cast<std::size_t>(y2.size())),
      std::span<const double>(lam.data(), static_cast<std::size_t>(lam.size())), htrips);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(y2.size(), y2.size());
  for (const auto& t : htrips) {
    REQUIRE(t.row() >= t.col());  // lower triangle contract
    H(t.row(), t.col()) += t.value();
    if (t.row() != t.col()) H(t.col(), t.row()) += t.value();
  }
  Eigen::MatrixXd Hfd(y2.size(), y2.size());
  for (int j = 0; j < y2.size(); ++j) {
    Eigen::VectorXd lo = y2, hi = y2;
    hi[j] += h;
    lo[j] -= h;
    Hfd.col(j) = (dense_jac(hi).transpose() * lam - dense_jac(lo).transpose() * lam) / (2 * h);
  }
  CHECK((H - Hfd).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + Hfd.cwiseAbs().maxCoeff()));
}

TEST_CASE("the three embeddings and the network agree pointwise") {
  // Same trained-shape network, one step, random assignments: the full-space
  // tie rows (after auxiliary propagation), the reduced-space rows, the
  // external block residuals, and the plain forward pass must coincide.
  const NetworkSpec spec = make_pinn_spec(1, 6, 2, 3, 8);
  const auto params = std::make_shared<const NetworkParams>(
      init_params(spec, IoScaling::identity(1, 2), 41));
  const int n = 6;

  Rig fs = make_rig(spec, 41);
  const EmbeddedStep fstep = embed_fs_dense(spec, params, fs.in, fs.u, fs.out, fs.p);
  Rig rs = make_rig(spec, 41);
  const EmbeddedStep rstep = embed_rs_dense(spec, params, rs.in, rs.u, rs.out, rs.p);
  const auto block = make_efe_block(spec, params, 1);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd xin(n), uin(2), xout(n);
    for (int i = 0; i < n; ++i) xin[i] = 0.1 + 0.9 * unit(rng);
    for (int l = 0; l < 2; ++l) uin[l] = unit(rng);
    for (int i = 0; i < n; ++i) xout[i] = 0.1 + 0.9 * unit(rng);
    const Eigen::VectorXd gap = xout - nn_forward(spec, *params, xin, uin);

    Eigen::VectorXd xf = guess_vector(fs.p);
    for (int i = 0; i < n; ++i) xf[fs.in[static_cast<std::size_t>(i)]] = xin[i];
    for (int l = 0; l < 2; ++l) xf[fs.u[static_cast<std::size_t>(l)]] = uin[l];
    for (int i = 0; i < n; ++i) xf[fs.out[static_cast<std::size_t>(i)]] = xout[i];
    initialize_aux(fstep, std::span<double>(xf.data(), static_cast<std::size_t>(xf.size())));
    const Eigen::VectorXd frows = row_values(fs.p, xf);
    for (int i = 0; i < n; ++i)
      CHECK(std::abs(frows[fstep.output_rows[static_cast<std::size_t>(i)]] - gap[i]) <= 1e-10);

    Eigen::VectorXd xr = guess_vector(rs.p);
    for (int i = 0; i < n; ++i) xr[rs.in[static_cast<std::size_t>(i)]] = xin[i];
    for (int l = 0; l < 2; ++l) xr[rs.u[static_cast<std::size_t>(l)]] = uin[l];
    for (int i = 0; i < n; ++i) xr[rs.out[static_cast<std::size_t>(i)]] = xout[i];
    const Eigen::VectorXd rrows = row_values(rs.p, xr);
    for (int i = 0; i < n; ++i)
      CHECK(std::abs(rrows[rstep.output_rows[static_cast<std::size_t>(i)]] - gap[i]) <= 1e-10);

    Eigen::VectorXd y(2 * n + 2);
    y.segment(0, n) = xin;
    y.segment(n, n) = xout;
    y.segment(2 * n, 2) = uin;
    Eigen::VectorXd w(n);
    block->eval(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                std::span<double>(w.data(), static_cast<std::size_t>(w.size())));
    CHECK((w - gap).cwiseAbs().maxCoeff() <= 1e-10);
  }

  // Convolutional cross-check: full space against the external block.
  const NetworkSpec cspec = make_picnn_spec(1, 6, 2, 2, 4, 2);
  const auto cparams = std::make_shared<const NetworkParams>(
      init_params(cspec, IoScaling::identity(1, 2), 43));
  Rig cfs = make_rig(cspec, 43);
  const EmbeddedStep cstep = embed_fs_conv(cspec, cparams, cfs.in, cfs.u, cfs.out, cfs.p);
  const auto cblock = make_efe_block(cspec, cparams, 1);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd xin(n), uin(2), xout(n);
    for (int i = 0; i < n; ++i) xin[i] = 0.1 + 0.9 * unit(rng);
    for (int l = 0; l < 2; ++l) uin[l] = unit(rng);
    for (int i = 0; i < n; ++i) xout[i] = 0.1 + 0.9 * unit(rng);

    Eigen::VectorXd xf = guess_vector(cfs.p);
    for (int i = 0; i < n; ++i) xf[cfs.in[static_cast<std::size_t>(i)]] = xin[i];
    for (int l = 0; l < 2; ++l) xf[cfs.u[static_cast<std::size_t>(l)]] = uin[l];
    for (int i = 0; i < n; ++i) xf[cfs.out[static_cast<std::size_t>(i)]] = xout[i];
    initialize_aux(cstep, std::span<double>(xf.data(), static_cast<std::size_t>(xf.size())));
    const Eigen::VectorXd frows = row_values(cfs.p, xf);

    Eigen::VectorXd y(2 * n + 2);
    y.segment(0, n) = xin;
    y.segment(n, n) = xout;
    y.segment(2 * n, 2) = uin;
    Eigen::VectorXd w(n);
    cblock->eval(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                 std::span<double>(w.data(), static_cast<std::size_t>(w.size())));
    for (int i = 0; i < n; ++i)
      CHECK(std::abs(frows[cstep.output_rows[static_cast<std::size_t>(i)]] - w[i]) <= 1e-10);
  }
}

TEST_CASE("external embedding variable counts match the published configurations") {
  struct Config {
    const char* plant;
    int horizon, moves, expect_vars, expect_rows;
  };
  // (P+1)*n_x*n_fe + M*n_u decision variables and P*n_x*n_fe residual rows.
  const Config table[] = {
      {"b1", 40, 10, 430, 400},
      {"b2", 40, 10, 860, 800},
      {"b3", 30, 10, 7780, 7500},
  };
  for (const Config& c : table) {
    CAPTURE(c.plant);
    const auto plant = make_plant(c.plant);
    const Grid grid = make_grid(*plant, c.horizon, c.moves);
    std::vector<double> x0(static_cast<std::size_t>(plant->n_x() * plant->n_fe()));
    for (int s = 0; s < plant->n_x(); ++s) {
      const Interval& b = plant->info().state_bounds[static_cast<std::size_t>(s)];
      for (int v = 0; v < plant->n_fe(); ++v)
        x0[static_cast<std::size_t>(s * plant->n_fe() + v)] = 0.5 * (b.lb + b.ub);
    }
    NlpProblem p;
    const TranscribedSystem ts = transcribe(p, *plant, grid, x0, /*dynamics_rows=*/false);
    CHECK(p.constraints.size() == 0);

    const NetworkSpec spec = make_pinn_spec(plant->n_x(), plant->n_fe(), plant->n_u(), 1, 4);
    const auto params = std::make_shared<const NetworkParams>(
        init_params(spec, IoScaling::identity(plant->n_x(), plant->n_u()), 1));
    const EmbeddedStep step = attach_efe(p, ts, spec, params);
    CHECK(step.kind == EmbeddingKind::kExternal);
    CHECK(step.block == 0);

    const VariableCounts vc = count_variables(p);
    CHECK(vc.total == c.expect_vars);
    CHECK(vc.aux == 0);
    CHECK(p.num_rows() == c.expect_rows);
    const auto& attach = p.blocks[0];
    CHECK(static_cast<int>(attach.var_map.size()) == attach.block->num_inputs());
    // Move blocking shows up as aliased control slots beyond step M-1.
    const int base = (c.horizon + 1) * plant->n_x() * plant->n_fe();
    for (int k = c.moves; k < c.horizon; ++k)
      for (int l = 0; l < plant->n_u(); ++l)
        CHECK(attach.var_map[static_cast<std::size_t>(base + k * plant->n_u() + l)] ==
              attach.var_map[static_cast<std::size_t>(base + (c.moves - 1) * plant->n_u() + l)]);
  }
}

TEST_CASE("full-space and reduced-space optima coincide on a small tracking problem") {
  // One shared network, free controls, one step: minimizing the same tracking
  // objective through either assembly must land on the same point.
  const NetworkSpec spec = make_pinn_spec(1, 4, 2, 2, 6);
  const auto params = std::make_shared<const NetworkParams>(
      init_params(spec, IoScaling::identity(1, 2), 13));
  const Eigen::VectorXd xin = (Eigen::VectorXd(4) << 0.4, 0.5, 0.6, 0.7).finished();

  auto build = [&](Rig& r, EmbeddingKind kind) -> EmbeddedStep {
    for (int i = 0; i < 4; ++i) fix_var(r.p, r.in[static_cast<std::size_t>(i)], xin[i]);
    EmbeddedStep step = kind == EmbeddingKind::kFullSpace
                            ? embed_fs_dense(spec, params, r.in, r.u, r.out, r.p)
                            : embed_rs_dense(spec, params, r.in, r.u, r.out, r.p);
    ExprGraph& g = r.p.graph;
    std::vector<ExprId> terms;
    for (int i = 0; i < 4; ++i)
      terms.push_back(g.square(g.sub(g.variable(r.out[static_cast<std::size_t>(i)]),
                                     g.constant(0.15))));
    for (int l = 0; l < 2; ++l)
      terms.push_back(g.mul(g.constant(0.1),
                            g.square(g.sub(g.variable(r.u[static_cast<std::size_t>(l)]),
                                           g.constant(0.5)))));
    r.p.objective = g.sum(terms);
    return step;
  };

  Rig fs = make_rig(spec, 13);
  const EmbeddedStep fstep = build(fs, EmbeddingKind::kFullSpace);
  Eigen::VectorXd xf = guess_vector(fs.p);
  initialize_aux(fstep, std::span<double>(xf.data(), static_cast<std::size_t>(xf.size())));
  for (int i = 0; i < fs.p.num_vars(); ++i) fs.p.vars[static_cast<std::size_t>(i)].x0 = xf[i];

  Rig rs = make_rig(spec, 13);
  (void)build(rs, EmbeddingKind::kReducedSpace);

  SolveOptions opts;
  opts.tol = 1e-9;
  const SolveResult rf = solve(fs.p, opts);
  const SolveResult rr = solve(rs.p, opts);
  REQUIRE(rf.status == SolveStatus::kOptimal);
  REQUIRE(rr.status == SolveStatus::kOptimal);
  CHECK(rf.objective == doctest::Approx(rr.objective).epsilon(1e-7));
  for (int l = 0; l < 2; ++l)
    CHECK(rf.x[fs.u[static_cast<std::size_t>(l)]] ==
          doctest::Approx(rr.x[rs.u[static_cast<std::size_t>(l)]]).epsilon(1e-6));
  for (int i = 0; i < 4; ++i)
    CHECK(rf.x[fs.out[static_cast<std::size_t>(i)]] ==
          doctest::Approx(rr.x[rs.out[static_cast<std::size_t>(i)]]).epsilon(1e-6));
}

TEST_CASE("auxiliary initialization does not hurt first-solve iteration counts") {
  // Paired cold-start solves of a four-step chained problem, identical except
  // that one writes the implied hidden-layer values before solving.
  const NetworkSpec spec = make_pinn_spec(1, 5, 2, 2, 8);
  const auto params = std::make_shared<const NetworkParams>(
      init_params(spec, IoScaling::identity(1, 2), 29));
  const int P = 4, n = 5;

  auto assemble = [&](bool init) {
    NlpProblem p;
    std::vector<std::vector<int>> xs(P + 1);
    for (int k = 0; k <= P; ++k)
      for (int i = 0; i < n; ++i)
        xs[static_cast<std::size_t>(k)].push_back(
            p.add_var("x" + std::to_string(k) + "_" + std::to_string(i), -3.0, 3.0, 0.4,
                      VarClass::kState));
    for (int i = 0; i < n; ++i) fix_var(p, xs[0][static_cast<std::size_t>(i)], 0.35 + 0.05 * i);
    std::vector<int> us;
    for (int l = 0; l < 2; ++l)
      us.push_back(p.add_var("u" + std::to_string(l), 0.0, 1.0, 0.5, VarClass::kControl));

    std::vector<EmbeddedStep> steps;
    for (int k = 0; k < P; ++k)
      steps.push_back(embed_fs_dense(spec, params, xs[static_cast<std::size_t>(k)], us,
                                     xs[static_cast<std::size_t>(k + 1)], p,
                                     "k" + std::to_string(k)));
    ExprGraph& g = p.graph;
    std::vector<ExprId> terms;
    for (int k = 1; k <= P; ++k)
      terms.push_back(g.square(
          g.sub(g.variable(xs[static_cast<std::size_t>(k)][n - 1]), g.constant(0.2))));
    for (int l = 0; l < 2; ++l)
      terms.push_back(
          g.mul(g.constant(0.1), g.square(g.sub(g.variable(us[static_cast<std::size_t>(l)]),
                                                g.constant(0.5)))));
    p.objective = g.sum(terms);

    if (init) {
      Eigen::VectorXd x = guess_vector(p);
      for (const EmbeddedStep& s : steps)
        initialize_aux(s, std::span<double>(x.data(), static_cast<std::size_t>(x.size())));
      for (int i = 0; i < p.num_vars(); ++i) p.vars[static_cast<std::size_t>(i)].x0 = x[i];
    }
    SolveOptions opts;
    opts.tol = 1e-8;
    return solve(p, opts);
  };

  const SolveResult plain = assemble(false);
  const SolveResult warm = assemble(true);
  REQUIRE(plain.status == SolveStatus::kOptimal);
  REQUIRE(warm.status == SolveStatus::kOptimal);
  CHECK(warm.objective == doctest::Approx(plain.objective).epsilon(1e-6));
  CHECK(warm.iterations <= plain.iterations);
}
