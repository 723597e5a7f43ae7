#include "nnmpc/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nnmpc {

std::string_view to_string(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::kMechanistic: return "mech";
    case EmbeddingKind::kFullSpace: return "fs";
    case EmbeddingKind::kReducedSpace: return "rs";
    case EmbeddingKind::kExternal: return "efe";
  }
  return "mech";
}

EmbeddingKind embedding_from_string(std::string_view s) {
  if (s == "mech" || s == "mechanistic") return EmbeddingKind::kMechanistic;
  if (s == "fs") return EmbeddingKind::kFullSpace;
  if (s == "rs") return EmbeddingKind::kReducedSpace;
  if (s == "efe") return EmbeddingKind::kExternal;
  throw std::invalid_argument("unknown embedding kind '" + std::string(s) +
                              "' (expected mech, fs, rs, or efe)");
}

int EmbeddedStep::num_aux() const {
  std::size_t total = 0;
  for (const auto& layer : aux_pre) total += layer.size();
  for (const auto& layer : aux_act) total += layer.size();
  return static_cast<int>(total);
}

namespace {

int last_parametric_layer(const NetworkSpec& spec) {
  int last = -1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].parametric()) last = static_cast<int>(i);
  if (last < 0) throw std::invalid_argument("network has no parametric layers to embed");
  return last;
}

ExprId act_expr(ExprGraph& g, Activation a, ExprId z) {
  switch (a) {
    case Activation::kLinear: return z;
    case Activation::kTanh: return g.tanh_(z);
    case Activation::kSigmoid: return g.sigmoid_(z);
    case Activation::kSoftplus: return g.softplus(z);
  }
  throw std::invalid_argument("unsupported activation in embedded network");
}

// Unrolled affine coefficients of one output unit of a parametric layer over
// its input units: (input unit index, weight) pairs plus the bias.
struct UnitAffine {
  std::vector<std::pair<int, double>> terms;
  double bias = 0.0;
};

UnitAffine unit_affine(const LayerSpec& l, const NetworkParams::Layer& P, int in_length,
                       int unit) {
  UnitAffine ua;
  if (l.kind == LayerSpec::Kind::kDense) {
    ua.bias = P.b[unit];
    for (int q = 0; q < P.W.cols(); ++q) {
      const double w = P.W(unit, q);
      if (w != 0.0) ua.terms.emplace_back(q, w);
    }
    return ua;
  }
  const int K = l.conv.kernel;
  const int out_len = conv1d_out_length(in_length, K);
  const int c = unit / out_len, v = unit % out_len;
  ua.bias = P.b[c];
  for (int ci = 0; ci < l.conv.in_channels; ++ci)
    for (int t = 0; t < K; ++t) {
      const double w = P.W(c, ci * K + t);
      if (w != 0.0) ua.terms.emplace_back(ci * in_length + v + t, w);
    }
  return ua;
}

// Max absolute row sum of the layer map plus the max absolute bias, the
// uniform pre-activation magnitude bound used for auxiliary intervals.
double layer_gain(const LayerSpec& l, const NetworkParams::Layer& P, double in_bound) {
  double gain = 0.0;
  if (l.kind == LayerSpec::Kind::kDense) {
    for (int p = 0; p < P.W.rows(); ++p)
      gain = std::max(gain, P.W.row(p).cwiseAbs().sum());
  } else {
    for (int c = 0; c < l.conv.out_channels; ++c)
      gain = std::max(gain, P.W.row(c).cwiseAbs().sum());
  }
  const double bias = P.b.size() > 0 ? P.b.cwiseAbs().maxCoeff() : 0.0;
  return gain * in_bound + bias;
}

void check_embed_args(const NetworkSpec& spec, const std::shared_ptr<const NetworkParams>& params,
                      std::span<const int> in_vars, std::span<const int> control_vars,
                      std::span<const int> out_vars) {
  spec.validate();
  if (!params || params->layers.size() != spec.layers.size())
    throw std::invalid_argument("network parameters do not match the layer list");
  const auto n = static_cast<std::size_t>(spec.n_x * spec.n_fe);
  if (in_vars.size() != n || out_vars.size() != n ||
      control_vars.size() != static_cast<std::size_t>(spec.n_u))
    throw std::invalid_argument("embedded step variable slices do not match the network size");
}

// Input units of the network as problem variable ids, honoring the layout
// (flat stacking, or channels with each control replicated across nodes).
std::vector<int> input_units(const NetworkSpec& spec, std::span<const int> in_vars,
                             std::span<const int> control_vars) {
  std::vector<int> units(in_vars.begin(), in_vars.end());
  if (spec.layout == InputLayout::kFlat) {
    units.insert(units.end(), control_vars.begin(), control_vars.end());
  } else {
    for (int l = 0; l < spec.n_u; ++l)
      units.insert(units.end(), static_cast<std::size_t>(spec.n_fe), control_vars[l]);
  }
  return units;
}

double input_bound(const NlpProblem& p, std::span<const int> in_vars,
                   std::span<const int> control_vars) {
  double bound = 0.0;
  auto visit = [&](int id) {
    const VarInfo& v = p.vars[static_cast<std::size_t>(id)];
    bound = std::max(bound, std::max(std::abs(v.lb), std::abs(v.ub)));
  };
  for (int id : in_vars) visit(id);
  for (int id : control_vars) visit(id);
  return bound;
}

EmbeddedStep embed_fs_impl(const NetworkSpec& spec, std::shared_ptr<const NetworkParams> params,
                           std::span<const int> in_vars, std::span<const int> control_vars,
                           std::span<const int> out_vars, NlpProblem& problem,
                           std::string_view tag) {
  check_embed_args(spec, params, in_vars, control_vars, out_vars);
  const int last = last_parametric_layer(spec);
  const auto shapes = spec.shapes();

  EmbeddedStep step;
  step.kind = EmbeddingKind::kFullSpace;
  step.spec = spec;
  step.params = std::move(params);
  step.in_vars.assign(in_vars.begin(), in_vars.end());
  step.control_vars.assign(control_vars.begin(), control_vars.end());
  step.out_vars.assign(out_vars.begin(), out_vars.end());

  ExprGraph& g = problem.graph;
  std::vector<int> cur = input_units(spec, in_vars, control_vars);
  double bound = input_bound(problem, in_vars, control_vars);
  const std::string prefix(tag);

  std::vector<ExprId> ids;
  std::vector<double> coeffs;
  for (int i = 0; i <= last; ++i) {
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
    if (!l.parametric()) continue;  // flatten/reshape only relabel units
    const auto& P = step.params->layers[static_cast<std::size_t>(i)];
    const int out_units = shapes[static_cast<std::size_t>(i) + 1].units();
    const double pre_bound = layer_gain(l, P, bound);
    const double act_lb = act_value(l.act, -pre_bound);
    const double act_ub = act_value(l.act, pre_bound);
    const bool lifted = i != last;

    std::vector<int> pre_ids, act_ids;
    for (int p = 0; p < out_units; ++p) {
      const UnitAffine ua = unit_affine(l, P, shapes[static_cast<std::size_t>(i)].length, p);
      ids.clear();
      coeffs.clear();
      if (lifted) {
        const std::string base =
            prefix + "_l" + std::to_string(i) + "_" + std::to_string(p);
        const int pre = problem.add_var(base + "_z", -pre_bound, pre_bound, 0.0, VarClass::kAux);
        ids.push_back(g.variable(pre));
        coeffs.push_back(1.0);
        for (const auto& [q, w] : ua.terms) {
          ids.push_back(g.variable(cur[static_cast<std::size_t>(q)]));
          coeffs.push_back(-w);
        }
        step.aux_rows.push_back(problem.constraints.add(g.affine(ids, coeffs, -ua.bias),
                                                        Relation::kEq, 0.0, base + "_pre"));
        const int act = problem.add_var(base + "_a", act_lb, act_ub,
                                        act_value(l.act, 0.0), VarClass::kAux);
        step.aux_rows.push_back(problem.constraints.add(
            g.sub(g.variable(act), act_expr(g, l.act, g.variable(pre))), Relation::kEq, 0.0,
            base + "_act"));
        pre_ids.push_back(pre);
        act_ids.push_back(act);
      } else {
        // Output layer: tie the next-step state directly, no auxiliaries.
        ExprId row;
        if (l.act == Activation::kLinear) {
          ids.push_back(g.variable(step.out_vars[static_cast<std::size_t>(p)]));
          coeffs.push_back(1.0);
          for (const auto& [q, w] : ua.terms) {
            ids.push_back(g.variable(cur[static_cast<std::size_t>(q)]));
            coeffs.push_back(-w);
          }
          row = g.affine(ids, coeffs, -ua.bias);
        } else {
          ids.clear();
          coeffs.clear();
          for (const auto& [q, w] : ua.terms) {
            ids.push_back(g.variable(cur[static_cast<std::size_t>(q)]));
            coeffs.push_back(w);
          }
          row = g.sub(g.variable(step.out_vars[static_cast<std::size_t>(p)]),
                      act_expr(g, l.act, g.affine(ids, coeffs, ua.bias)));
        }
        step.output_rows.push_back(problem.constraints.add(
            row, Relation::kEq, 0.0, prefix + "_out" + std::to_string(p)));
      }
    }
    if (lifted) {
      step.lifted_layers.push_back(i);
      step.aux_pre.push_back(std::move(pre_ids));
      step.aux_act.push_back(std::move(act_ids));
      cur = step.aux_act.back();
      bound = std::max(std::abs(act_lb), std::abs(act_ub));
    }
  }
  return step;
}

bool dense_only(const NetworkSpec& spec) {
  return spec.layout == InputLayout::kFlat &&
         std::all_of(spec.layers.begin(), spec.layers.end(),
                     [](const LayerSpec& l) { return l.kind == LayerSpec::Kind::kDense; });
}

}  // namespace

std::vector<int> fs_aux_per_layer(const NetworkSpec& spec) {
  spec.validate();
  const int last = last_parametric_layer(spec);
  const auto shapes = spec.shapes();
  std::vector<int> counts;
  for (int i = 0; i < last; ++i)
    if (spec.layers[static_cast<std::size_t>(i)].parametric())
      counts.push_back(2 * shapes[static_cast<std::size_t>(i) + 1].units());
  return counts;
}

int fs_aux_count(const NetworkSpec& spec) {
  const auto counts = fs_aux_per_layer(spec);
  int total = 0;
  for (int c : counts) total += c;
  return total;
}

EmbeddedStep embed_fs_dense(const NetworkSpec& spec, std::shared_ptr<const NetworkParams> params,
                            std::span<const int> in_vars, std::span<const int> control_vars,
                            std::span<const int> out_vars, NlpProblem& problem,
                            std::string_view tag) {
  if (!dense_only(spec))
    throw std::invalid_argument(
        "full-space dense embedding requires a flat-input, dense-only network");
  return embed_fs_impl(spec, std::move(params), in_vars, control_vars, out_vars, problem, tag);
}

EmbeddedStep embed_fs_conv(const NetworkSpec& spec, std::shared_ptr<const NetworkParams> params,
                           std::span<const int> in_vars, std::span<const int> control_vars,
                           std::span<const int> out_vars, NlpProblem& problem,
                           std::string_view tag) {
  if (spec.layout != InputLayout::kChannels)
    throw std::invalid_argument(
        "full-space convolutional embedding requires a channel-form network");
  return embed_fs_impl(spec, std::move(params), in_vars, control_vars, out_vars, problem, tag);
}

EmbeddedStep embed_rs_dense(const NetworkSpec& spec, std::shared_ptr<const NetworkParams> params,
                            std::span<const int> in_vars, std::span<const int> control_vars,
                            std::span<const int> out_vars, NlpProblem& problem,
                            std::string_view tag, std::size_t max_nodes) {
  if (!dense_only(spec))
    throw std::invalid_argument(
        "reduced-space embedding supports dense networks only; use the full-space form for "
        "convolutional surrogates");
  check_embed_args(spec, params, in_vars, control_vars, out_vars);

  EmbeddedStep step;
  step.kind = EmbeddingKind::kReducedSpace;
  step.spec = spec;
  step.params = std::move(params);
  step.in_vars.assign(in_vars.begin(), in_vars.end());
  step.control_vars.assign(control_vars.begin(), control_vars.end());
  step.out_vars.assign(out_vars.begin(), out_vars.end());

  ExprGraph& g = problem.graph;
  const std::size_t start_nodes = g.size();
  std::vector<ExprId> cur;
  for (int id : input_units(spec, in_vars, control_vars)) cur.push_back(g.variable(id));

  std::vector<ExprId> ids;
  std::vector<double> coeffs;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const auto& P = step.params->layers[i];
    std::vector<ExprId> next(static_cast<std::size_t>(l.dense.out));
    for (int p = 0; p < l.dense.out; ++p) {
      ids.clear();
      coeffs.clear();
      for (int q = 0; q < l.dense.in; ++q) {
        const double w = P.W(p, q);
        if (w == 0.0) continue;
        ids.push_back(cur[static_cast<std::size_t>(q)]);
        coeffs.push_back(w);
      }
      next[static_cast<std::size_t>(p)] =
          act_expr(g, l.act, g.affine(ids, coeffs, P.b[p]));
    }
    cur = std::move(next);
    if (g.size() - start_nodes > max_nodes)
      throw std::length_error("reduced-space inlining exceeded the node budget (" +
                              std::to_string(g.size() - start_nodes) + " > " +
                              std::to_string(max_nodes) + " after layer " + std::to_string(i) +
                              "); lift the network into full space instead");
  }

  const std::string prefix(tag);
  for (std::size_t p = 0; p < step.out_vars.size(); ++p)
    step.output_rows.push_back(problem.constraints.add(
        g.sub(g.variable(step.out_vars[p]), cur[p]), Relation::kEq, 0.0,
        prefix + "_out" + std::to_string(p)));
  return step;
}

namespace {

// Residuals x_{k+1} - NN(x_k, u_k) for a whole horizon, evaluated as one
// batched forward pass. Inputs are the horizon+1 stacked profiles followed by
// one control vector per step; move blocking is the attachment's concern.
class SurrogateHorizonBlock final : public GreyBoxBlock {
 public:
  SurrogateHorizonBlock(NetworkSpec spec, std::shared_ptr<const NetworkParams> params,
                        int horizon)
      : spec_(std::move(spec)), params_(std::move(params)), horizon_(horizon) {
    spec_.validate();
    if (horizon_ < 1) throw std::invalid_argument("external block needs at least one step");
    if (!params_ || params_->layers.size() != spec_.layers.size())
      throw std::invalid_argument("network parameters do not match the layer list");
    n_ = spec_.n_x * spec_.n_fe;
    nu_ = spec_.n_u;
  }

  int num_inputs() const override { return (horizon_ + 1) * n_ + horizon_ * nu_; }
  int num_outputs() const override { return horizon_ * n_; }

  void eval(std::span<const double> y, std::span<double> w) override {
    check_sizes(y.size(), w.size());
    gather(y);
    out_ = nn_forward_batch(spec_, *params_, states_, controls_);
    for (int k = 0; k < horizon_; ++k)
      for (int i = 0; i < n_; ++i)
        w[static_cast<std::size_t>(k * n_ + i)] =
            y[static_cast<std::size_t>((k + 1) * n_ + i)] - out_(i, k);
  }

  void jacobian(std::span<const double> y, std::vector<Eigen::Triplet<double>>& out) override {
    check_sizes(y.size(), static_cast<std::size_t>(num_outputs()));
    gather(y);
    const int ubase = (horizon_ + 1) * n_;
    for (int k = 0; k < horizon_; ++k) {
      const Eigen::MatrixXd J =
          nn_input_jacobian(spec_, *params_, states_.col(k), controls_.col(k));
      for (int i = 0; i < n_; ++i) {
        out.emplace_back(k * n_ + i, (k + 1) * n_ + i, 1.0);
        for (int j = 0; j < n_; ++j)
          if (J(i, j) != 0.0) out.emplace_back(k * n_ + i, k * n_ + j, -J(i, j));
        for (int l = 0; l < nu_; ++l)
          if (J(i, n_ + l) != 0.0)
            out.emplace_back(k * n_ + i, ubase + k * nu_ + l, -J(i, n_ + l));
      }
    }
  }

  bool has_weighted_hessian() const override { return true; }

  void weighted_hessian(std::span<const double> y, std::span<const double> lambda,
                        std::vector<Eigen::Triplet<double>>& out) override {
    check_sizes(y.size(), lambda.size());
    gather(y);
    const int ubase = (horizon_ + 1) * n_;
    Eigen::VectorXd lam(n_);
    for (int k = 0; k < horizon_; ++k) {
      for (int i = 0; i < n_; ++i) lam[i] = lambda[static_cast<std::size_t>(k * n_ + i)];
      if (lam.isZero(0.0)) continue;
      // The residual is affine in x_{k+1}, so only the (x_k, u_k) block of
      // the step carries curvature, with a flipped sign.
      const Eigen::MatrixXd H =
          nn_weighted_hessian(spec_, *params_, states_.col(k), controls_.col(k), lam);
      auto to_input = [&](int a) { return a < n_ ? k * n_ + a : ubase + k * nu_ + (a - n_); };
      for (int i = 0; i < n_ + nu_; ++i)
        for (int j = 0; j <= i; ++j)
          if (H(i, j) != 0.0) out.emplace_back(to_input(i), to_input(j), -H(i, j));
    }
  }

 private:
  void check_sizes(std::size_t y_size, std::size_t other) const {
    if (y_size != static_cast<std::size_t>(num_inputs()))
      throw std::invalid_argument("external block input size mismatch");
    if (other > static_cast<std::size_t>(num_outputs()))
      throw std::invalid_argument("external block output size mismatch");
  }

  void gather(std::span<const double> y) {
    states_.resize(n_, horizon_);
    controls_.resize(nu_, horizon_);
    const int ubase = (horizon_ + 1) * n_;
    for (int k = 0; k < horizon_; ++k) {
      for (int i = 0; i < n_; ++i) states_(i, k) = y[static_cast<std::size_t>(k * n_ + i)];
      for (int l = 0; l < nu_; ++l)
        controls_(l, k) = y[static_cast<std::size_t>(ubase + k * nu_ + l)];
    }
  }

  NetworkSpec spec_;
  std::shared_ptr<const NetworkParams> params_;
  int horizon_ = 0, n_ = 0, nu_ = 0;
  Eigen::MatrixXd states_, controls_, out_;
};

}  // namespace

std::shared_ptr<GreyBoxBlock> make_efe_block(const NetworkSpec& spec,
                                             std::shared_ptr<const NetworkParams> params,
                                             int horizon) {
  return std::make_shared<SurrogateHorizonBlock>(spec, std::move(params), horizon);
}

EmbeddedStep attach_efe(NlpProblem& problem, const TranscribedSystem& ts,
                        const NetworkSpec& spec,
                        std::shared_ptr<const NetworkParams> params) {
  if (spec.n_x != ts.n_x || spec.n_fe != ts.n_fe || spec.n_u != ts.n_u)
    throw std::invalid_argument("network dimensions do not match the transcribed layout");

  GreyBoxAttachment attachment;
  attachment.block = make_efe_block(spec, params, ts.horizon);
  attachment.var_map.resize(static_cast<std::size_t>(attachment.block->num_inputs()));
  const int n = ts.n_x * ts.n_fe;
  for (int k = 0; k <= ts.horizon; ++k)
    for (int i = 0; i < n; ++i)
      attachment.var_map[static_cast<std::size_t>(k * n + i)] = ts.var0 + k * n + i;
  const int ubase = (ts.horizon + 1) * n;
  for (int k = 0; k < ts.horizon; ++k)
    for (int l = 0; l < ts.n_u; ++l)
      attachment.var_map[static_cast<std::size_t>(ubase + k * ts.n_u + l)] =
          ts.control_var(k, l);
  problem.blocks.push_back(std::move(attachment));

  EmbeddedStep step;
  step.kind = EmbeddingKind::kExternal;
  step.spec = spec;
  step.params = std::move(params);
  step.block = static_cast<int>(problem.blocks.size()) - 1;
  return step;
}

void initialize_aux(const EmbeddedStep& step, std::span<double> x) {
  if (step.kind != EmbeddingKind::kFullSpace) return;  // nothing lifted elsewhere
  const auto n = step.in_vars.size();
  Eigen::VectorXd xin(static_cast<Eigen::Index>(n)), uin(step.control_vars.size());
  for (std::size_t i = 0; i < n; ++i)
    xin[static_cast<Eigen::Index>(i)] = x[static_cast<std::size_t>(step.in_vars[i])];
  for (std::size_t l = 0; l < step.control_vars.size(); ++l)
    uin[static_cast<Eigen::Index>(l)] = x[static_cast<std::size_t>(step.control_vars[l])];

  ForwardTrace trace;
  (void)nn_forward_batch(step.spec, *step.params, xin, uin, &trace);
  for (std::size_t li = 0; li < step.lifted_layers.size(); ++li) {
    const auto layer = static_cast<std::size_t>(step.lifted_layers[li]);
    for (std::size_t p = 0; p < step.aux_pre[li].size(); ++p) {
      x[static_cast<std::size_t>(step.aux_pre[li][p])] =
          trace.pre[layer](static_cast<Eigen::Index>(p), 0);
      x[static_cast<std::size_t>(step.aux_act[li][p])] =
          trace.a[layer + 1](static_cast<Eigen::Index>(p), 0);
    }
  }
}

}  // namespace nnmpc
