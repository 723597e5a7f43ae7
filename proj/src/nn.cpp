#include "nnmpc/nn.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace nnmpc {

namespace {

// FNV-1a, 64 bit.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftplus: return "softplus";
  }
  return "?";
}

double act_value(Activation a, double z) {
  switch (a) {
    case Activation::kLinear: return z;
    case Activation::kTanh: return std::tanh(z);
    case Activation::kSigmoid: return sigmoid(z);
    case Activation::kSoftplus: return (z > 30.0) ? z : std::log1p(std::exp(z));
  }
  return z;
}

double act_deriv(Activation a, double z) {
  switch (a) {
    case Activation::kLinear: return 1.0;
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::kSigmoid: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case Activation::kSoftplus: return sigmoid(z);
  }
  return 1.0;
}

double act_second(Activation a, double z) {
  switch (a) {
    case Activation::kLinear: return 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::kSigmoid: {
      const double s = sigmoid(z);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case Activation::kSoftplus: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
  }
  return 0.0;
}

LayerSpec LayerSpec::Dense(int in, int out, Activation a) {
  LayerSpec l;
  l.kind = Kind::kDense;
  l.act = a;
  l.dense.in = in;
  l.dense.out = out;
  return l;
}

LayerSpec LayerSpec::Conv(int in_channels, int out_channels, int kernel, Activation a) {
  LayerSpec l;
  l.kind = Kind::kConv1d;
  l.act = a;
  l.conv.in_channels = in_channels;
  l.conv.out_channels = out_channels;
  l.conv.kernel = kernel;
  return l;
}

LayerSpec LayerSpec::Flatten() {
  LayerSpec l;
  l.kind = Kind::kFlatten;
  return l;
}

LayerSpec LayerSpec::Reshape(int channels, int length) {
  LayerSpec l;
  l.kind = Kind::kReshape;
  l.reshape.channels = channels;
  l.reshape.length = length;
  return l;
}

int NetworkSpec::input_units() const {
  return (layout == InputLayout::kFlat) ? n_x * n_fe + n_u : (n_x + n_u) * n_fe;
}

std::vector<NetworkSpec::Shape> NetworkSpec::shapes() const {
  std::vector<Shape> out;
  out.reserve(layers.size() + 1);
  Shape cur = (layout == InputLayout::kFlat) ? Shape{n_x * n_fe + n_u, 1}
                                             : Shape{n_x + n_u, n_fe};
  out.push_back(cur);
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerSpec::Kind::kDense:
        cur = Shape{l.dense.out, 1};
        break;
      case LayerSpec::Kind::kConv1d:
        cur = Shape{l.conv.out_channels, conv1d_out_length(cur.length, l.conv.kernel)};
        break;
      case LayerSpec::Kind::kFlatten:
        cur = Shape{cur.units(), 1};
        break;
      case LayerSpec::Kind::kReshape:
        cur = Shape{l.reshape.channels, l.reshape.length};
        break;
    }
    out.push_back(cur);
  }
  return out;
}

void NetworkSpec::validate() const {
  if (n_x < 1 || n_fe < 1 || n_u < 0) throw SpecError("network dimensions must satisfy n_x>=1, n_fe>=1, n_u>=0");
  if (layers.empty()) throw SpecError("network needs at least one layer");
  const auto sh = shapes();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const Shape& in = sh[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    switch (l.kind) {
      case LayerSpec::Kind::kDense:
        if (in.length != 1) throw SpecError(where + "dense layer requires a flat input");
        if (l.dense.in != in.units())
          throw SpecError(where + "dense input width " + std::to_string(l.dense.in) +
                          " does not match incoming " + std::to_string(in.units()));
        if (l.dense.out < 1) throw SpecError(where + "dense output width must be positive");
        break;
      case LayerSpec::Kind::kConv1d:
        if (l.conv.in_channels != in.channels)
          throw SpecError(where + "conv input channels " + std::to_string(l.conv.in_channels) +
                          " do not match incoming " + std::to_string(in.channels));
        if (l.conv.kernel < 1 || l.conv.out_channels < 1)
          throw SpecError(where + "conv kernel and channel counts must be positive");
        if (in.length < l.conv.kernel)
          throw SpecError(where + "conv kernel " + std::to_string(l.conv.kernel) +
                          " exceeds incoming length " + std::to_string(in.length));
        break;
      case LayerSpec::Kind::kFlatten:
        break;
      case LayerSpec::Kind::kReshape:
        if (l.reshape.channels * l.reshape.length != in.units())
          throw SpecError(where + "reshape does not preserve unit count");
        break;
    }
  }
  if (sh.back().units() != output_units())
    throw SpecError("network output has " + std::to_string(sh.back().units()) +
                    " units, expected " + std::to_string(output_units()));
}

std::string NetworkSpec::describe() const {
  std::ostringstream os;
  os << "layout=" << (layout == InputLayout::kFlat ? "flat" : "channels") << ";nx=" << n_x
     << ";nfe=" << n_fe << ";nu=" << n_u;
  for (const LayerSpec& l : layers) {
    os << ";";
    switch (l.kind) {
      case LayerSpec::Kind::kDense:
        os << "dense(" << l.dense.in << "," << l.dense.out << "," << activation_name(l.act) << ")";
        break;
      case LayerSpec::Kind::kConv1d:
        os << "conv(" << l.conv.in_channels << "," << l.conv.out_channels << "," << l.conv.kernel
           << "," << activation_name(l.act) << ")";
        break;
      case LayerSpec::Kind::kFlatten:
        os << "flatten";
        break;
      case LayerSpec::Kind::kReshape:
        os << "reshape(" << l.reshape.channels << "," << l.reshape.length << ")";
        break;
    }
  }
  return os.str();
}

std::uint64_t NetworkSpec::digest() const { return fnv1a(describe()); }

std::size_t NetworkParams::scalar_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += static_cast<std::size_t>(l.W.size()) + static_cast<std::size_t>(l.b.size());
  return n;
}

IoScaling IoScaling::identity(int n_x, int n_u) {
  IoScaling s;
  s.state_mid = Eigen::VectorXd::Zero(n_x);
  s.state_halfwidth = Eigen::VectorXd::Ones(n_x);
  s.control_mid = Eigen::VectorXd::Zero(n_u);
  s.control_halfwidth = Eigen::VectorXd::Ones(n_u);
  return s;
}

IoScaling IoScaling::from_bounds(const Eigen::VectorXd& sl, const Eigen::VectorXd& su,
                                 const Eigen::VectorXd& cl, const Eigen::VectorXd& cu) {
  IoScaling s;
  s.state_mid = 0.5 * (sl + su);
  s.state_halfwidth = (0.5 * (su - sl)).cwiseMax(1e-12);
  s.control_mid = 0.5 * (cl + cu);
  s.control_halfwidth = (0.5 * (cu - cl)).cwiseMax(1e-12);
  return s;
}

namespace {

// Per-input-unit scaling vectors for the first layer of either layout.
void input_unit_scaling(const NetworkSpec& spec, const IoScaling& sc, Eigen::VectorXd& mid,
                        Eigen::VectorXd& hw) {
  const int units = spec.input_units();
  mid.resize(units);
  hw.resize(units);
  if (spec.layout == InputLayout::kFlat) {
    for (int s = 0; s < spec.n_x; ++s)
      for (int v = 0; v < spec.n_fe; ++v) {
        mid[s * spec.n_fe + v] = sc.state_mid[s];
        hw[s * spec.n_fe + v] = sc.state_halfwidth[s];
      }
    for (int l = 0; l < spec.n_u; ++l) {
      mid[spec.n_x * spec.n_fe + l] = sc.control_mid[l];
      hw[spec.n_x * spec.n_fe + l] = sc.control_halfwidth[l];
    }
  } else {
    for (int c = 0; c < spec.n_x + spec.n_u; ++c) {
      const double m = (c < spec.n_x) ? sc.state_mid[c] : sc.control_mid[c - spec.n_x];
      const double h = (c < spec.n_x) ? sc.state_halfwidth[c] : sc.control_halfwidth[c - spec.n_x];
      for (int v = 0; v < spec.n_fe; ++v) {
        mid[c * spec.n_fe + v] = m;
        hw[c * spec.n_fe + v] = h;
      }
    }
  }
}

// Per-channel scaling for conv first layers.
void input_channel_scaling(const NetworkSpec& spec, const IoScaling& sc, Eigen::VectorXd& mid,
                           Eigen::VectorXd& hw) {
  const int ch = spec.n_x + spec.n_u;
  mid.resize(ch);
  hw.resize(ch);
  for (int c = 0; c < ch; ++c) {
    mid[c] = (c < spec.n_x) ? sc.state_mid[c] : sc.control_mid[c - spec.n_x];
    hw[c] = (c < spec.n_x) ? sc.state_halfwidth[c] : sc.control_halfwidth[c - spec.n_x];
  }
}

}  // namespace

void fold_io_scaling(const NetworkSpec& spec, const IoScaling& scaling, NetworkParams& p) {
  int first_param = -1, last_param = -1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].parametric()) {
      if (first_param < 0) first_param = static_cast<int>(i);
      last_param = static_cast<int>(i);
    }
  }

  // Fold input normalization into the first parametric layer: the stored
  // weights act on (x - mid)/halfwidth.
  if (first_param >= 0) {
    auto& L = p.layers[static_cast<std::size_t>(first_param)];
    const LayerSpec& ls = spec.layers[static_cast<std::size_t>(first_param)];
    if (ls.kind == LayerSpec::Kind::kDense) {
      Eigen::VectorXd mid, hw;
      input_unit_scaling(spec, scaling, mid, hw);
      for (int c = 0; c < L.W.cols(); ++c) L.W.col(c) /= hw[c];
      L.b -= L.W * mid;
    } else {
      Eigen::VectorXd mid, hw;
      input_channel_scaling(spec, scaling, mid, hw);
      const int K = ls.conv.kernel;
      for (int ci = 0; ci < ls.conv.in_channels; ++ci)
        for (int t = 0; t < K; ++t) L.W.col(ci * K + t) /= hw[ci];
      for (int r = 0; r < L.W.rows(); ++r) {
        double shift = 0.0;
        for (int ci = 0; ci < ls.conv.in_channels; ++ci)
          for (int t = 0; t < K; ++t) shift += L.W(r, ci * K + t) * mid[ci];
        L.b[r] -= shift;
      }
    }
  }

  // Fold output denormalization into the last parametric layer: raw output is
  // halfwidth * normalized + mid per state variable.
  if (last_param >= 0) {
    auto& L = p.layers[static_cast<std::size_t>(last_param)];
    const LayerSpec& ls = spec.layers[static_cast<std::size_t>(last_param)];
    if (ls.kind == LayerSpec::Kind::kDense && ls.dense.out == spec.n_x * spec.n_fe) {
      for (int s = 0; s < spec.n_x; ++s) {
        const double h = scaling.state_halfwidth[s];
        const double m = scaling.state_mid[s];
        for (int v = 0; v < spec.n_fe; ++v) {
          const int r = s * spec.n_fe + v;
          L.W.row(r) *= h;
          L.b[r] = h * L.b[r] + m;
        }
      }
    } else if (ls.kind == LayerSpec::Kind::kConv1d && ls.conv.out_channels == spec.n_x) {
      for (int s = 0; s < spec.n_x; ++s) {
        L.W.row(s) *= scaling.state_halfwidth[s];
        L.b[s] = scaling.state_halfwidth[s] * L.b[s] + scaling.state_mid[s];
      }
    }
  }
}

NetworkParams init_params(const NetworkSpec& spec, const IoScaling& scaling, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkParams p;
  p.layers.resize(spec.layers.size());

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    auto& dst = p.layers[i];
    if (!l.parametric()) continue;
    const int rows = (l.kind == LayerSpec::Kind::kDense) ? l.dense.out : l.conv.out_channels;
    const int cols = (l.kind == LayerSpec::Kind::kDense) ? l.dense.in
                                                         : l.conv.in_channels * l.conv.kernel;
    const double bound = std::sqrt(1.0 / cols);
    std::uniform_real_distribution<double> uni(-bound, bound);
    dst.W.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) dst.W(r, c) = uni(rng);
    dst.b.resize(rows);
    for (int r = 0; r < rows; ++r) dst.b[r] = uni(rng);
  }

  fold_io_scaling(spec, scaling, p);
  return p;
}

Eigen::VectorXd assemble_input(const NetworkSpec& spec, const Eigen::VectorXd& x_flat,
                               const Eigen::VectorXd& u) {
  const int n = spec.n_x * spec.n_fe;
  if (x_flat.size() != n) throw NnError("assemble_input: profile length mismatch");
  if (u.size() != spec.n_u) throw NnError("assemble_input: control length mismatch");
  Eigen::VectorXd in(spec.input_units());
  if (spec.layout == InputLayout::kFlat) {
    in.head(n) = x_flat;
    in.tail(spec.n_u) = u;
  } else {
    in.head(n) = x_flat;
    for (int l = 0; l < spec.n_u; ++l)
      in.segment(n + l * spec.n_fe, spec.n_fe).setConstant(u[l]);
  }
  return in;
}

Eigen::VectorXd flatten_profile(const Eigen::MatrixXd& profile) {
  Eigen::VectorXd flat(profile.size());
  for (int s = 0; s < profile.rows(); ++s)
    flat.segment(s * profile.cols(), profile.cols()) = profile.row(s).transpose();
  return flat;
}

Eigen::MatrixXd unflatten_profile(const Eigen::VectorXd& flat, int n_x, int n_fe) {
  if (flat.size() != n_x * n_fe) throw NnError("unflatten_profile: size mismatch");
  Eigen::MatrixXd profile(n_x, n_fe);
  for (int s = 0; s < n_x; ++s) profile.row(s) = flat.segment(s * n_fe, n_fe).transpose();
  return profile;
}

namespace {

// y = W_layer(x) without bias, applied per column so batched results do not
// depend on batch width.
Eigen::MatrixXd linear_apply(const LayerSpec& l, const NetworkParams::Layer& P, int in_length,
                             const Eigen::MatrixXd& A) {
  if (l.kind == LayerSpec::Kind::kDense) {
    Eigen::MatrixXd out(P.W.rows(), A.cols());
    for (Eigen::Index j = 0; j < A.cols(); ++j) out.col(j).noalias() = P.W * A.col(j);
    return out;
  }
  const int K = l.conv.kernel;
  const int Lout = conv1d_out_length(in_length, K);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(l.conv.out_channels) * Lout, A.cols());
  for (int c = 0; c < l.conv.out_channels; ++c)
    for (int ci = 0; ci < l.conv.in_channels; ++ci)
      for (int t = 0; t < K; ++t) {
        const double w = P.W(c, ci * K + t);
        if (w == 0.0) continue;
        for (int v = 0; v < Lout; ++v)
          out.row(static_cast<Eigen::Index>(c) * Lout + v) += w * A.row(static_cast<Eigen::Index>(ci) * in_length + v + t);
      }
  return out;
}

// x = W_layer^T(y): adjoint/transpose of linear_apply.
Eigen::MatrixXd linear_apply_transpose(const LayerSpec& l, const NetworkParams::Layer& P,
                                       int in_length, const Eigen::MatrixXd& A) {
  if (l.kind == LayerSpec::Kind::kDense) {
    Eigen::MatrixXd out(P.W.cols(), A.cols());
    for (Eigen::Index j = 0; j < A.cols(); ++j) out.col(j).noalias() = P.W.transpose() * A.col(j);
    return out;
  }
  const int K = l.conv.kernel;
  const int Lout = conv1d_out_length(in_length, K);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(l.conv.in_channels) * in_length, A.cols());
  for (int c = 0; c < l.conv.out_channels; ++c)
    for (int ci = 0; ci < l.conv.in_channels; ++ci)
      for (int t = 0; t < K; ++t) {
        const double w = P.W(c, ci * K + t);
        if (w == 0.0) continue;
        for (int v = 0; v < Lout; ++v)
          out.row(static_cast<Eigen::Index>(ci) * in_length + v + t) += w * A.row(static_cast<Eigen::Index>(c) * Lout + v);
      }
  return out;
}

Eigen::VectorXd act_deriv_vec(Activation a, const Eigen::MatrixXd& pre) {
  Eigen::VectorXd d(pre.rows());
  for (Eigen::Index i = 0; i < pre.rows(); ++i) d[i] = act_deriv(a, pre(i, 0));
  return d;
}

}  // namespace

Eigen::MatrixXd nn_forward_batch(const NetworkSpec& spec, const NetworkParams& params,
                                 const Eigen::MatrixXd& X, const Eigen::MatrixXd& U,
                                 ForwardTrace* trace) {
  if (params.layers.size() != spec.layers.size())
    throw NnError("forward: parameter layer count does not match the spec");
  const int n = spec.n_x * spec.n_fe;
  if (X.rows() != n || U.rows() != spec.n_u || X.cols() != U.cols())
    throw NnError("forward: batch shape mismatch");

  const Eigen::Index B = X.cols();
  Eigen::MatrixXd A(spec.input_units(), B);
  if (spec.layout == InputLayout::kFlat) {
    A.topRows(n) = X;
    A.bottomRows(spec.n_u) = U;
  } else {
    A.topRows(n) = X;
    for (int l = 0; l < spec.n_u; ++l)
      for (int v = 0; v < spec.n_fe; ++v) A.row(n + static_cast<Eigen::Index>(l) * spec.n_fe + v) = U.row(l);
  }

  if (trace) {
    trace->a.assign(1, A);
    trace->pre.assign(spec.layers.size(), Eigen::MatrixXd());
  }

  const auto sh = spec.shapes();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.parametric()) {
      Eigen::MatrixXd pre = linear_apply(l, params.layers[i], sh[i].length, A);
      if (l.kind == LayerSpec::Kind::kDense) {
        pre.colwise() += params.layers[i].b;
      } else {
        const int Lout = sh[i + 1].length;
        for (int c = 0; c < l.conv.out_channels; ++c)
          pre.middleRows(static_cast<Eigen::Index>(c) * Lout, Lout).array() += params.layers[i].b[c];
      }
      if (trace) trace->pre[i] = pre;
      if (l.act == Activation::kLinear) {
        A = std::move(pre);
      } else {
        A = pre.unaryExpr([&](double z) { return act_value(l.act, z); });
      }
    }
    // flatten/reshape only relabel unit indices; data order is unchanged
    if (trace) trace->a.push_back(A);
  }
  return A;
}

Eigen::VectorXd nn_forward(const NetworkSpec& spec, const NetworkParams& params,
                           const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u) {
  return nn_forward_batch(spec, params, x_flat, u);
}

Eigen::MatrixXd nn_input_jacobian(const NetworkSpec& spec, const NetworkParams& params,
                                  const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u) {
  const int n = spec.n_x * spec.n_fe;
  ForwardTrace tr;
  (void)nn_forward_batch(spec, params, x_flat, u, &tr);

  const auto sh = spec.shapes();
  // Reverse sweep with one adjoint column per output row.
  Eigen::MatrixXd G = Eigen::MatrixXd::Identity(n, n);
  for (int i = static_cast<int>(spec.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
    if (!l.parametric()) continue;
    if (l.act != Activation::kLinear) {
      const Eigen::VectorXd d = act_deriv_vec(l.act, tr.pre[static_cast<std::size_t>(i)]);
      G.array().colwise() *= d.array();
    }
    G = linear_apply_transpose(l, params.layers[static_cast<std::size_t>(i)], sh[static_cast<std::size_t>(i)].length, G);
  }

  // G now holds d output_j / d input_unit_i at (i, j); fold replicated control
  // channels back to the canonical [x_flat; u] coordinates.
  Eigen::MatrixXd J(n, n + spec.n_u);
  J.leftCols(n) = G.topRows(n).transpose();
  if (spec.layout == InputLayout::kFlat) {
    J.rightCols(spec.n_u) = G.bottomRows(spec.n_u).transpose();
  } else {
    for (int l = 0; l < spec.n_u; ++l) {
      Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
      for (int v = 0; v < spec.n_fe; ++v)
        col += G.row(n + static_cast<Eigen::Index>(l) * spec.n_fe + v).transpose();
      J.col(n + l) = col;
    }
  }
  return J;
}

NetworkParams nn_param_gradient(const NetworkSpec& spec, const NetworkParams& params,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& U,
                                const Eigen::MatrixXd& Ybar) {
  ForwardTrace tr;
  (void)nn_forward_batch(spec, params, X, U, &tr);
  const auto sh = spec.shapes();

  NetworkParams g;
  g.layers.resize(spec.layers.size());
  Eigen::MatrixXd A = Ybar;
  for (int i = static_cast<int>(spec.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
    if (!l.parametric()) continue;
    const std::size_t li = static_cast<std::size_t>(i);
    Eigen::MatrixXd D = A;
    if (l.act != Activation::kLinear) {
      D.array() *= tr.pre[li].unaryExpr([&](double z) { return act_deriv(l.act, z); }).array();
    }
    const Eigen::MatrixXd& a_prev = tr.a[li];
    if (l.kind == LayerSpec::Kind::kDense) {
      g.layers[li].W.noalias() = D * a_prev.transpose();
      g.layers[li].b = D.rowwise().sum();
    } else {
      const int K = l.conv.kernel;
      const int Lin = sh[li].length;
      const int Lout = sh[li + 1].length;
      g.layers[li].W = Eigen::MatrixXd::Zero(l.conv.out_channels, l.conv.in_channels * K);
      g.layers[li].b = Eigen::VectorXd::Zero(l.conv.out_channels);
      for (int c = 0; c < l.conv.out_channels; ++c) {
        for (int v = 0; v < Lout; ++v)
          g.layers[li].b[c] += D.row(static_cast<Eigen::Index>(c) * Lout + v).sum();
        for (int ci = 0; ci < l.conv.in_channels; ++ci)
          for (int t = 0; t < K; ++t) {
            double acc = 0.0;
            for (int v = 0; v < Lout; ++v)
              acc += D.row(static_cast<Eigen::Index>(c) * Lout + v)
                         .dot(a_prev.row(static_cast<Eigen::Index>(ci) * Lin + v + t));
            g.layers[li].W(c, ci * K + t) = acc;
          }
      }
    }
    A = linear_apply_transpose(l, params.layers[li], sh[li].length, D);
  }
  return g;
}

namespace {

// Tangent seed matrix mapping canonical directions [x_flat; u] to input units.
Eigen::MatrixXd tangent_seed(const NetworkSpec& spec) {
  const int n = spec.n_x * spec.n_fe;
  const int nd = n + spec.n_u;
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(spec.input_units(), nd);
  T.topLeftCorner(n, n).setIdentity();
  if (spec.layout == InputLayout::kFlat) {
    T.bottomRightCorner(spec.n_u, spec.n_u).setIdentity();
  } else {
    for (int l = 0; l < spec.n_u; ++l)
      for (int v = 0; v < spec.n_fe; ++v)
        T(n + static_cast<Eigen::Index>(l) * spec.n_fe + v, n + l) = 1.0;
  }
  return T;
}

}  // namespace

Eigen::MatrixXd nn_weighted_hessian(const NetworkSpec& spec, const NetworkParams& params,
                                    const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u,
                                    const Eigen::VectorXd& lambda) {
  const int n = spec.n_x * spec.n_fe;
  if (lambda.size() != n) throw NnError("weighted_hessian: lambda length mismatch");
  ForwardTrace tr;
  (void)nn_forward_batch(spec, params, x_flat, u, &tr);
  const auto sh = spec.shapes();
  const int nd = n + spec.n_u;

  // Forward tangent sweep over all canonical directions at once.
  std::vector<Eigen::MatrixXd> Tpre(spec.layers.size());
  Eigen::MatrixXd T = tangent_seed(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.parametric()) continue;
    Tpre[i] = linear_apply(l, params.layers[i], sh[i].length, T);
    T = Tpre[i];
    if (l.act != Activation::kLinear) {
      const Eigen::VectorXd d = act_deriv_vec(l.act, tr.pre[i]);
      T.array().colwise() *= d.array();
    }
  }

  // Reverse dual sweep: adj is the plain adjoint, adj_dot its tangent.
  Eigen::MatrixXd adj = lambda;
  Eigen::MatrixXd adj_dot = Eigen::MatrixXd::Zero(n, nd);
  for (int i = static_cast<int>(spec.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
    if (!l.parametric()) continue;
    const std::size_t li = static_cast<std::size_t>(i);
    if (l.act != Activation::kLinear) {
      Eigen::VectorXd d1(tr.pre[li].rows()), d2(tr.pre[li].rows());
      for (Eigen::Index r = 0; r < tr.pre[li].rows(); ++r) {
        d1[r] = act_deriv(l.act, tr.pre[li](r, 0));
        d2[r] = act_second(l.act, tr.pre[li](r, 0));
      }
      adj_dot.array().colwise() *= d1.array();
      adj_dot += (adj.col(0).cwiseProduct(d2)).asDiagonal() * Tpre[li];
      adj = adj.col(0).cwiseProduct(d1);
    }
    adj = linear_apply_transpose(l, params.layers[li], sh[li].length, adj);
    adj_dot = linear_apply_transpose(l, params.layers[li], sh[li].length, adj_dot);
  }

  // Fold input-unit rows back to canonical coordinates.
  Eigen::MatrixXd H(nd, nd);
  H.topRows(n) = adj_dot.topRows(n);
  if (spec.layout == InputLayout::kFlat) {
    H.bottomRows(spec.n_u) = adj_dot.bottomRows(spec.n_u);
  } else {
    for (int l = 0; l < spec.n_u; ++l) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nd);
      for (int v = 0; v < spec.n_fe; ++v)
        row += adj_dot.row(n + static_cast<Eigen::Index>(l) * spec.n_fe + v);
      H.row(n + l) = row;
    }
  }
  return H;
}

Eigen::MatrixXd nn_weighted_hessian_fd(const NetworkSpec& spec, const NetworkParams& params,
                                       const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& lambda) {
  const int n = spec.n_x * spec.n_fe;
  const int nd = n + spec.n_u;
  const double h = 1e-5;
  auto grad_at = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    const Eigen::VectorXd x = z.head(n);
    const Eigen::VectorXd uu = z.tail(spec.n_u);
    return nn_input_jacobian(spec, params, x, uu).transpose() * lambda;
  };
  Eigen::VectorXd z(nd);
  z << x_flat, u;
  Eigen::MatrixXd H(nd, nd);
  for (int j = 0; j < nd; ++j) {
    Eigen::VectorXd zp = z, zm = z;
    zp[j] += h;
    zm[j] -= h;
    H.col(j) = (grad_at(zp) - grad_at(zm)) / (2 * h);
  }
  return H;
}

NetworkSpec make_pinn_spec(int n_x, int n_fe, int n_u, int hidden, int width) {
  NetworkSpec s;
  s.layout = InputLayout::kFlat;
  s.n_x = n_x;
  s.n_fe = n_fe;
  s.n_u = n_u;
  int in = s.input_units();
  for (int i = 0; i < hidden; ++i) {
    s.layers.push_back(LayerSpec::Dense(in, width, Activation::kTanh));
    in = width;
  }
  s.layers.push_back(LayerSpec::Dense(in, n_x * n_fe, Activation::kLinear));
  s.validate();
  return s;
}

NetworkSpec make_picnn_spec(int n_x, int n_fe, int n_u, int conv_layers, int channels, int kernel) {
  NetworkSpec s;
  s.layout = InputLayout::kChannels;
  s.n_x = n_x;
  s.n_fe = n_fe;
  s.n_u = n_u;
  int ch = n_x + n_u;
  int len = n_fe;
  for (int i = 0; i < conv_layers; ++i) {
    s.layers.push_back(LayerSpec::Conv(ch, channels, kernel, Activation::kTanh));
    ch = channels;
    len = conv1d_out_length(len, kernel);
  }
  s.layers.push_back(LayerSpec::Flatten());
  s.layers.push_back(LayerSpec::Dense(ch * len, n_x * n_fe, Activation::kLinear));
  s.layers.push_back(LayerSpec::Reshape(n_x, n_fe));
  s.validate();
  return s;
}

}  // namespace nnmpc
