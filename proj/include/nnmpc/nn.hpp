#pragma once

// Dense and 1-D convolutional one-step surrogate networks over spatial
// profiles, with the exact derivative machinery the optimization layers need:
// full input Jacobians (reverse sweeps, one output row at a time), parameter
// gradients for training, and multiplier-weighted input Hessians via a tangent
// carried through the reverse sweep.
//
// Profile convention everywhere: a profile with n_x state variables on n_fe
// spatial nodes is flattened state-major, entry s*n_fe + v for state s at node
// v. Channel-form inputs put each state in its own channel followed by one
// channel per control, the control value replicated across all nodes.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nnmpc {

class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation : std::uint8_t { kLinear, kTanh, kSigmoid, kSoftplus };

const char* activation_name(Activation a);
double act_value(Activation a, double z);
double act_deriv(Activation a, double z);   // sigma'(z)
double act_second(Activation a, double z);  // sigma''(z)

inline int conv1d_out_length(int n_in, int kernel) { return n_in - kernel + 1; }

struct LayerSpec {
  enum class Kind : std::uint8_t { kDense, kConv1d, kFlatten, kReshape };

  Kind kind = Kind::kDense;
  Activation act = Activation::kLinear;
  struct {
    int in = 0, out = 0;
  } dense;
  struct {
    int in_channels = 0, out_channels = 0, kernel = 0;  // stride 1, no padding
  } conv;
  struct {
    int channels = 0, length = 0;
  } reshape;

  static LayerSpec Dense(int in, int out, Activation a);
  static LayerSpec Conv(int in_channels, int out_channels, int kernel, Activation a);
  static LayerSpec Flatten();
  static LayerSpec Reshape(int channels, int length);
  bool parametric() const { return kind == Kind::kDense || kind == Kind::kConv1d; }
};

enum class InputLayout : std::uint8_t { kFlat, kChannels };

struct NetworkSpec {
  InputLayout layout = InputLayout::kFlat;
  int n_x = 0;   // state variables per node
  int n_fe = 0;  // spatial nodes
  int n_u = 0;   // controls
  std::vector<LayerSpec> layers;

  struct Shape {
    int channels = 0, length = 0;
    int units() const { return channels * length; }
  };

  int input_units() const;
  int output_units() const { return n_x * n_fe; }
  // Shape at every layer boundary, shapes()[0] being the input. Does not
  // validate; entries after an inconsistent layer are mechanical.
  std::vector<Shape> shapes() const;
  void validate() const;             // throws SpecError naming the first bad layer
  std::uint64_t digest() const;      // stable across runs/processes
  std::string describe() const;      // canonical one-line description
};

struct NetworkParams {
  struct Layer {
    // Dense: out x in. Conv1d: out_channels x (in_channels * kernel), row c,
    // column ci*kernel + t. Empty for flatten/reshape.
    Eigen::MatrixXd W;
    Eigen::VectorXd b;
  };
  std::vector<Layer> layers;
  std::size_t scalar_count() const;
};

// Input/output affine scaling baked into the first and last parametric layer,
// so a stored network maps raw problem units directly. The trainer keeps its
// working parameters in normalized coordinates (where uniform optimizer steps
// make sense across channels of very different physical scale) and bakes the
// scaling in once before returning them.
struct IoScaling {
  Eigen::VectorXd state_mid, state_halfwidth;      // per state variable
  Eigen::VectorXd control_mid, control_halfwidth;  // per control
  static IoScaling identity(int n_x, int n_u);
  static IoScaling from_bounds(const Eigen::VectorXd& state_lower, const Eigen::VectorXd& state_upper,
                               const Eigen::VectorXd& control_lower, const Eigen::VectorXd& control_upper);
};

// Rewrites the first parametric layer to act on (input - mid)/halfwidth and
// the last one to emit halfwidth * output + mid. Exact for the identity
// scaling; apply at most once per parameter set.
void fold_io_scaling(const NetworkSpec& spec, const IoScaling& scaling, NetworkParams& params);

// Fan-in uniform initialization, U(-sqrt(1/n_in), +sqrt(1/n_in)) per layer in
// normalized coordinates, with the given scaling folded in, reproducible for
// a given seed.
NetworkParams init_params(const NetworkSpec& spec, const IoScaling& scaling, std::uint64_t seed);

// Stacks profile and controls into the network's input units.
Eigen::VectorXd assemble_input(const NetworkSpec& spec, const Eigen::VectorXd& x_flat,
                               const Eigen::VectorXd& u);

Eigen::VectorXd flatten_profile(const Eigen::MatrixXd& profile);  // n_x x n_fe
Eigen::MatrixXd unflatten_profile(const Eigen::VectorXd& flat, int n_x, int n_fe);

// Captured per-layer activations from a forward pass, consumed by the
// derivative routines.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> a;    // a[0] = input units, a[l+1] = layer l output
  std::vector<Eigen::MatrixXd> pre;  // pre-activations; empty for flatten/reshape
};

// Batched forward pass; columns are independent samples. Column j of the
// result is bitwise identical to a single-sample evaluation of column j
// (products are applied per column).
Eigen::MatrixXd nn_forward_batch(const NetworkSpec& spec, const NetworkParams& params,
                                 const Eigen::MatrixXd& X, const Eigen::MatrixXd& U,
                                 ForwardTrace* trace = nullptr);

Eigen::VectorXd nn_forward(const NetworkSpec& spec, const NetworkParams& params,
                           const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u);

// d output / d [x_flat; u], shape (n_x*n_fe) x (n_x*n_fe + n_u).
Eigen::MatrixXd nn_input_jacobian(const NetworkSpec& spec, const NetworkParams& params,
                                  const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u);

// Gradient of sum_j ybar_j . NN(x_j, u_j) with respect to the parameters,
// accumulated over the batch in column order.
NetworkParams nn_param_gradient(const NetworkSpec& spec, const NetworkParams& params,
                                const Eigen::MatrixXd& X, const Eigen::MatrixXd& U,
                                const Eigen::MatrixXd& Ybar);

// Exact Hessian of lambda . NN(x, u) with respect to [x_flat; u].
Eigen::MatrixXd nn_weighted_hessian(const NetworkSpec& spec, const NetworkParams& params,
                                    const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u,
                                    const Eigen::VectorXd& lambda);

// Central finite difference of the weighted input gradient, step 1e-5. Kept as
// an independent cross-check of the exact path.
Eigen::MatrixXd nn_weighted_hessian_fd(const NetworkSpec& spec, const NetworkParams& params,
                                       const Eigen::VectorXd& x_flat, const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& lambda);

// Benchmark architecture factories. The dense variant: `hidden` tanh layers of
// `width` units over the flat input. The convolutional variant: `conv_layers`
// tanh convolutions of `channels` kernels (size `kernel`), then a linear
// readout back to the profile.
NetworkSpec make_pinn_spec(int n_x, int n_fe, int n_u, int hidden = 6, int width = 24);
NetworkSpec make_picnn_spec(int n_x, int n_fe, int n_u, int conv_layers = 2, int channels = 32,
                            int kernel = 4);

}  // namespace nnmpc
