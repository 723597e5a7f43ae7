#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nnmpc/expr.hpp"
#include "nnmpc/nn.hpp"
#include "nnmpc/plant.hpp"

namespace nnmpc {

// Deterministic sub-stream seeds: one master seed fans out to named streams
// (sampling, test split, initialization, shuffling) without collisions.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

// Per-state input/output normalization from the plant's bound boxes.
IoScaling io_scaling_for(const Plant& plant);

// Column j of `states` is one flattened profile sample, column j of
// `controls` the matching control vector.
struct SampleSet {
  Eigen::MatrixXd states;
  Eigen::MatrixXd controls;
  std::uint64_t seed = 0;
};

// Pointwise envelope [lo, hi] of steady profiles, n_x rows by n_fe columns.
// Restricts initial-state sampling for the reformer, whose node-independent
// box would produce physically impossible profiles.
struct ProfileBand {
  Eigen::MatrixXd lo, hi;
};

ProfileBand compute_steady_band(const Plant& plant);
void write_profile_band(const ProfileBand& band, const std::string& path);
ProfileBand load_profile_band(const std::string& path, int n_x, int n_fe);

// Uniform sampling over the bound boxes, node-independent per state. With a
// band, each state profile is instead a convex blend lo + xi*(hi - lo) with
// one xi per (species, sample). Reproducible for a given seed.
SampleSet sample_inputs(const Plant& plant, int n_s, std::uint64_t seed,
                        const ProfileBand* band = nullptr);

// Sampling concentrated on reachable states: each state profile is a convex
// blend of the steady profiles at two uniformly drawn control points (the
// shapes a transient actually passes through), plus a small per-node jitter
// clamped to the state bounds. The paired control vector is drawn
// independently so off-steady (state, control) combinations stay covered.
SampleSet sample_steady_mix(const Plant& plant, int n_s, std::uint64_t seed);

// The one-step physics residual r = (x_next - x_prev)/dt - F(x_next, u)
// (implicit form) as a reusable evaluator with a fixed graph, plus the
// adjoint 2 (dr/dx_next)^T r that training backpropagates into the network.
class PhysicsResidual {
 public:
  PhysicsResidual(const Plant& plant, double dt, int n_fe = -1);
  PhysicsResidual(const PhysicsResidual&) = delete;
  PhysicsResidual& operator=(const PhysicsResidual&) = delete;

  int dim() const { return n_; }

  void eval(std::span<const double> x_prev, std::span<const double> x_next,
            std::span<const double> u, Eigen::VectorXd& r) const;
  void eval_with_adjoint(std::span<const double> x_prev, std::span<const double> x_next,
                         std::span<const double> u, Eigen::VectorXd& r,
                         Eigen::VectorXd& adj) const;

 private:
  void load_inputs(std::span<const double> x_prev, std::span<const double> x_next,
                   std::span<const double> u) const;

  int n_ = 0, nu_ = 0;
  ExprGraph graph_;
  ConstraintSet rows_;
  std::vector<std::size_t> jac_idx_;  // pattern entries with col < n_
  std::vector<int> jac_row_, jac_col_;
  mutable EvalWorkspace ws_;
  mutable std::vector<double> input_, jvals_;
};

// Convenience single-shot form of the evaluator above.
Eigen::VectorXd physics_residual(const Plant& plant, std::span<const double> x_prev,
                                 std::span<const double> x_next, std::span<const double> u,
                                 double dt);

// How train() draws its input data when no explicit band is supplied.
enum class SamplingMode { kBox, kSteadyMix };

struct TrainConfig {
  int n_samples = 100000;
  int epochs = 1000;
  int batch_size = 512;
  double lr0 = 0.01;
  double decay = 0.7;     // multiplicative, applied every decay_every epochs
  int decay_every = 100;
  double test_fraction = 0.1;
  std::uint64_t seed = 1;
  SamplingMode sampling = SamplingMode::kBox;
};

double lr_schedule(const TrainConfig& cfg, int epoch);

struct LossReport {
  std::vector<double> train_loss;  // one entry per epoch, running batch sum
  std::vector<double> test_loss;   // held-out loss after each epoch
  int best_epoch = -1;
  void write_csv(const std::string& path) const;
};

struct TrainResult {
  NetworkParams params;  // best held-out loss over the run
  LossReport report;
};

// Sum of squared one-step residuals of the network over the sample set,
// accumulated in ascending sample order so the batch size cannot change the
// value. batch_size <= 0 evaluates the whole set at once.
double surrogate_loss(const NetworkSpec& spec, const NetworkParams& params,
                      const PhysicsResidual& residual, const SampleSet& data,
                      int batch_size = 0);

// ADAM on the physics loss with the stepwise learning-rate decay. Keeps the
// parameters with the best held-out loss. Throws NnError naming the epoch if
// the loss leaves the finite range or an evaluation exits the model domain.
// A non-null band forces band sampling; otherwise cfg.sampling picks the
// input distribution.
TrainResult train(const NetworkSpec& spec, const Plant& plant, const TrainConfig& cfg,
                  const ProfileBand* band = nullptr);

}  // namespace nnmpc
