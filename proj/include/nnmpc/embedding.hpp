#pragma once

// Three ways to realize one surrogate time step x_{k+1} = NN(x_k, u_k) inside
// the NLP:
//
//  - full space: every hidden unit becomes an auxiliary variable tied by an
//    explicit pre-activation row and an activation row, so the solver sees
//    only shallow algebra (works for dense and convolutional networks),
//  - reduced space: the network is inlined into n_x*n_fe nested expression
//    rows with no auxiliary variables (dense networks only),
//  - external: the whole horizon becomes one grey-box block whose residuals,
//    Jacobian, and multiplier-weighted Hessian come from the network engine,
//    with all steps evaluated in a single batched forward pass.
//
// A fourth tag, mechanistic, marks problems whose dynamics rows come from the
// plant model instead; it exists so configuration code can treat the model
// choice uniformly.

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nnmpc/nlp.hpp"
#include "nnmpc/nn.hpp"
#include "nnmpc/transcription.hpp"

namespace nnmpc {

enum class EmbeddingKind { kMechanistic, kFullSpace, kReducedSpace, kExternal };

// Short stable names used in scenario files and on the command line:
// "mech", "fs", "rs", "efe".
std::string_view to_string(EmbeddingKind k);
EmbeddingKind embedding_from_string(std::string_view s);

// Handles to everything one embedded step added to a problem. For the
// external kind the "step" spans the whole horizon and only `block` is
// populated besides the network itself.
struct EmbeddedStep {
  EmbeddingKind kind = EmbeddingKind::kMechanistic;
  NetworkSpec spec;
  std::shared_ptr<const NetworkParams> params;

  std::vector<int> in_vars;       // x_k, flattened profile order
  std::vector<int> control_vars;  // u_k
  std::vector<int> out_vars;      // x_{k+1}

  // Full space only. lifted_layers holds the spec layer indices that gained
  // auxiliaries; aux_pre/aux_act are the variable ids per lifted layer in the
  // engine's unit order (channel-major for convolutions).
  std::vector<int> lifted_layers;
  std::vector<std::vector<int>> aux_pre, aux_act;
  std::vector<int> aux_rows;     // pre-activation and activation rows
  std::vector<int> output_rows;  // rows tying out_vars to the last layer

  int block = -1;  // problem.blocks index (external kind)

  int num_aux() const;
};

// Auxiliary count the full-space form adds per lifted layer (2 variables and
// 2 rows per hidden unit), and the total over the network.
std::vector<int> fs_aux_per_layer(const NetworkSpec& spec);
int fs_aux_count(const NetworkSpec& spec);

// Full-space embeddings. Auxiliary variables receive interval-propagated
// bounds: pre-activations +-(max abs row sum of the layer weights times the
// incoming bound, plus the max abs bias), activations the image of that
// interval under the activation function. `tag` prefixes variable and row
// names so several steps can share one problem.
EmbeddedStep embed_fs_dense(const NetworkSpec& spec,
                            std::shared_ptr<const NetworkParams> params,
                            std::span<const int> in_vars, std::span<const int> control_vars,
                            std::span<const int> out_vars, NlpProblem& problem,
                            std::string_view tag = "nn");
EmbeddedStep embed_fs_conv(const NetworkSpec& spec,
                           std::shared_ptr<const NetworkParams> params,
                           std::span<const int> in_vars, std::span<const int> control_vars,
                           std::span<const int> out_vars, NlpProblem& problem,
                           std::string_view tag = "nn");

// Reduced-space embedding: n_x*n_fe rows, each the fully inlined network with
// hidden layers shared across output rows. Aborts with std::length_error when
// inlining would add more than `max_nodes` graph nodes.
EmbeddedStep embed_rs_dense(const NetworkSpec& spec,
                            std::shared_ptr<const NetworkParams> params,
                            std::span<const int> in_vars, std::span<const int> control_vars,
                            std::span<const int> out_vars, NlpProblem& problem,
                            std::string_view tag = "nn", std::size_t max_nodes = 1'000'000);

// Grey-box residual block w_{k*n+i} = x_{k+1,i} - NN_i(x_k, u_k) over
// `horizon` steps. Input layout: the horizon+1 state profiles, then one
// control vector per step. Supplies the exact Jacobian (identity and
// negated input-Jacobian blocks) and the multiplier-weighted Hessian.
std::shared_ptr<GreyBoxBlock> make_efe_block(const NetworkSpec& spec,
                                             std::shared_ptr<const NetworkParams> params,
                                             int horizon);

// Builds the block for a transcribed layout and attaches it to the problem,
// mapping control slots through the move-blocking aliases.
EmbeddedStep attach_efe(NlpProblem& problem, const TranscribedSystem& ts,
                        const NetworkSpec& spec,
                        std::shared_ptr<const NetworkParams> params);

// Writes the implied value of every full-space auxiliary for the (x_k, u_k)
// entries currently in `x`, leaving all decision variables untouched. The
// lifted rows then hold exactly; the output ties keep their gap. No-op for
// the other kinds.
void initialize_aux(const EmbeddedStep& step, std::span<double> x);

}  // namespace nnmpc
