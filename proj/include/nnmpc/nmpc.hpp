#pragma once

// Receding-horizon controller on top of the transcription and embedding
// layers. One NLP is assembled per controller; the quantities that change
// between sampling instants (measured profile, setpoint targets, previously
// applied move) live in pinned variables whose degenerate bounds are simply
// rewritten, so the expression graph and the solver's Hessian sweep survive
// the whole closed-loop run.

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nnmpc/embedding.hpp"
#include "nnmpc/nlp.hpp"
#include "nnmpc/nn.hpp"
#include "nnmpc/plant.hpp"
#include "nnmpc/simulate.hpp"
#include "nnmpc/solver.hpp"
#include "nnmpc/transcription.hpp"

namespace nnmpc {

// A controlled output: the value of one state at one axial node. Nodes are
// 1-based; kOutletNode resolves to the last node of whatever grid the
// controller ends up with.
inline constexpr int kOutletNode = -1;

struct OutputSelector {
  int state = 0;
  int node = kOutletNode;
  std::string name;
};

// Piecewise-constant setpoint program: `initial` holds from step 0, each
// change takes effect at its step and holds until the next one.
struct SetpointSchedule {
  std::vector<double> initial;
  std::vector<std::pair<int, std::vector<double>>> changes;

  std::vector<double> at(int step) const;
  void validate(std::size_t n_outputs) const;
};

struct NmpcConfig {
  int horizon = 0;  // predicted steps; states exist at 0..horizon
  int moves = 0;    // free control vectors; later steps reuse the last one
  int n_fe = -1;    // spatial elements, -1 keeps the plant's grid
  std::vector<OutputSelector> outputs;
  std::vector<double> output_weights;  // one per output
  std::vector<double> move_weights;    // one per control
  EmbeddingKind variant = EmbeddingKind::kMechanistic;
  SolveOptions solver;

  void validate(const Plant& plant) const;
};

// A trained network together with the architecture it was trained for.
struct Surrogate {
  NetworkSpec spec;
  std::shared_ptr<const NetworkParams> params;
};

class NmpcController {
 public:
  // Builds the horizon problem for the configured variant. Surrogate
  // variants require `surrogate` (dimensions checked against the grid);
  // the mechanistic variant ignores it. x0/u_prev/setpoints give the
  // initial pin values and can be rewritten later through the setters.
  NmpcController(const Plant& plant, NmpcConfig cfg, const Surrogate* surrogate,
                 std::span<const double> x0_profile, std::span<const double> u_prev,
                 std::span<const double> setpoints);
  NmpcController(const NmpcController&) = delete;
  NmpcController& operator=(const NmpcController&) = delete;

  const NmpcConfig& config() const { return cfg_; }
  const Grid& grid() const { return grid_; }
  const TranscribedSystem& layout() const { return ts_; }
  NlpProblem& problem() { return nlp_; }
  const NlpProblem& problem() const { return nlp_; }

  // Variable totals under the study's counting convention: transcribed
  // states plus control moves (decision) and embedding auxiliaries (aux).
  // The pinned bookkeeping variables for setpoints and the previous move
  // are deliberately excluded; they are parameters, not decisions.
  VariableCounts counts() const;

  void set_state(std::span<const double> x0_profile);
  void set_setpoints(std::span<const double> targets);
  void set_previous_control(std::span<const double> u_prev);

  // Writes a constant-input rollout into the initial guesses: the implicit
  // stepper for the mechanistic variant, the network's own one-step map for
  // surrogate variants. `fill_aux = false` skips the lifted-layer pass and
  // leaves full-space auxiliaries at their construction defaults, which is
  // only useful for measuring what that pass is worth.
  void initialize_feasible(std::span<const double> x0_profile,
                           std::span<const double> u_hold, bool fill_aux = true);

  SolveResult solve(const SolveResult* warm = nullptr);

  // One-step receding-horizon shift of a solution: states and moves slide
  // forward with their tails repeated, row multipliers slide with their
  // rows, and full-space auxiliaries are recomputed from the shifted
  // trajectory. The result is the warm start for the next sampling instant.
  SolveResult shift(const SolveResult& sol) const;

  std::vector<double> first_move(const SolveResult& sol) const;
  std::vector<double> measured_outputs(std::span<const double> profile) const;

 private:
  void build_objective(std::span<const double> setpoints, std::span<const double> u_prev);
  void rollout_states(std::span<const double> x0_profile, std::span<const double> u_hold,
                      std::vector<double>& states) const;

  const Plant* plant_;
  NmpcConfig cfg_;
  Grid grid_;
  NlpProblem nlp_;
  TranscribedSystem ts_;
  std::vector<EmbeddedStep> steps_;
  std::unique_ptr<Surrogate> sur_;
  std::vector<int> sp_vars_, uprev_vars_;
  mutable std::unique_ptr<ImplicitStepper> stepper_;
};

// One closed-loop sampling instant: the measured profile, what the
// controller was asked for, what it did, and what the solve cost.
struct ClosedLoopRecord {
  int step = 0;
  std::vector<double> state;  // measured profile the solve started from
  std::vector<double> setpoints;
  std::vector<double> outputs;   // tracked outputs of `state`
  std::vector<double> controls;  // applied move
  SolveStatus status = SolveStatus::kOptimal;
  int iterations = 0;
  double objective = 0.0;
  double wall_clock_seconds = 0.0;
};

struct ClosedLoopTrace {
  std::vector<ClosedLoopRecord> records;
  VariableCounts counts;
  int failures = 0;
  std::string scenario;  // run label, blank unless a scenario set it
  std::string plant;     // plant name the truth simulator ran
  std::string variant;   // embedding kind the controller ran
  std::string model;     // "mechanistic" or a network content tag
};

struct ClosedLoopOptions {
  int horizon_steps = 0;
  std::vector<double> x0;  // truth profile at step 0
  std::vector<double> u0;  // move applied before step 0
  SimulatorConfig sim;     // truth integrator settings
};

// Figure-8 loop: measure, solve, apply the first move, integrate the truth
// plant one sampling period. The truth model is the adaptive integrator
// when the plant has an explicit right-hand side and the implicit stepper
// otherwise. A failed solve is recorded and the previous move is held.
ClosedLoopTrace closed_loop(const Plant& plant, const NmpcConfig& cfg,
                            const Surrogate* surrogate, const SetpointSchedule& schedule,
                            const ClosedLoopOptions& opts);

// Content tag for trace provenance: "mechanistic" without a network,
// otherwise the architecture digest combined with a hash of the weights.
std::string model_tag(const Surrogate* surrogate);

// Normalization factors for the trajectory metrics, one per profile entry
// and one per control: upper bound minus lower bound.
struct DistanceFactors {
  std::vector<double> state;
  std::vector<double> control;
};

DistanceFactors default_distance_factors(const Plant& plant, int n_fe = -1);

// Per-step squared normalized distances between two runs: sum over the
// profile of ((x_a - x_b)/factor)^2, and the control analogue.
struct TrajectoryDistance {
  std::vector<double> state;
  std::vector<double> control;
};

TrajectoryDistance trajectory_distance(const ClosedLoopTrace& a, const ClosedLoopTrace& b,
                                       const DistanceFactors& factors);

}  // namespace nnmpc
