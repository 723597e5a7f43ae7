#pragma once

// Scenario files, trace files and the report logic behind the command-line
// harness. A scenario is a JSON description of one closed-loop run (plant,
// model, controller configuration, setpoint program); a trace is the CSV
// record of what happened, with enough columns to recompute every reported
// statistic offline.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nnmpc/nmpc.hpp"
#include "nnmpc/training.hpp"

namespace nnmpc {

// Bad input (file, flag, pairing) as opposed to a failed computation; the
// CLI maps this to its configuration exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Scenario {
  std::string name;
  std::string plant;                  // b1 | b2 | b3
  std::string model = "mechanistic";  // mechanistic | pinn | picnn
  std::string params_path;            // trained weights, relative to the data dir
  NmpcConfig cfg;
  SetpointSchedule schedule;
  int horizon_steps = 0;
  std::vector<double> u0;  // move applied before step 0
  std::vector<double> x0;  // empty: steady profile at u0
  std::uint64_t seed = 1;
  // Network shape overrides; -1 keeps the per-benchmark defaults.
  int hidden = -1, width = -1, conv_layers = -1, channels = -1, kernel = -1;
  std::map<std::string, std::string> annotations;
};

Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& sc, const std::string& path);

// "desk" shrinks benchmark 3 to n_fe = 10, P = 10 for quick runs; "full"
// restores the plant grid and P = 30. Other plants are left alone.
void apply_preset(Scenario& sc, std::string_view preset);

// Architecture gate: empty string when the pair is allowed, otherwise the
// reason it is not.
std::string arch_rejection(std::string_view plant, std::string_view arch);

// Builds the network architecture a scenario asks for and loads its trained
// weights. Throws ConfigError when the pair is invalid or the file is
// missing or was trained for a different architecture.
Surrogate make_scenario_surrogate(const Scenario& sc, const Plant& plant,
                                  const std::string& data_dir = default_data_dir());

ClosedLoopTrace run_scenario(const Scenario& sc,
                             const std::string& data_dir = default_data_dir());

void write_trace_csv(const ClosedLoopTrace& trace, const std::string& path);
ClosedLoopTrace read_trace_csv(const std::string& path);

// Single-run statistics as a JSON document: wall-clock averages excluding
// failed solves, first-step wall-clock, iteration statistics, variable
// counts, failure count.
std::string summarize_trace(const ClosedLoopTrace& trace);

struct TraceComparison {
  TrajectoryDistance metrics;
  double max_state = 0.0;
  double max_control = 0.0;
  bool same_model = false;
  double threshold = 0.0;
  // Verdict only exists when both traces come from the same trained model;
  // a mechanistic-vs-surrogate comparison is reported without one.
  std::optional<bool> consistent;
};

TraceComparison compare_traces(const ClosedLoopTrace& a, const ClosedLoopTrace& baseline,
                               const DistanceFactors& factors, double threshold = 1e-4);
void write_comparison_csv(const TraceComparison& cmp, const std::string& path);

// Aggregate report over several runs: one summary per trace plus trajectory
// distances against the mechanistic run of the same plant where one exists.
std::string suite_report(std::span<const ClosedLoopTrace> traces);

// One training request as the CLI sees it: benchmark, architecture, shape
// overrides (-1 = defaults), optimizer settings and an output directory.
struct TrainJob {
  std::string plant;
  std::string arch;  // pinn | picnn
  std::string out_dir;
  std::string tag;  // artifact basename; empty derives "<plant>_<arch>"
  // "box" draws every node independently from the state bounds, "band" draws
  // convex combinations of the steady-profile envelope. Empty keeps the
  // per-plant default (band for the reformer, box otherwise).
  std::string sampling;
  TrainConfig train;
  int n_fe = -1;
  int hidden = -1, width = -1, conv_layers = -1, channels = -1, kernel = -1;
};

TrainJob load_train_job(const std::string& path);

struct TrainArtifacts {
  std::string params_path;
  std::string loss_path;
  std::string meta_path;
  double best_test_loss = 0.0;
  int best_epoch = -1;
};

// Runs the physics training for a job and writes the weight file, the loss
// curve and a metadata JSON (seeds, config digest, loss summary). Throws
// ConfigError for invalid pairs and NnError when training diverges.
TrainArtifacts train_surrogate(const TrainJob& job,
                               const std::string& data_dir = default_data_dir());

// Architecture for a benchmark with the standard shapes filled in; the
// overrides follow the same -1 convention as Scenario and TrainJob.
NetworkSpec benchmark_network(const Plant& plant, std::string_view arch, int n_fe = -1,
                              int hidden = -1, int width = -1, int conv_layers = -1,
                              int channels = -1, int kernel = -1);

}  // namespace nnmpc
