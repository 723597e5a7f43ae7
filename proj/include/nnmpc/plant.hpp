#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nnmpc/expr.hpp"

namespace nnmpc {

inline std::string default_data_dir() { return NNMPC_DATA_DIR; }

struct Interval {
  double lb = 0.0;
  double ub = 0.0;
};

// Boundary binding for one state: the ghost node upstream of the first
// interior node carries either a control value (control >= 0) or a fixed
// co-feed constant (control == -1).
struct InletSpec {
  int state = 0;
  int control = -1;
  double value = 0.0;
};

struct PlantInfo {
  std::string name;
  std::string description;
  int n_x = 0;   // distributed states
  int n_u = 0;   // manipulated inputs
  int n_fe = 0;  // default number of axial elements
  double dt = 0.0;
  double length = 0.0;  // spatial domain [0, length]
  std::vector<std::string> state_names;
  std::vector<std::string> control_names;
  std::vector<Interval> state_bounds;    // per state, applied at every node
  std::vector<Interval> control_bounds;  // per control
  std::vector<InletSpec> inlets;
  std::map<std::string, double> params;  // model constants, for introspection
};

// A spatially discretized plant. Profiles are stored state-major: the value
// of state s at axial node v (v = 1..n_fe) lives at index s*n_fe + (v-1).
// Node v takes its upstream difference against node v-1, with the ghost
// value at v = 1 supplied by the inlet bindings.
class Plant {
 public:
  explicit Plant(PlantInfo info) : info_(std::move(info)) {}
  virtual ~Plant() = default;
  Plant(const Plant&) = delete;
  Plant& operator=(const Plant&) = delete;

  const PlantInfo& info() const { return info_; }
  int n_x() const { return info_.n_x; }
  int n_u() const { return info_.n_u; }
  int n_fe() const { return info_.n_fe; }
  double dt() const { return info_.dt; }

  // True when the model exposes d/dt as an explicit function of the profile,
  // which is what the method-of-lines integrator needs.
  virtual bool has_explicit_rhs() const { return true; }

  // Time derivative of every profile entry, same layout as the profile.
  // x has n_x*n_fe entries, u has n_u. Throws std::logic_error when the
  // model only defines an implicit step residual.
  virtual std::vector<ExprId> build_rhs(ExprGraph& g, std::span<const ExprId> x,
                                        std::span<const ExprId> u, int n_fe) const = 0;

  // Residual of one implicit Euler step from x_prev to x_next under u,
  // zero at a solution. Same row layout as the profile. The default forms
  // (x_next - x_prev)/dt - rhs(x_next, u); models with a nonlinear
  // accumulation term override it.
  virtual std::vector<ExprId> build_step_residual(ExprGraph& g,
                                                  std::span<const ExprId> x_prev,
                                                  std::span<const ExprId> x_next,
                                                  std::span<const ExprId> u, int n_fe,
                                                  double dt) const;

 protected:
  // Ghost-node expression feeding state `state`, from the inlet bindings.
  ExprId inlet_expr(ExprGraph& g, std::span<const ExprId> u, int state) const;

  PlantInfo info_;
};

// Loads <data_dir>/plants/<name>.json and instantiates the matching model.
// Throws std::invalid_argument for unknown names or malformed files.
// n_fe > 0 replaces the file's default grid, which rescales every consumer
// of the plant (simulators, transcription, training) consistently.
std::unique_ptr<Plant> make_plant(std::string_view name,
                                  const std::string& data_dir = default_data_dir(),
                                  int n_fe = -1);

}  // namespace nnmpc
