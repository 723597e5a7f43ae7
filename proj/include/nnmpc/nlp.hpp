#pragma once

// Problem container for sparse NLPs of the form
//
//   min  f(x)         s.t.  c_i(x) = / <= rhs_i,   lb <= x <= ub
//
// where f and the c_i are either expression-graph nodes or opaque grey-box
// blocks that supply their own derivatives. The solver (solver.hpp) consumes
// this container; transcription and embedding code only ever appends to it.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nnmpc/expr.hpp"

namespace nnmpc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarClass {
  kState,    // discretized state profile values
  kControl,  // manipulated inputs
  kAux,      // auxiliary variables introduced by an embedding (lifted layers)
  kGeneric,
};

struct VarInfo {
  std::string name;
  double lb = -kInf;
  double ub = kInf;
  double x0 = 0.0;
  VarClass cls = VarClass::kGeneric;
};

// A constraint block whose residuals and derivatives come from user code
// rather than the expression graph. `y` is the block's own input vector; the
// attachment's var_map says which problem variables feed it. Index pairs in
// jacobian/weighted_hessian are in block-local input coordinates.
class GreyBoxBlock {
 public:
  virtual ~GreyBoxBlock() = default;

  virtual int num_inputs() const = 0;
  virtual int num_outputs() const = 0;

  virtual void eval(std::span<const double> y, std::span<double> w) = 0;
  virtual void jacobian(std::span<const double> y,
                        std::vector<Eigen::Triplet<double>>& out) = 0;

  // sum_r lambda_r * d2 w_r / dy^2, lower triangle. Only consulted when
  // has_weighted_hessian() is true; otherwise the solver falls back to a
  // quasi-Newton model for these rows.
  virtual bool has_weighted_hessian() const { return false; }
  virtual void weighted_hessian(std::span<const double> /*y*/,
                                std::span<const double> /*lambda*/,
                                std::vector<Eigen::Triplet<double>>& /*out*/) {}
};

struct GreyBoxAttachment {
  std::shared_ptr<GreyBoxBlock> block;
  std::vector<int> var_map;  // block input slot -> problem variable index
};

// Objective supplied as callbacks instead of an expression (used by the
// sequential controller where f comes from an ODE integration).
struct ExternalObjective {
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, Eigen::VectorXd&)> gradient;
};

struct NlpProblem {
  ExprGraph graph;
  std::vector<VarInfo> vars;
  ExprId objective = kNoExpr;  // ignored when external_objective is set
  std::optional<ExternalObjective> external_objective;
  ConstraintSet constraints{&graph};
  std::vector<GreyBoxAttachment> blocks;

  // Exact-Hessian sweep data, built by the solver on first use and reused
  // across repeated solves of the same problem (the receding-horizon loop
  // re-solves with updated bounds only). Rebuilt if rows or objective change.
  std::shared_ptr<LagrangianHessian> hessian_cache;
  int hessian_cache_rows = -1;
  ExprId hessian_cache_objective = kNoExpr;

  int add_var(std::string name, double lb, double ub, double x0,
              VarClass cls = VarClass::kGeneric) {
    vars.push_back({std::move(name), lb, ub, x0, cls});
    return static_cast<int>(vars.size()) - 1;
  }

  ExprId var_expr(int i) { return graph.variable(i); }

  int num_vars() const { return static_cast<int>(vars.size()); }

  int num_rows() const {
    int m = static_cast<int>(constraints.size());
    for (const auto& a : blocks) m += a.block->num_outputs();
    return m;
  }
};

struct VariableCounts {
  int decision = 0;  // states + controls + generic
  int aux = 0;
  int total = 0;
  int rows = 0;
};

VariableCounts count_variables(const NlpProblem& p);

}  // namespace nnmpc
