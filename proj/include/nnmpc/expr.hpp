#pragma once

// Arena-based scalar expression graph with reverse-mode differentiation.
//
// Nodes are appended to a flat arena and children always precede parents, so a
// single ascending sweep evaluates any expression and a descending sweep
// propagates adjoints. Second derivatives use a tangent (dual) carried through
// both sweeps, one direction at a time, which keeps the Hessian exact without
// taping a second graph.

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

namespace nnmpc {

using ExprId = std::int32_t;
inline constexpr ExprId kNoExpr = -1;

enum class ExprOp : std::uint8_t {
  kConst,
  kVar,
  kSum,
  kProd,  // binary
  kDiv,
  kPowInt,
  kPowReal,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
};

const char* expr_op_name(ExprOp op);

// Thrown on domain violations during evaluation (log of a non-positive value,
// division by zero, real power of a negative base). Carries the node id and a
// human-readable path from the evaluation root.
class EvalError : public std::runtime_error {
 public:
  EvalError(std::string msg, ExprId node) : std::runtime_error(std::move(msg)), node_(node) {}
  ExprId node() const { return node_; }

 private:
  ExprId node_;
};

struct ExprNode {
  ExprOp op;
  std::int32_t nargs = 0;  // child count
  std::int32_t args = 0;   // offset into the child arena
  std::int32_t var = -1;   // variable index (kVar) or integer exponent (kPowInt)
  double value = 0.0;      // constant value (kConst) or real exponent (kPowReal)
};

// Scratch buffers for evaluation and differentiation sweeps. Reused across
// calls; each sweep touches only the nodes on its reachability list and
// restores them to zero afterwards, so a workspace can serve many roots.
struct EvalWorkspace {
  std::vector<double> val;
  std::vector<double> adj;
  std::vector<double> dot;
  std::vector<double> adj_dot;
  std::vector<std::uint8_t> mark;
  std::vector<ExprId> order;
  void ensure(std::size_t n);
};

class ExprGraph {
 public:
  // Builders. Children must already belong to this graph. Constant folding is
  // applied where it cannot change semantics observable through evaluation.
  ExprId constant(double c);
  ExprId variable(int index);
  ExprId sum(std::span<const ExprId> terms);
  ExprId sum(std::initializer_list<ExprId> terms) { return sum(std::span<const ExprId>(terms.begin(), terms.size())); }
  ExprId add(ExprId a, ExprId b);
  ExprId sub(ExprId a, ExprId b);
  ExprId mul(ExprId a, ExprId b);
  ExprId prod(std::span<const ExprId> factors);
  ExprId div(ExprId a, ExprId b);
  ExprId pow_int(ExprId base, int exponent);
  ExprId pow_real(ExprId base, double exponent);
  ExprId exp_(ExprId a);
  ExprId log_(ExprId a);
  ExprId tanh_(ExprId a);
  ExprId sigmoid_(ExprId a);

  ExprId neg(ExprId a) { return mul(constant(-1.0), a); }
  ExprId square(ExprId a) { return pow_int(a, 2); }
  // log(1 + exp(a)); adequate while |a| stays in the tens, which holds for the
  // bounded pre-activations this graph embeds.
  ExprId softplus(ExprId a) { return log_(add(constant(1.0), exp_(a))); }
  // sum_i coeff_i * ids_i + c0
  ExprId affine(std::span<const ExprId> ids, std::span<const double> coeffs, double c0);
  ExprId affine(std::initializer_list<ExprId> ids, std::initializer_list<double> coeffs, double c0) {
    return affine(std::span<const ExprId>(ids.begin(), ids.size()),
                  std::span<const double>(coeffs.begin(), coeffs.size()), c0);
  }

  std::size_t size() const { return nodes_.size(); }
  int var_count() const { return var_count_; }
  const ExprNode& node(ExprId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::span<const ExprId> children(ExprId id) const {
    const ExprNode& n = nodes_[static_cast<std::size_t>(id)];
    return {child_arena_.data() + n.args, static_cast<std::size_t>(n.nargs)};
  }

  // Ascending list of nodes reachable from the given roots, written to `out`.
  void reachable(std::span<const ExprId> roots, std::vector<ExprId>& out,
                 std::vector<std::uint8_t>& mark) const;

  double eval(ExprId root, std::span<const double> x, EvalWorkspace& ws) const;
  double eval(ExprId root, std::initializer_list<double> x, EvalWorkspace& ws) const {
    return eval(root, std::span<const double>(x.begin(), x.size()), ws);
  }

  // Reverse sweep; appends (variable index, partial) pairs sorted by variable.
  void gradient(ExprId root, std::span<const double> x,
                std::vector<std::pair<int, double>>& out, EvalWorkspace& ws) const;
  void gradient(ExprId root, std::initializer_list<double> x,
                std::vector<std::pair<int, double>>& out, EvalWorkspace& ws) const {
    gradient(root, std::span<const double>(x.begin(), x.size()), out, ws);
  }

  // Sweep primitives used by ConstraintSet and LagrangianHessian. `order` must
  // be an ascending reachability list covering `root`.
  void eval_order(std::span<const ExprId> order, std::span<const double> x,
                  std::vector<double>& val) const;
  void reverse_order(std::span<const ExprId> order, ExprId root,
                     const std::vector<double>& val, std::vector<double>& adj) const;
  // Forward tangent + dual reverse sweep along unit direction `dir_var`,
  // leaving second derivatives in adj_dot at variable nodes. `val` must
  // already hold node values for the order.
  void hessian_dir(std::span<const ExprId> order, ExprId root, int dir_var,
                   const std::vector<double>& val, EvalWorkspace& ws) const;

  std::string render(ExprId root) const;  // prefix notation

  // Variables reachable from root; ascending variable indices.
  std::vector<int> support(ExprId root) const;
  // Variables that can carry second-order structure (those appearing inside a
  // nonlinear context). Subset of support(root).
  std::vector<int> nonlinear_support(ExprId root) const;

 private:
  ExprId push(ExprNode n, std::span<const ExprId> kids);
  std::string path_to(ExprId root, ExprId target) const;
  [[noreturn]] void domain_error(ExprId node, const std::string& what) const;

  std::vector<ExprNode> nodes_;
  std::vector<ExprId> child_arena_;
  std::unordered_map<double, ExprId> const_cache_;
  std::vector<ExprId> var_nodes_;
  int var_count_ = 0;

  friend class ConstraintSet;
  friend class LagrangianHessian;
  mutable ExprId eval_root_ = kNoExpr;  // root of the sweep in flight, for error paths
};

enum class Relation : std::uint8_t { kEq, kLe };

// Jacobian sparsity pattern as parallel (row, col) arrays, cached and point
// independent. Triplet order is row-major and stable across calls.
struct JacPattern {
  std::vector<int> rows;
  std::vector<int> cols;
};

// An ordered list of scalar relations expr_i (=|<=) rhs_i over one graph.
// Residual convention: r_i(x) = expr_i(x) - rhs_i.
class ConstraintSet {
 public:
  explicit ConstraintSet(ExprGraph* graph) : graph_(graph) {}

  int add(ExprId expr, Relation rel, double rhs, std::string name = {});
  int size() const { return static_cast<int>(rows_.size()); }
  ExprId expr(int i) const { return rows_[static_cast<std::size_t>(i)].expr; }
  Relation relation(int i) const { return rows_[static_cast<std::size_t>(i)].rel; }
  double rhs(int i) const { return rows_[static_cast<std::size_t>(i)].rhs; }
  const std::string& name(int i) const { return rows_[static_cast<std::size_t>(i)].name; }
  ExprGraph* graph() const { return graph_; }

  void eval_all(std::span<const double> x, Eigen::VectorXd& out, EvalWorkspace& ws) const;
  const JacPattern& jacobian_pattern() const;
  // Values aligned with jacobian_pattern(); vals.size() must match.
  void jacobian_values(std::span<const double> x, std::span<double> vals,
                       EvalWorkspace& ws) const;

  // One constraint per line: "<name>: <prefix expr> <rel> <rhs>".
  std::string dump() const;

 private:
  struct Row {
    ExprId expr;
    Relation rel;
    double rhs;
    std::string name;
  };

  void build_cache() const;

  ExprGraph* graph_;
  std::vector<Row> rows_;

  // Lazily built sweep caches. Invalidated when rows are added.
  mutable bool cache_valid_ = false;
  mutable std::vector<ExprId> union_order_;
  mutable std::vector<std::vector<ExprId>> row_order_;
  mutable std::vector<std::vector<int>> row_support_;
  mutable JacPattern pattern_;

  friend class LagrangianHessian;
};

// Exact Hessian of sigma * f(x) + sum_i lambda_i c_i(x) with a cached symmetric
// lower-triangular pattern. Affine rows contribute nothing and are skipped.
class LagrangianHessian {
 public:
  LagrangianHessian(ExprGraph* graph, ExprId objective, const ConstraintSet* constraints);

  // Lower-triangular sparse matrix (n x n, n = graph var count).
  Eigen::SparseMatrix<double> values(std::span<const double> x,
                                     std::span<const double> lambda, double sigma) const;

 private:
  struct Piece {
    ExprId root;
    int row = -1;  // -1: objective
    std::vector<ExprId> order;
    std::vector<int> nl_support;
  };

  ExprGraph* graph_;
  std::vector<Piece> pieces_;
  mutable EvalWorkspace ws_;
};

}  // namespace nnmpc
