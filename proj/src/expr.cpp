#include "nnmpc/expr.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <sstream>

namespace nnmpc {

const char* expr_op_name(ExprOp op) {
  switch (op) {
    case ExprOp::kConst: return "const";
    case ExprOp::kVar: return "var";
    case ExprOp::kSum: return "sum";
    case ExprOp::kProd: return "prod";
    case ExprOp::kDiv: return "div";
    case ExprOp::kPowInt: return "powi";
    case ExprOp::kPowReal: return "pow";
    case ExprOp::kExp: return "exp";
    case ExprOp::kLog: return "log";
    case ExprOp::kTanh: return "tanh";
    case ExprOp::kSigmoid: return "sigmoid";
  }
  return "?";
}

void EvalWorkspace::ensure(std::size_t n) {
  if (val.size() < n) {
    val.resize(n, 0.0);
    adj.resize(n, 0.0);
    dot.resize(n, 0.0);
    adj_dot.resize(n, 0.0);
    mark.resize(n, 0);
  }
}

ExprId ExprGraph::push(ExprNode n, std::span<const ExprId> kids) {
  n.nargs = static_cast<std::int32_t>(kids.size());
  n.args = static_cast<std::int32_t>(child_arena_.size());
  for (ExprId k : kids) {
    assert(k >= 0 && static_cast<std::size_t>(k) < nodes_.size());
    child_arena_.push_back(k);
  }
  nodes_.push_back(n);
  return static_cast<ExprId>(nodes_.size() - 1);
}

ExprId ExprGraph::constant(double c) {
  auto it = const_cache_.find(c);
  if (it != const_cache_.end()) return it->second;
  ExprNode n{};
  n.op = ExprOp::kConst;
  n.value = c;
  const ExprId id = push(n, {});
  const_cache_.emplace(c, id);
  return id;
}

ExprId ExprGraph::variable(int index) {
  if (index < 0) throw std::invalid_argument("variable index must be non-negative");
  if (index >= static_cast<int>(var_nodes_.size())) var_nodes_.resize(index + 1, kNoExpr);
  if (var_nodes_[index] != kNoExpr) return var_nodes_[index];
  ExprNode n{};
  n.op = ExprOp::kVar;
  n.var = index;
  const ExprId id = push(n, {});
  var_nodes_[index] = id;
  var_count_ = std::max(var_count_, index + 1);
  return id;
}

ExprId ExprGraph::sum(std::span<const ExprId> terms) {
  double c = 0.0;
  std::vector<ExprId> kept;
  kept.reserve(terms.size());
  for (ExprId t : terms) {
    const ExprNode& n = node(t);
    if (n.op == ExprOp::kConst) {
      c += n.value;
    } else {
      kept.push_back(t);
    }
  }
  if (c != 0.0) kept.push_back(constant(c));
  if (kept.empty()) return constant(0.0);
  if (kept.size() == 1) return kept.front();
  ExprNode n{};
  n.op = ExprOp::kSum;
  return push(n, kept);
}

ExprId ExprGraph::add(ExprId a, ExprId b) {
  const ExprId two[] = {a, b};
  return sum(std::span<const ExprId>(two, 2));
}

ExprId ExprGraph::sub(ExprId a, ExprId b) { return add(a, neg(b)); }

ExprId ExprGraph::mul(ExprId a, ExprId b) {
  const ExprNode& na = node(a);
  const ExprNode& nb = node(b);
  if (na.op == ExprOp::kConst && nb.op == ExprOp::kConst) return constant(na.value * nb.value);
  if (na.op == ExprOp::kConst) {
    if (na.value == 0.0) return constant(0.0);
    if (na.value == 1.0) return b;
  }
  if (nb.op == ExprOp::kConst) {
    if (nb.value == 0.0) return constant(0.0);
    if (nb.value == 1.0) return a;
  }
  ExprNode n{};
  n.op = ExprOp::kProd;
  const ExprId two[] = {a, b};
  return push(n, std::span<const ExprId>(two, 2));
}

ExprId ExprGraph::prod(std::span<const ExprId> factors) {
  if (factors.empty()) return constant(1.0);
  ExprId acc = factors[0];
  for (std::size_t i = 1; i < factors.size(); ++i) acc = mul(acc, factors[i]);
  return acc;
}

ExprId ExprGraph::div(ExprId a, ExprId b) {
  const ExprNode& nb = node(b);
  if (nb.op == ExprOp::kConst) {
    if (nb.value == 0.0) throw std::invalid_argument("division by a zero constant");
    return mul(a, constant(1.0 / nb.value));
  }
  const ExprNode& na = node(a);
  if (na.op == ExprOp::kConst && na.value == 0.0) return constant(0.0);
  ExprNode n{};
  n.op = ExprOp::kDiv;
  const ExprId two[] = {a, b};
  return push(n, std::span<const ExprId>(two, 2));
}

ExprId ExprGraph::pow_int(ExprId base, int exponent) {
  if (exponent == 0) return constant(1.0);
  if (exponent == 1) return base;
  const ExprNode& nb = node(base);
  if (nb.op == ExprOp::kConst) {
    if (nb.value == 0.0 && exponent < 0) throw std::invalid_argument("0 raised to a negative power");
    return constant(std::pow(nb.value, exponent));
  }
  ExprNode n{};
  n.op = ExprOp::kPowInt;
  n.var = exponent;
  const ExprId one[] = {base};
  return push(n, std::span<const ExprId>(one, 1));
}

ExprId ExprGraph::pow_real(ExprId base, double exponent) {
  if (exponent == 0.0) return constant(1.0);
  if (exponent == 1.0) return base;
  const ExprNode& nb = node(base);
  if (nb.op == ExprOp::kConst) {
    if (nb.value < 0.0 || (nb.value == 0.0 && exponent < 1.0))
      throw std::invalid_argument("real power of a non-positive constant");
    return constant(std::pow(nb.value, exponent));
  }
  ExprNode n{};
  n.op = ExprOp::kPowReal;
  n.value = exponent;
  const ExprId one[] = {base};
  return push(n, std::span<const ExprId>(one, 1));
}

#define NNMPC_UNARY_BUILDER(fn, opcode, foldexpr)                  \
  ExprId ExprGraph::fn(ExprId a) {                                 \
    const ExprNode& na = node(a);                                  \
    if (na.op == ExprOp::kConst) {                                 \
      const double v = na.value;                                   \
      (void)v;                                                     \
      return constant(foldexpr);                                   \
    }                                                              \
    ExprNode n{};                                                  \
    n.op = opcode;                                                 \
    const ExprId one[] = {a};                                      \
    return push(n, std::span<const ExprId>(one, 1));               \
  }

NNMPC_UNARY_BUILDER(exp_, ExprOp::kExp, std::exp(v))
NNMPC_UNARY_BUILDER(tanh_, ExprOp::kTanh, std::tanh(v))
NNMPC_UNARY_BUILDER(sigmoid_, ExprOp::kSigmoid, 1.0 / (1.0 + std::exp(-v)))
#undef NNMPC_UNARY_BUILDER

ExprId ExprGraph::log_(ExprId a) {
  const ExprNode& na = node(a);
  if (na.op == ExprOp::kConst) {
    if (na.value <= 0.0) throw std::invalid_argument("log of a non-positive constant");
    return constant(std::log(na.value));
  }
  ExprNode n{};
  n.op = ExprOp::kLog;
  const ExprId one[] = {a};
  return push(n, std::span<const ExprId>(one, 1));
}

ExprId ExprGraph::affine(std::span<const ExprId> ids, std::span<const double> coeffs, double c0) {
  if (ids.size() != coeffs.size()) throw std::invalid_argument("affine: ids/coeffs size mismatch");
  std::vector<ExprId> terms;
  terms.reserve(ids.size() + 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (coeffs[i] == 0.0) continue;
    terms.push_back(mul(constant(coeffs[i]), ids[i]));
  }
  if (c0 != 0.0) terms.push_back(constant(c0));
  return sum(terms);
}

void ExprGraph::reachable(std::span<const ExprId> roots, std::vector<ExprId>& out,
                          std::vector<std::uint8_t>& mark) const {
  mark.assign(nodes_.size(), 0);
  std::vector<ExprId> stack(roots.begin(), roots.end());
  while (!stack.empty()) {
    const ExprId id = stack.back();
    stack.pop_back();
    if (id == kNoExpr || mark[static_cast<std::size_t>(id)]) continue;
    mark[static_cast<std::size_t>(id)] = 1;
    for (ExprId k : children(id)) {
      if (!mark[static_cast<std::size_t>(k)]) stack.push_back(k);
    }
  }
  out.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (mark[i]) out.push_back(static_cast<ExprId>(i));
  }
}

void ExprGraph::domain_error(ExprId node_id, const std::string& what) const {
  std::ostringstream msg;
  msg << what << " at node " << node_id;
  if (eval_root_ != kNoExpr) msg << " (path: " << path_to(eval_root_, node_id) << ")";
  throw EvalError(msg.str(), node_id);
}

std::string ExprGraph::path_to(ExprId root, ExprId target) const {
  // Reconstructed only on error, so a plain recursive search is fine.
  std::vector<ExprId> path;
  auto dfs = [&](auto&& self, ExprId cur) -> bool {
    path.push_back(cur);
    if (cur == target) return true;
    for (ExprId k : children(cur)) {
      if (k <= target && self(self, k)) return true;
    }
    path.pop_back();
    return false;
  };
  if (!dfs(dfs, root)) return "?";
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += " -> ";
    out += expr_op_name(node(path[i]).op);
  }
  return out;
}

void ExprGraph::eval_order(std::span<const ExprId> order, std::span<const double> x,
                           std::vector<double>& val) const {
  for (ExprId id : order) {
    const ExprNode& n = nodes_[static_cast<std::size_t>(id)];
    const ExprId* kid = child_arena_.data() + n.args;
    double v = 0.0;
    switch (n.op) {
      case ExprOp::kConst: v = n.value; break;
      case ExprOp::kVar:
        if (n.var >= static_cast<int>(x.size())) domain_error(id, "variable index out of range");
        v = x[static_cast<std::size_t>(n.var)];
        break;
      case ExprOp::kSum:
        for (std::int32_t i = 0; i < n.nargs; ++i) v += val[static_cast<std::size_t>(kid[i])];
        break;
      case ExprOp::kProd: v = val[static_cast<std::size_t>(kid[0])] * val[static_cast<std::size_t>(kid[1])]; break;
      case ExprOp::kDiv: {
        const double den = val[static_cast<std::size_t>(kid[1])];
        if (den == 0.0) domain_error(id, "division by zero");
        v = val[static_cast<std::size_t>(kid[0])] / den;
        break;
      }
      case ExprOp::kPowInt: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        if (b == 0.0 && n.var < 0) domain_error(id, "0 raised to a negative power");
        v = std::pow(b, n.var);
        break;
      }
      case ExprOp::kPowReal: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        if (b < 0.0 || (b == 0.0 && n.value < 1.0)) domain_error(id, "real power of a negative or zero base");
        v = std::pow(b, n.value);
        break;
      }
      case ExprOp::kExp: v = std::exp(val[static_cast<std::size_t>(kid[0])]); break;
      case ExprOp::kLog: {
        const double a = val[static_cast<std::size_t>(kid[0])];
        if (a <= 0.0) domain_error(id, "log of a non-positive value");
        v = std::log(a);
        break;
      }
      case ExprOp::kTanh: v = std::tanh(val[static_cast<std::size_t>(kid[0])]); break;
      case ExprOp::kSigmoid: v = 1.0 / (1.0 + std::exp(-val[static_cast<std::size_t>(kid[0])])); break;
    }
    val[static_cast<std::size_t>(id)] = v;
  }
}

void ExprGraph::reverse_order(std::span<const ExprId> order, ExprId root,
                              const std::vector<double>& val, std::vector<double>& adj) const {
  adj[static_cast<std::size_t>(root)] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const ExprId id = *it;
    const double a = adj[static_cast<std::size_t>(id)];
    if (a == 0.0) continue;
    const ExprNode& n = nodes_[static_cast<std::size_t>(id)];
    const ExprId* kid = child_arena_.data() + n.args;
    switch (n.op) {
      case ExprOp::kConst:
      case ExprOp::kVar:
        break;
      case ExprOp::kSum:
        for (std::int32_t i = 0; i < n.nargs; ++i) adj[static_cast<std::size_t>(kid[i])] += a;
        break;
      case ExprOp::kProd:
        adj[static_cast<std::size_t>(kid[0])] += a * val[static_cast<std::size_t>(kid[1])];
        adj[static_cast<std::size_t>(kid[1])] += a * val[static_cast<std::size_t>(kid[0])];
        break;
      case ExprOp::kDiv: {
        const double num = val[static_cast<std::size_t>(kid[0])];
        const double den = val[static_cast<std::size_t>(kid[1])];
        adj[static_cast<std::size_t>(kid[0])] += a / den;
        adj[static_cast<std::size_t>(kid[1])] -= a * num / (den * den);
        break;
      }
      case ExprOp::kPowInt: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        adj[static_cast<std::size_t>(kid[0])] += a * n.var * std::pow(b, n.var - 1);
        break;
      }
      case ExprOp::kPowReal: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        adj[static_cast<std::size_t>(kid[0])] += a * n.value * std::pow(b, n.value - 1.0);
        break;
      }
      case ExprOp::kExp:
        adj[static_cast<std::size_t>(kid[0])] += a * val[static_cast<std::size_t>(id)];
        break;
      case ExprOp::kLog:
        adj[static_cast<std::size_t>(kid[0])] += a / val[static_cast<std::size_t>(kid[0])];
        break;
      case ExprOp::kTanh: {
        const double t = val[static_cast<std::size_t>(id)];
        adj[static_cast<std::size_t>(kid[0])] += a * (1.0 - t * t);
        break;
      }
      case ExprOp::kSigmoid: {
        const double s = val[static_cast<std::size_t>(id)];
        adj[static_cast<std::size_t>(kid[0])] += a * s * (1.0 - s);
        break;
      }
    }
  }
}

void ExprGraph::hessian_dir(std::span<const ExprId> order, ExprId root, int dir_var,
                            const std::vector<double>& val, EvalWorkspace& ws) const {
  // Forward tangent sweep: ws.dot holds directional first derivatives.
  for (ExprId id : order) {
    const ExprNode& n = nodes_[static_cast<std::size_t>(id)];
    const ExprId* kid = child_arena_.data() + n.args;
    double d = 0.0;
    switch (n.op) {
      case ExprOp::kConst: break;
      case ExprOp::kVar: d = (n.var == dir_var) ? 1.0 : 0.0; break;
      case ExprOp::kSum:
        for (std::int32_t i = 0; i < n.nargs; ++i) d += ws.dot[static_cast<std::size_t>(kid[i])];
        break;
      case ExprOp::kProd:
        d = ws.dot[static_cast<std::size_t>(kid[0])] * val[static_cast<std::size_t>(kid[1])] +
            val[static_cast<std::size_t>(kid[0])] * ws.dot[static_cast<std::size_t>(kid[1])];
        break;
      case ExprOp::kDiv: {
        const double den = val[static_cast<std::size_t>(kid[1])];
        d = (ws.dot[static_cast<std::size_t>(kid[0])] -
             val[static_cast<std::size_t>(id)] * ws.dot[static_cast<std::size_t>(kid[1])]) / den;
        break;
      }
      case ExprOp::kPowInt: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        d = n.var * std::pow(b, n.var - 1) * ws.dot[static_cast<std::size_t>(kid[0])];
        break;
      }
      case ExprOp::kPowReal: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        d = n.value * std::pow(b, n.value - 1.0) * ws.dot[static_cast<std::size_t>(kid[0])];
        break;
      }
      case ExprOp::kExp: d = val[static_cast<std::size_t>(id)] * ws.dot[static_cast<std::size_t>(kid[0])]; break;
      case ExprOp::kLog: d = ws.dot[static_cast<std::size_t>(kid[0])] / val[static_cast<std::size_t>(kid[0])]; break;
      case ExprOp::kTanh: {
        const double t = val[static_cast<std::size_t>(id)];
        d = (1.0 - t * t) * ws.dot[static_cast<std::size_t>(kid[0])];
        break;
      }
      case ExprOp::kSigmoid: {
        const double s = val[static_cast<std::size_t>(id)];
        d = s * (1.0 - s) * ws.dot[static_cast<std::size_t>(kid[0])];
        break;
      }
    }
    ws.dot[static_cast<std::size_t>(id)] = d;
  }

  // Reverse dual sweep: (adj, adj_dot) updated together. For each child c of
  // node p with local partial g: adj[c] += adj[p]*g and
  // adj_dot[c] += adj_dot[p]*g + adj[p]*gdot.
  ws.adj[static_cast<std::size_t>(root)] = 1.0;
  ws.adj_dot[static_cast<std::size_t>(root)] = 0.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const ExprId id = *it;
    const double a = ws.adj[static_cast<std::size_t>(id)];
    const double ad = ws.adj_dot[static_cast<std::size_t>(id)];
    if (a == 0.0 && ad == 0.0) continue;
    const ExprNode& n = nodes_[static_cast<std::size_t>(id)];
    const ExprId* kid = child_arena_.data() + n.args;
    auto push_to = [&](ExprId c, double g, double gdot) {
      ws.adj[static_cast<std::size_t>(c)] += a * g;
      ws.adj_dot[static_cast<std::size_t>(c)] += ad * g + a * gdot;
    };
    switch (n.op) {
      case ExprOp::kConst:
      case ExprOp::kVar:
        break;
      case ExprOp::kSum:
        for (std::int32_t i = 0; i < n.nargs; ++i) push_to(kid[i], 1.0, 0.0);
        break;
      case ExprOp::kProd:
        push_to(kid[0], val[static_cast<std::size_t>(kid[1])], ws.dot[static_cast<std::size_t>(kid[1])]);
        push_to(kid[1], val[static_cast<std::size_t>(kid[0])], ws.dot[static_cast<std::size_t>(kid[0])]);
        break;
      case ExprOp::kDiv: {
        const double num = val[static_cast<std::size_t>(kid[0])];
        const double den = val[static_cast<std::size_t>(kid[1])];
        const double dnum = ws.dot[static_cast<std::size_t>(kid[0])];
        const double dden = ws.dot[static_cast<std::size_t>(kid[1])];
        push_to(kid[0], 1.0 / den, -dden / (den * den));
        push_to(kid[1], -num / (den * den),
                -dnum / (den * den) + 2.0 * num * dden / (den * den * den));
        break;
      }
      case ExprOp::kPowInt: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        const double db = ws.dot[static_cast<std::size_t>(kid[0])];
        push_to(kid[0], n.var * std::pow(b, n.var - 1),
                n.var * (n.var - 1) * std::pow(b, n.var - 2) * db);
        break;
      }
      case ExprOp::kPowReal: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        const double db = ws.dot[static_cast<std::size_t>(kid[0])];
        push_to(kid[0], n.value * std::pow(b, n.value - 1.0),
                n.value * (n.value - 1.0) * std::pow(b, n.value - 2.0) * db);
        break;
      }
      case ExprOp::kExp:
        push_to(kid[0], val[static_cast<std::size_t>(id)], ws.dot[static_cast<std::size_t>(id)]);
        break;
      case ExprOp::kLog: {
        const double b = val[static_cast<std::size_t>(kid[0])];
        push_to(kid[0], 1.0 / b, -ws.dot[static_cast<std::size_t>(kid[0])] / (b * b));
        break;
      }
      case ExprOp::kTanh: {
        const double t = val[static_cast<std::size_t>(id)];
        push_to(kid[0], 1.0 - t * t, -2.0 * t * ws.dot[static_cast<std::size_t>(id)]);
        break;
      }
      case ExprOp::kSigmoid: {
        const double s = val[static_cast<std::size_t>(id)];
        push_to(kid[0], s * (1.0 - s), (1.0 - 2.0 * s) * ws.dot[static_cast<std::size_t>(id)]);
        break;
      }
    }
  }
}

double ExprGraph::eval(ExprId root, std::span<const double> x, EvalWorkspace& ws) const {
  ws.ensure(nodes_.size());
  const ExprId roots[] = {root};
  reachable(std::span<const ExprId>(roots, 1), ws.order, ws.mark);
  eval_root_ = root;
  eval_order(ws.order, x, ws.val);
  eval_root_ = kNoExpr;
  return ws.val[static_cast<std::size_t>(root)];
}

void ExprGraph::gradient(ExprId root, std::span<const double> x,
                         std::vector<std::pair<int, double>>& out, EvalWorkspace& ws) const {
  const double unused = eval(root, x, ws);
  (void)unused;
  for (ExprId id : ws.order) ws.adj[static_cast<std::size_t>(id)] = 0.0;
  reverse_order(ws.order, root, ws.val, ws.adj);
  out.clear();
  for (ExprId id : ws.order) {
    const ExprNode& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == ExprOp::kVar) out.emplace_back(n.var, ws.adj[static_cast<std::size_t>(id)]);
  }
  std::sort(out.begin(), out.end());
}

std::string ExprGraph::render(ExprId root) const {
  std::ostringstream os;
  auto walk = [&](auto&& self, ExprId id) -> void {
    const ExprNode& n = node(id);
    switch (n.op) {
      case ExprOp::kConst: os << n.value; return;
      case ExprOp::kVar: os << "x" << n.var; return;
      case ExprOp::kPowInt: os << "(powi "; self(self, children(id)[0]); os << " " << n.var << ")"; return;
      case ExprOp::kPowReal: os << "(pow "; self(self, children(id)[0]); os << " " << n.value << ")"; return;
      default: break;
    }
    os << "(" << expr_op_name(n.op);
    for (ExprId k : children(id)) {
      os << " ";
      self(self, k);
    }
    os << ")";
  };
  walk(walk, root);
  return os.str();
}

std::vector<int> ExprGraph::support(ExprId root) const {
  std::vector<ExprId> order;
  std::vector<std::uint8_t> mark;
  const ExprId roots[] = {root};
  reachable(std::span<const ExprId>(roots, 1), order, mark);
  std::vector<int> vars;
  for (ExprId id : order) {
    const ExprNode& n = node(id);
    if (n.op == ExprOp::kVar) vars.push_back(n.var);
  }
  std::sort(vars.begin(), vars.end());
  return vars;
}

std::vector<int> ExprGraph::nonlinear_support(ExprId root) const {
  std::vector<ExprId> order;
  std::vector<std::uint8_t> mark;
  const ExprId roots[] = {root};
  reachable(std::span<const ExprId>(roots, 1), order, mark);

  // has_var per reachable node, bottom-up.
  std::vector<std::uint8_t> has_var(nodes_.size(), 0);
  for (ExprId id : order) {
    const ExprNode& n = node(id);
    if (n.op == ExprOp::kVar) {
      has_var[static_cast<std::size_t>(id)] = 1;
    } else {
      for (ExprId k : children(id)) has_var[static_cast<std::size_t>(id)] |= has_var[static_cast<std::size_t>(k)];
    }
  }

  // Top-down marking: nl[id] = 1 when the value of id feeds a context whose
  // second derivative w.r.t. it can be nonzero. Sound overapproximation.
  std::vector<std::uint8_t> nl(nodes_.size(), 0);
  std::vector<std::pair<ExprId, bool>> stack{{root, false}};
  std::vector<std::uint8_t> visited_flagged(nodes_.size(), 0);  // bit0: plain, bit1: flagged
  while (!stack.empty()) {
    auto [id, flag] = stack.back();
    stack.pop_back();
    const std::uint8_t bit = flag ? 2 : 1;
    if (visited_flagged[static_cast<std::size_t>(id)] & bit) continue;
    visited_flagged[static_cast<std::size_t>(id)] |= bit;
    if (flag) nl[static_cast<std::size_t>(id)] = 1;
    const ExprNode& n = node(id);
    auto hv = [&](ExprId k) { return has_var[static_cast<std::size_t>(k)] != 0; };
    switch (n.op) {
      case ExprOp::kConst:
      case ExprOp::kVar:
        break;
      case ExprOp::kSum:
        for (ExprId k : children(id)) stack.push_back({k, flag});
        break;
      case ExprOp::kProd: {
        auto kids = children(id);
        stack.push_back({kids[0], flag || hv(kids[1])});
        stack.push_back({kids[1], flag || hv(kids[0])});
        break;
      }
      case ExprOp::kDiv: {
        auto kids = children(id);
        stack.push_back({kids[0], flag || hv(kids[1])});
        stack.push_back({kids[1], true});
        break;
      }
      default:  // all remaining unary ops are nonlinear
        stack.push_back({children(id)[0], true});
        break;
    }
  }

  std::vector<int> vars;
  for (ExprId id : order) {
    const ExprNode& n = node(id);
    if (n.op == ExprOp::kVar && nl[static_cast<std::size_t>(id)]) vars.push_back(n.var);
  }
  std::sort(vars.begin(), vars.end());
  return vars;
}

int ConstraintSet::add(ExprId expr, Relation rel, double rhs, std::string name) {
  if (expr < 0 || static_cast<std::size_t>(expr) >= graph_->size())
    throw std::invalid_argument("constraint expression does not belong to the graph");
  rows_.push_back(Row{expr, rel, rhs, std::move(name)});
  cache_valid_ = false;
  return static_cast<int>(rows_.size() - 1);
}

void ConstraintSet::build_cache() const {
  std::vector<ExprId> roots;
  roots.reserve(rows_.size());
  for (const Row& r : rows_) roots.push_back(r.expr);
  std::vector<std::uint8_t> mark;
  graph_->reachable(roots, union_order_, mark);

  row_order_.assign(rows_.size(), {});
  row_support_.assign(rows_.size(), {});
  pattern_.rows.clear();
  pattern_.cols.clear();
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const ExprId one[] = {rows_[i].expr};
    graph_->reachable(std::span<const ExprId>(one, 1), row_order_[i], mark);
    for (ExprId id : row_order_[i]) {
      const ExprNode& n = graph_->node(id);
      if (n.op == ExprOp::kVar) row_support_[i].push_back(n.var);
    }
    std::sort(row_support_[i].begin(), row_support_[i].end());
    for (int v : row_support_[i]) {
      pattern_.rows.push_back(static_cast<int>(i));
      pattern_.cols.push_back(v);
    }
  }
  cache_valid_ = true;
}

void ConstraintSet::eval_all(std::span<const double> x, Eigen::VectorXd& out,
                             EvalWorkspace& ws) const {
  if (!cache_valid_) build_cache();
  ws.ensure(graph_->size());
  graph_->eval_order(union_order_, x, ws.val);
  out.resize(static_cast<Eigen::Index>(rows_.size()));
  for (std::size_t i = 0; i < rows_.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = ws.val[static_cast<std::size_t>(rows_[i].expr)] - rows_[i].rhs;
}

const JacPattern& ConstraintSet::jacobian_pattern() const {
  if (!cache_valid_) build_cache();
  return pattern_;
}

void ConstraintSet::jacobian_values(std::span<const double> x, std::span<double> vals,
                                    EvalWorkspace& ws) const {
  if (!cache_valid_) build_cache();
  if (vals.size() != pattern_.rows.size())
    throw std::invalid_argument("jacobian_values: output size does not match pattern");
  ws.ensure(graph_->size());
  graph_->eval_order(union_order_, x, ws.val);

  std::size_t t = 0;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& order = row_order_[i];
    for (ExprId id : order) ws.adj[static_cast<std::size_t>(id)] = 0.0;
    graph_->reverse_order(order, rows_[i].expr, ws.val, ws.adj);
    for (int v : row_support_[i]) {
      const ExprId vid = graph_->var_nodes_[static_cast<std::size_t>(v)];
      vals[t++] = ws.adj[static_cast<std::size_t>(vid)];
    }
  }
}

std::string ConstraintSet::dump() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const Row& r = rows_[i];
    os << (r.name.empty() ? ("c" + std::to_string(i)) : r.name) << ": "
       << graph_->render(r.expr) << (r.rel == Relation::kEq ? " == " : " <= ") << r.rhs << "\n";
  }
  return os.str();
}

LagrangianHessian::LagrangianHessian(ExprGraph* graph, ExprId objective,
                                     const ConstraintSet* constraints)
    : graph_(graph) {
  auto add_piece = [&](ExprId root, int row) {
    Piece p;
    p.root = root;
    p.row = row;
    p.nl_support = graph_->nonlinear_support(root);
    if (p.nl_support.empty()) return;  // affine: no curvature
    std::vector<std::uint8_t> mark;
    const ExprId one[] = {root};
    graph_->reachable(std::span<const ExprId>(one, 1), p.order, mark);
    pieces_.push_back(std::move(p));
  };
  if (objective != kNoExpr) add_piece(objective, -1);
  if (constraints) {
    for (int i = 0; i < constraints->size(); ++i) add_piece(constraints->expr(i), i);
  }
}

Eigen::SparseMatrix<double> LagrangianHessian::values(std::span<const double> x,
                                                      std::span<const double> lambda,
                                                      double sigma) const {
  const int n = graph_->var_count();
  std::vector<Eigen::Triplet<double>> trips;
  ws_.ensure(graph_->size());
  for (const Piece& p : pieces_) {
    const double w = (p.row < 0) ? sigma : lambda[static_cast<std::size_t>(p.row)];
    if (w == 0.0) continue;
    graph_->eval_order(p.order, x, ws_.val);
    for (int j : p.nl_support) {
      for (ExprId id : p.order) {
        ws_.adj[static_cast<std::size_t>(id)] = 0.0;
        ws_.adj_dot[static_cast<std::size_t>(id)] = 0.0;
        ws_.dot[static_cast<std::size_t>(id)] = 0.0;
      }
      graph_->hessian_dir(p.order, p.root, j, ws_.val, ws_);
      for (int i : p.nl_support) {
        if (i < j) continue;  // lower triangle only
        const ExprId vid = graph_->var_nodes_[static_cast<std::size_t>(i)];
        const double h = ws_.adj_dot[static_cast<std::size_t>(vid)];
        if (h != 0.0) trips.emplace_back(i, j, w * h);
      }
    }
  }
  Eigen::SparseMatrix<double> H(n, n);
  H.setFromTriplets(trips.begin(), trips.end());
  return H;
}

}  // namespace nnmpc
