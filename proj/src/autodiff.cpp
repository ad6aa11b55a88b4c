#include "mcgan/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace mcgan {

namespace {

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Graph::Node& Graph::node(NodeId id) const {
  check(id);
  return nodes_[static_cast<std::size_t>(id.index)];
}

void Graph::check(NodeId id) const {
  if (id.index < 0 || static_cast<std::size_t>(id.index) >= nodes_.size())
    throw GraphError("unknown node id", id.index);
}

NodeId Graph::push(Node n) {
  const auto idx = static_cast<std::int32_t>(nodes_.size());
  bool ready = true;
  if (n.a.valid()) ready = ready && nodes_[n.a.index].has_value;
  if (n.b.valid()) ready = ready && nodes_[n.b.index].has_value;
  if (n.kind != OpKind::Leaf && ready) compute(n);
  nodes_.push_back(std::move(n));
  return NodeId{idx};
}

NodeId Graph::leaf(Matrix value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.rows = value.rows();
  n.cols = value.cols();
  n.value = std::move(value);
  n.has_value = true;
  return push(std::move(n));
}

NodeId Graph::placeholder(Eigen::Index rows, Eigen::Index cols) {
  if (rows <= 0 || cols <= 0)
    throw GraphError("placeholder shape must be positive", static_cast<std::int64_t>(nodes_.size()));
  Node n;
  n.kind = OpKind::Leaf;
  n.rows = rows;
  n.cols = cols;
  return push(std::move(n));
}

NodeId Graph::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return leaf(std::move(m));
}

void Graph::compute(Node& n) {
  const Matrix* a = n.a.valid() ? &nodes_[n.a.index].value : nullptr;
  const Matrix* b = n.b.valid() ? &nodes_[n.b.index].value : nullptr;
  switch (n.kind) {
    case OpKind::Leaf:
      return;
    case OpKind::MatMul:
      n.value.noalias() = (*a) * (*b);
      break;
    case OpKind::Transpose:
      n.value = a->transpose();
      break;
    case OpKind::AddRow:
      n.value = a->rowwise() + b->row(0);
      break;
    case OpKind::SumRows:
      n.value = a->colwise().sum();
      break;
    case OpKind::BroadcastRows:
      n.value = a->replicate(n.iattr, 1);
      break;
    case OpKind::SumCols:
      n.value = a->rowwise().sum();
      break;
    case OpKind::BroadcastCols:
      n.value = a->replicate(1, n.iattr);
      break;
    case OpKind::SumAll:
      n.value = Matrix::Constant(1, 1, a->sum());
      break;
    case OpKind::BroadcastScalar:
      n.value = Matrix::Constant(n.rows, n.cols, (*a)(0, 0));
      break;
    case OpKind::Add:
      n.value = *a + *b;
      break;
    case OpKind::Sub:
      n.value = *a - *b;
      break;
    case OpKind::Mul:
      n.value = a->cwiseProduct(*b);
      break;
    case OpKind::Scale:
      n.value = (*a) * n.attr;
      break;
    case OpKind::AddConst:
      n.value = a->array() + n.attr;
      break;
    case OpKind::Relu:
      n.value = a->cwiseMax(0.0);
      break;
    case OpKind::LeakyRelu:
      n.value = a->unaryExpr([](double x) { return x > 0 ? x : kLeakySlope * x; });
      break;
    case OpKind::Tanh:
      n.value = a->array().tanh();
      break;
    case OpKind::Softplus:
      n.value = a->unaryExpr(&softplus_scalar);
      break;
    case OpKind::Sigmoid:
      n.value = a->unaryExpr(&sigmoid_scalar);
      break;
    case OpKind::Exp: {
      std::int64_t clamped = 0;
      n.value = a->unaryExpr([&clamped](double x) {
        if (x > kExpClamp) {
          ++clamped;
          x = kExpClamp;
        }
        return std::exp(x);
      });
      exp_clamps_ += clamped;
      exp_elements_ += a->size();
      break;
    }
    case OpKind::Log:
      n.value = a->array().log();
      break;
    case OpKind::Sqrt:
      n.value = a->array().sqrt();
      break;
    case OpKind::Reciprocal:
      n.value = a->unaryExpr([](double x) { return x == 0.0 ? 0.0 : 1.0 / x; });
      break;
    case OpKind::StepMask:
      n.value = a->unaryExpr([](double x) { return x > 0 ? 1.0 : 0.0; });
      break;
    case OpKind::LeakyMask:
      n.value = a->unaryExpr([](double x) { return x > 0 ? 1.0 : kLeakySlope; });
      break;
    case OpKind::ConcatCols:
      n.value.resize(n.rows, n.cols);
      n.value.leftCols(a->cols()) = *a;
      n.value.rightCols(b->cols()) = *b;
      break;
    case OpKind::SliceCols:
      n.value = a->middleCols(n.iattr, n.cols);
      break;
    case OpKind::PadCols:
      n.value = Matrix::Zero(n.rows, n.cols);
      n.value.middleCols(n.iattr, a->cols()) = *a;
      break;
  }
  n.has_value = true;
}

namespace {

[[noreturn]] void shape_error(const char* op, std::size_t at) {
  throw GraphError(std::string("shape mismatch in ") + op, static_cast<std::int64_t>(at));
}

}  // namespace

NodeId Graph::matmul(NodeId a, NodeId b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (na.cols != nb.rows) shape_error("matmul", nodes_.size());
  Node n;
  n.kind = OpKind::MatMul;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = nb.cols;
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
  const auto& na = node(a);
  Node n;
  n.kind = OpKind::Transpose;
  n.a = a;
  n.rows = na.cols;
  n.cols = na.rows;
  return push(std::move(n));
}

NodeId Graph::add_row(NodeId x, NodeId row) {
  const auto& nx = node(x);
  const auto& nr = node(row);
  if (nr.rows != 1 || nr.cols != nx.cols) shape_error("add_row", nodes_.size());
  Node n;
  n.kind = OpKind::AddRow;
  n.a = x;
  n.b = row;
  n.rows = nx.rows;
  n.cols = nx.cols;
  return push(std::move(n));
}

NodeId Graph::sum_rows(NodeId x) {
  const auto& nx = node(x);
  Node n;
  n.kind = OpKind::SumRows;
  n.a = x;
  n.rows = 1;
  n.cols = nx.cols;
  return push(std::move(n));
}

NodeId Graph::mean_rows(NodeId x) {
  const double inv = 1.0 / static_cast<double>(node(x).rows);
  return scale(sum_rows(x), inv);
}

NodeId Graph::broadcast_rows(NodeId row, Eigen::Index count) {
  const auto& nr = node(row);
  if (nr.rows != 1 || count <= 0) shape_error("broadcast_rows", nodes_.size());
  Node n;
  n.kind = OpKind::BroadcastRows;
  n.a = row;
  n.iattr = count;
  n.rows = count;
  n.cols = nr.cols;
  return push(std::move(n));
}

NodeId Graph::sum_cols(NodeId x) {
  const auto& nx = node(x);
  Node n;
  n.kind = OpKind::SumCols;
  n.a = x;
  n.rows = nx.rows;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::broadcast_cols(NodeId col, Eigen::Index k) {
  const auto& nc = node(col);
  if (nc.cols != 1 || k <= 0) shape_error("broadcast_cols", nodes_.size());
  Node n;
  n.kind = OpKind::BroadcastCols;
  n.a = col;
  n.iattr = k;
  n.rows = nc.rows;
  n.cols = k;
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
  check(x);
  Node n;
  n.kind = OpKind::SumAll;
  n.a = x;
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::mean(NodeId x) {
  const auto& nx = node(x);
  const double inv = 1.0 / static_cast<double>(nx.rows * nx.cols);
  return scale(sum(x), inv);
}

NodeId Graph::broadcast_scalar(NodeId s, Eigen::Index r, Eigen::Index c) {
  const auto& ns = node(s);
  if (ns.rows != 1 || ns.cols != 1 || r <= 0 || c <= 0) shape_error("broadcast_scalar", nodes_.size());
  Node n;
  n.kind = OpKind::BroadcastScalar;
  n.a = s;
  n.rows = r;
  n.cols = c;
  return push(std::move(n));
}

namespace {
bool same_shape(Eigen::Index r1, Eigen::Index c1, Eigen::Index r2, Eigen::Index c2) {
  return r1 == r2 && c1 == c2;
}
}  // namespace

#define MCGAN_BINARY_ELEMENTWISE(fn, KIND)                                  \
  NodeId Graph::fn(NodeId a, NodeId b) {                                    \
    const auto& na = node(a);                                               \
    const auto& nb = node(b);                                               \
    if (!same_shape(na.rows, na.cols, nb.rows, nb.cols))                    \
      shape_error(#fn, nodes_.size());                                      \
    Node n;                                                                 \
    n.kind = OpKind::KIND;                                                  \
    n.a = a;                                                                \
    n.b = b;                                                                \
    n.rows = na.rows;                                                       \
    n.cols = na.cols;                                                       \
    return push(std::move(n));                                              \
  }

MCGAN_BINARY_ELEMENTWISE(add, Add)
MCGAN_BINARY_ELEMENTWISE(sub, Sub)
MCGAN_BINARY_ELEMENTWISE(mul, Mul)
#undef MCGAN_BINARY_ELEMENTWISE

#define MCGAN_UNARY(fn, KIND)           \
  NodeId Graph::fn(NodeId x) {          \
    const auto& nx = node(x);           \
    Node n;                             \
    n.kind = OpKind::KIND;              \
    n.a = x;                            \
    n.rows = nx.rows;                   \
    n.cols = nx.cols;                   \
    return push(std::move(n));          \
  }

MCGAN_UNARY(relu, Relu)
MCGAN_UNARY(leaky_relu, LeakyRelu)
MCGAN_UNARY(tanh, Tanh)
MCGAN_UNARY(softplus, Softplus)
MCGAN_UNARY(sigmoid, Sigmoid)
MCGAN_UNARY(exp, Exp)
MCGAN_UNARY(log, Log)
MCGAN_UNARY(sqrt, Sqrt)
MCGAN_UNARY(reciprocal, Reciprocal)
MCGAN_UNARY(step_mask, StepMask)
MCGAN_UNARY(leaky_mask, LeakyMask)
#undef MCGAN_UNARY

NodeId Graph::scale(NodeId x, double factor) {
  const auto& nx = node(x);
  Node n;
  n.kind = OpKind::Scale;
  n.a = x;
  n.attr = factor;
  n.rows = nx.rows;
  n.cols = nx.cols;
  return push(std::move(n));
}

NodeId Graph::add_const(NodeId x, double c) {
  const auto& nx = node(x);
  Node n;
  n.kind = OpKind::AddConst;
  n.a = x;
  n.attr = c;
  n.rows = nx.rows;
  n.cols = nx.cols;
  return push(std::move(n));
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (na.rows != nb.rows) shape_error("concat_cols", nodes_.size());
  Node n;
  n.kind = OpKind::ConcatCols;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols + nb.cols;
  return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, Eigen::Index offset, Eigen::Index width) {
  const auto& nx = node(x);
  if (offset < 0 || width <= 0 || offset + width > nx.cols) shape_error("slice_cols", nodes_.size());
  Node n;
  n.kind = OpKind::SliceCols;
  n.a = x;
  n.iattr = offset;
  n.rows = nx.rows;
  n.cols = width;
  return push(std::move(n));
}

NodeId Graph::pad_cols(NodeId x, Eigen::Index offset, Eigen::Index total) {
  const auto& nx = node(x);
  if (offset < 0 || offset + nx.cols > total) shape_error("pad_cols", nodes_.size());
  Node n;
  n.kind = OpKind::PadCols;
  n.a = x;
  n.iattr = offset;
  n.rows = nx.rows;
  n.cols = total;
  return push(std::move(n));
}

NodeId Graph::squared_norm_rows(NodeId x) { return sum_cols(mul(x, x)); }

NodeId Graph::mul_scalar(NodeId x, NodeId s) {
  const auto r = rows(x);
  const auto c = cols(x);
  return mul(x, broadcast_scalar(s, r, c));
}

const Matrix& Graph::value(NodeId id) const {
  const auto& n = node(id);
  if (!n.has_value) throw GraphError("node has no value (unbound leaf upstream)", id.index);
  return n.value;
}

double Graph::scalar_value(NodeId id) const {
  const auto& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) throw GraphError("node is not scalar", id.index);
  return v(0, 0);
}

bool Graph::has_value(NodeId id) const { return node(id).has_value; }

std::vector<NodeId> Graph::leaves() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::Leaf) out.push_back(NodeId{static_cast<std::int32_t>(i)});
  return out;
}

void Graph::evaluate(const Bindings& bindings) {
  for (const auto& [id, m] : bindings) {
    check(NodeId{id});
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.kind != OpKind::Leaf) throw GraphError("binding targets a non-leaf node", id);
    if (m.rows() != n.rows || m.cols() != n.cols) throw GraphError("binding shape mismatch", id);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind != OpKind::Leaf) continue;
    if (!bindings.contains(static_cast<std::int32_t>(i)))
      throw GraphError("unbound leaf", static_cast<std::int64_t>(i));
  }
  exp_clamps_ = 0;
  exp_elements_ = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    if (n.kind == OpKind::Leaf) {
      n.value = bindings.at(static_cast<std::int32_t>(i));
      n.has_value = true;
    } else {
      compute(n);
    }
  }
}

namespace {

// Marks nodes whose value depends on any of `wrt`, up to and including `output`.
std::vector<char> dependency_mask(std::size_t count, std::span<const NodeId> wrt,
                                  auto&& inputs_of) {
  std::vector<char> needs(count, 0);
  for (auto w : wrt)
    if (static_cast<std::size_t>(w.index) < count) needs[w.index] = 1;
  for (std::size_t i = 0; i < count; ++i) {
    if (needs[i]) continue;
    const auto [a, b] = inputs_of(i);
    if ((a.valid() && needs[a.index]) || (b.valid() && needs[b.index])) needs[i] = 1;
  }
  return needs;
}

}  // namespace

GradientResult gradient(const Graph& graph, NodeId output, std::span<const NodeId> wrt) {
  const auto& out = graph.node(output);
  if (out.rows != 1 || out.cols != 1) throw GraphError("gradient requires a scalar output", output.index);
  for (auto w : wrt) {
    if (graph.node(w).kind != OpKind::Leaf) throw GraphError("gradient target is not a leaf", w.index);
  }
  const auto& nodes = graph.nodes_;
  const std::size_t count = static_cast<std::size_t>(output.index) + 1;
  const auto needs = dependency_mask(count, wrt, [&](std::size_t i) {
    return std::pair{nodes[i].a, nodes[i].b};
  });

  std::vector<Matrix> adj(count);
  std::vector<char> live(count, 0);
  auto accumulate = [&](NodeId target, auto&& expr) {
    if (!target.valid() || !needs[target.index]) return;
    if (!live[target.index]) {
      adj[target.index] = expr;
      live[target.index] = 1;
    } else {
      adj[target.index] += expr;
    }
  };

  adj[output.index] = Matrix::Ones(1, 1);
  live[output.index] = 1;

  for (std::size_t i = count; i-- > 0;) {
    if (!live[i] || !needs[i]) continue;
    const auto& n = nodes[i];
    const Matrix& g = adj[i];
    const Matrix* a = n.a.valid() ? &nodes[n.a.index].value : nullptr;
    const Matrix* b = n.b.valid() ? &nodes[n.b.index].value : nullptr;
    const bool need_a = n.a.valid() && needs[n.a.index];
    const bool need_b = n.b.valid() && needs[n.b.index];
    switch (n.kind) {
      case OpKind::Leaf:
      case OpKind::StepMask:
      case OpKind::LeakyMask:
        break;
      case OpKind::MatMul:
        if (need_a) accumulate(n.a, g * b->transpose());
        if (need_b) accumulate(n.b, a->transpose() * g);
        break;
      case OpKind::Transpose:
        accumulate(n.a, g.transpose());
        break;
      case OpKind::AddRow:
        accumulate(n.a, g);
        if (need_b) accumulate(n.b, g.colwise().sum());
        break;
      case OpKind::SumRows:
        accumulate(n.a, g.replicate(a->rows(), 1));
        break;
      case OpKind::BroadcastRows:
        accumulate(n.a, g.colwise().sum());
        break;
      case OpKind::SumCols:
        accumulate(n.a, g.replicate(1, a->cols()));
        break;
      case OpKind::BroadcastCols:
        accumulate(n.a, g.rowwise().sum());
        break;
      case OpKind::SumAll:
        accumulate(n.a, Matrix::Constant(a->rows(), a->cols(), g(0, 0)));
        break;
      case OpKind::BroadcastScalar:
        accumulate(n.a, Matrix::Constant(1, 1, g.sum()));
        break;
      case OpKind::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case OpKind::Sub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case OpKind::Mul:
        if (need_a) accumulate(n.a, g.cwiseProduct(*b));
        if (need_b) accumulate(n.b, g.cwiseProduct(*a));
        break;
      case OpKind::Scale:
        accumulate(n.a, g * n.attr);
        break;
      case OpKind::AddConst:
        accumulate(n.a, g);
        break;
      case OpKind::Relu:
        accumulate(n.a, g.binaryExpr(*a, [](double gv, double x) { return x > 0 ? gv : 0.0; }));
        break;
      case OpKind::LeakyRelu:
        accumulate(n.a, g.binaryExpr(*a, [](double gv, double x) { return x > 0 ? gv : kLeakySlope * gv; }));
        break;
      case OpKind::Tanh:
        accumulate(n.a, g.binaryExpr(n.value, [](double gv, double y) { return gv * (1.0 - y * y); }));
        break;
      case OpKind::Softplus:
        accumulate(n.a, g.binaryExpr(*a, [](double gv, double x) { return gv * sigmoid_scalar(x); }));
        break;
      case OpKind::Sigmoid:
        accumulate(n.a, g.binaryExpr(n.value, [](double gv, double y) { return gv * y * (1.0 - y); }));
        break;
      case OpKind::Exp:
        accumulate(n.a, g.cwiseProduct(n.value));
        break;
      case OpKind::Log:
        accumulate(n.a, g.cwiseQuotient(*a));
        break;
      case OpKind::Sqrt:
        accumulate(n.a, g.binaryExpr(n.value, [](double gv, double y) { return y > 0 ? gv / (2.0 * y) : 0.0; }));
        break;
      case OpKind::Reciprocal:
        accumulate(n.a, g.binaryExpr(n.value, [](double gv, double y) { return -gv * y * y; }));
        break;
      case OpKind::ConcatCols:
        if (need_a) accumulate(n.a, g.leftCols(a->cols()));
        if (need_b) accumulate(n.b, g.rightCols(b->cols()));
        break;
      case OpKind::SliceCols: {
        Matrix full = Matrix::Zero(a->rows(), a->cols());
        full.middleCols(n.iattr, n.cols) = g;
        accumulate(n.a, full);
        break;
      }
      case OpKind::PadCols:
        accumulate(n.a, g.middleCols(n.iattr, a->cols()));
        break;
    }
    // The adjoint of an interior node is no longer needed once propagated.
    if (n.kind != OpKind::Leaf) adj[i] = Matrix();
  }

  GradientResult result;
  result.wrt.assign(wrt.begin(), wrt.end());
  result.values.reserve(wrt.size());
  for (auto w : wrt) {
    const auto& nw = nodes[w.index];
    if (static_cast<std::size_t>(w.index) < count && live[w.index])
      result.values.push_back(adj[w.index]);
    else
      result.values.push_back(Matrix::Zero(nw.rows, nw.cols));
  }
  return result;
}

NodeId Graph::adjoint_contribution(NodeId id, int which, NodeId u) {
  // Copy what is needed: pushing new nodes may reallocate nodes_.
  const Node n = [&] {
    Node c;
    const auto& src = nodes_[id.index];
    c.kind = src.kind;
    c.a = src.a;
    c.b = src.b;
    c.attr = src.attr;
    c.iattr = src.iattr;
    c.rows = src.rows;
    c.cols = src.cols;
    return c;
  }();
  const NodeId self = id;
  switch (n.kind) {
    case OpKind::Leaf:
    case OpKind::StepMask:
    case OpKind::LeakyMask:
      return {};
    case OpKind::MatMul:
      return which == 0 ? matmul(u, transpose(n.b)) : matmul(transpose(n.a), u);
    case OpKind::Transpose:
      return transpose(u);
    case OpKind::AddRow:
      return which == 0 ? u : sum_rows(u);
    case OpKind::SumRows:
      return broadcast_rows(u, rows(n.a));
    case OpKind::BroadcastRows:
      return sum_rows(u);
    case OpKind::SumCols:
      return broadcast_cols(u, cols(n.a));
    case OpKind::BroadcastCols:
      return sum_cols(u);
    case OpKind::SumAll:
      return broadcast_scalar(u, rows(n.a), cols(n.a));
    case OpKind::BroadcastScalar:
      return sum(u);
    case OpKind::Add:
      return u;
    case OpKind::Sub:
      return which == 0 ? u : neg(u);
    case OpKind::Mul:
      return which == 0 ? mul(u, n.b) : mul(u, n.a);
    case OpKind::Scale:
      return scale(u, n.attr);
    case OpKind::AddConst:
      return u;
    case OpKind::Relu:
      return mul(u, step_mask(n.a));
    case OpKind::LeakyRelu:
      return mul(u, leaky_mask(n.a));
    case OpKind::Tanh:
      return mul(u, add_const(neg(mul(self, self)), 1.0));
    case OpKind::Softplus:
      return mul(u, sigmoid(n.a));
    case OpKind::Sigmoid:
      return mul(u, mul(self, add_const(neg(self), 1.0)));
    case OpKind::Exp:
      return mul(u, self);
    case OpKind::Log:
      return mul(u, reciprocal(n.a));
    case OpKind::Sqrt:
      return scale(mul(u, reciprocal(self)), 0.5);
    case OpKind::Reciprocal:
      return neg(mul(u, mul(self, self)));
    case OpKind::ConcatCols: {
      const auto wa = cols(n.a);
      return which == 0 ? slice_cols(u, 0, wa) : slice_cols(u, wa, cols(n.b));
    }
    case OpKind::SliceCols:
      return pad_cols(u, n.iattr, cols(n.a));
    case OpKind::PadCols:
      return slice_cols(u, n.iattr, cols(n.a));
  }
  return {};
}

std::vector<NodeId> Graph::grad_nodes(NodeId output, std::span<const NodeId> wrt) {
  check(output);
  for (auto w : wrt) {
    if (node(w).kind != OpKind::Leaf) throw GraphError("gradient target is not a leaf", w.index);
  }
  const std::size_t count = static_cast<std::size_t>(output.index) + 1;
  const auto needs = dependency_mask(count, wrt, [&](std::size_t i) {
    return std::pair{nodes_[i].a, nodes_[i].b};
  });

  std::vector<NodeId> adj(count);
  auto accumulate = [&](NodeId target, NodeId contribution) {
    if (!target.valid() || !contribution.valid() || !needs[target.index]) return;
    adj[target.index] = adj[target.index].valid() ? add(adj[target.index], contribution) : contribution;
  };

  if (needs[output.index]) {
    adj[output.index] = broadcast_scalar(scalar(1.0), rows(output), cols(output));
  }

  for (std::size_t i = count; i-- > 0;) {
    if (!adj[i].valid() || !needs[i]) continue;
    const NodeId id{static_cast<std::int32_t>(i)};
    const NodeId a = nodes_[i].a;
    const NodeId b = nodes_[i].b;
    if (a.valid() && needs[a.index]) accumulate(a, adjoint_contribution(id, 0, adj[i]));
    if (b.valid() && needs[b.index]) accumulate(b, adjoint_contribution(id, 1, adj[i]));
  }

  std::vector<NodeId> result;
  result.reserve(wrt.size());
  for (auto w : wrt) {
    const bool reached = static_cast<std::size_t>(w.index) < count && adj[w.index].valid();
    result.push_back(reached ? adj[w.index] : constant(Matrix::Zero(rows(w), cols(w))));
  }
  return result;
}

NodeId gradient_penalty(Graph& graph, NodeId d_output, NodeId x_hat) {
  const NodeId wrt[] = {x_hat};
  const NodeId grad = graph.grad_nodes(d_output, wrt).front();
  const NodeId norm = graph.sqrt(graph.squared_norm_rows(grad));
  const NodeId dev = graph.add_const(norm, -1.0);
  return graph.mean(graph.mul(dev, dev));
}

PenaltyGradient gradient_penalty_grad(Graph& graph, NodeId d_output, NodeId x_hat,
                                      std::span<const NodeId> params) {
  const NodeId penalty = gradient_penalty(graph, d_output, x_hat);
  PenaltyGradient out;
  out.penalty = graph.scalar_value(penalty);
  out.grads = gradient(graph, penalty, params);
  return out;
}

}  // namespace mcgan
