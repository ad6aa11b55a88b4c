#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Graph is recorded define-by-run: every op appends a node, checks shapes,
// and computes its value eagerly when all inputs carry values. Leaves created
// with `placeholder` have no value until `evaluate` binds them.
//
// Rows are samples, columns are features. A scalar is a 1x1 matrix.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace mcgan {

using Matrix = Eigen::MatrixXd;

/// Thrown for malformed graphs: shape mismatches, unbound leaves, bad requests.
class GraphError : public std::invalid_argument {
 public:
  GraphError(const std::string& what, std::int64_t node)
      : std::invalid_argument(what + " (node " + std::to_string(node) + ")"), node_(node) {}
  std::int64_t node() const { return node_; }

 private:
  std::int64_t node_;
};

struct NodeId {
  std::int32_t index = -1;
  friend bool operator==(NodeId, NodeId) = default;
  bool valid() const { return index >= 0; }
};

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,          // a(n,k) * b(k,m)
  Transpose,
  AddRow,          // x(n,k) + row(1,k) broadcast over rows
  SumRows,         // (n,k) -> (1,k)
  BroadcastRows,   // (1,k) -> (n,k), n = attr
  SumCols,         // (n,k) -> (n,1)
  BroadcastCols,   // (n,1) -> (n,k), k = attr
  SumAll,          // -> (1,1)
  BroadcastScalar, // (1,1) -> (rows, cols)
  Add,
  Sub,
  Mul,             // elementwise
  Scale,           // x * attr
  AddConst,        // x + attr
  Relu,
  LeakyRelu,       // slope 0.2
  Tanh,
  Softplus,
  Sigmoid,
  Exp,             // argument clamped at kExpClamp
  Log,
  Sqrt,            // derivative taken as 0 where the value is 0
  Reciprocal,      // 1/x, defined as 0 where x == 0
  StepMask,        // relu'(x): 1 where x > 0, else 0; zero derivative
  LeakyMask,       // leaky'(x): 1 where x > 0, else 0.2; zero derivative
  ConcatCols,      // [a | b]
  SliceCols,       // columns [attr, attr + width)
  PadCols,         // places x at column offset attr inside zeros of width attr2
};

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kExpClamp = 700.0;

/// Per-leaf gradients, aligned with the `wrt` list they were requested for.
struct GradientResult {
  std::vector<NodeId> wrt;
  std::vector<Matrix> values;

  const Matrix& operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }
};

using Bindings = std::unordered_map<std::int32_t, Matrix>;

class Graph {
 public:
  Graph() = default;

  // Leaves.
  NodeId leaf(Matrix value);
  NodeId placeholder(Eigen::Index rows, Eigen::Index cols);
  NodeId constant(Matrix value) { return leaf(std::move(value)); }
  NodeId scalar(double v);

  // Ops.
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add_row(NodeId x, NodeId row);
  NodeId sum_rows(NodeId x);
  NodeId mean_rows(NodeId x);
  NodeId broadcast_rows(NodeId row, Eigen::Index n);
  NodeId sum_cols(NodeId x);
  NodeId broadcast_cols(NodeId col, Eigen::Index k);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId broadcast_scalar(NodeId s, Eigen::Index rows, Eigen::Index cols);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId add_const(NodeId x, double c);
  NodeId neg(NodeId x) { return scale(x, -1.0); }
  NodeId relu(NodeId x);
  NodeId leaky_relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId softplus(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId sqrt(NodeId x);
  NodeId reciprocal(NodeId x);
  NodeId step_mask(NodeId x);
  NodeId leaky_mask(NodeId x);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId slice_cols(NodeId x, Eigen::Index offset, Eigen::Index width);
  NodeId pad_cols(NodeId x, Eigen::Index offset, Eigen::Index total);
  /// Row-wise squared Euclidean norm, (n,k) -> (n,1).
  NodeId squared_norm_rows(NodeId x);
  /// x(n,k) times a 1x1 node, broadcast.
  NodeId mul_scalar(NodeId x, NodeId s);

  const Matrix& value(NodeId id) const;
  double scalar_value(NodeId id) const;
  bool has_value(NodeId id) const;
  Eigen::Index rows(NodeId id) const { return node(id).rows; }
  Eigen::Index cols(NodeId id) const { return node(id).cols; }
  OpKind kind(NodeId id) const { return node(id).kind; }
  std::size_t size() const { return nodes_.size(); }
  std::vector<NodeId> leaves() const;

  /// Re-evaluates every node in topological order with the given leaf values.
  /// Every leaf must be bound; bindings for non-leaves are rejected.
  void evaluate(const Bindings& bindings);

  /// Number of Exp arguments clamped at kExpClamp since construction.
  std::int64_t exp_clamp_count() const { return exp_clamps_; }
  std::int64_t exp_element_count() const { return exp_elements_; }

  /// Appends nodes computing d(sum of output)/d(wrt[i]) for each leaf and
  /// returns their ids. The returned nodes are themselves differentiable.
  std::vector<NodeId> grad_nodes(NodeId output, std::span<const NodeId> wrt);

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    NodeId a, b;
    double attr = 0.0;
    Eigen::Index iattr = 0;
    Eigen::Index iattr2 = 0;
    Eigen::Index rows = 0, cols = 0;
    bool has_value = false;
    Matrix value;
  };

  const Node& node(NodeId id) const;
  void check(NodeId id) const;
  NodeId push(Node n);
  void compute(Node& n);
  NodeId adjoint_contribution(NodeId id, int which, NodeId upstream);

  std::vector<Node> nodes_;
  std::int64_t exp_clamps_ = 0;
  std::int64_t exp_elements_ = 0;

  friend GradientResult gradient(const Graph&, NodeId, std::span<const NodeId>);
};

/// Exact reverse-mode gradient of a scalar output with respect to `wrt`.
GradientResult gradient(const Graph& graph, NodeId output, std::span<const NodeId> wrt);

/// Builds the penalty mean_i (||grad_{x_i} D||_2 - 1)^2 for the rows of x_hat,
/// where `d_output` is D evaluated row-wise at x_hat (shape (n,1) or (1,1)).
/// Returns the penalty node; it is differentiable through the inner gradient.
NodeId gradient_penalty(Graph& graph, NodeId d_output, NodeId x_hat);

/// Penalty value plus its gradient with respect to `params` (second order).
struct PenaltyGradient {
  double penalty = 0.0;
  GradientResult grads;
};
PenaltyGradient gradient_penalty_grad(Graph& graph, NodeId d_output, NodeId x_hat,
                                      std::span<const NodeId> params);

}  // namespace mcgan
