#pragma once

// Reverse-mode differentiation over a static graph of scalar nodes.
//
// A Graph is built once (inputs, constants and operations), then evaluated
// any number of times with `forward(inputs)` followed by `backward(root)`.
// Nodes are stored in creation order, which is a valid topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace adaann {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  kInput,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScale,   // constant * x
  kOffset,  // x + constant
  kExp,
  kLog,
  kTanh,
  kRelu,
  kSquare,
  kSum,  // n-ary
  kDot,  // n-ary, args interleaved as (a0, b0, a1, b1, ...)
};

std::string_view op_name(Op op);

class Graph {
 public:
  NodeId input();
  NodeId constant(double value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId scale(NodeId a, double c);
  NodeId offset(NodeId a, double c);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId square(NodeId a);
  NodeId sum(std::span<const NodeId> terms);
  NodeId dot(std::span<const NodeId> a, std::span<const NodeId> b);

  /// Evaluates every node. `inputs` are assigned to input nodes in creation
  /// order. Throws NumericOverflow on the first non-finite value.
  void forward(std::span<const double> inputs);

  /// Adjoints of every node w.r.t. `root`. Throws UsageError if forward has
  /// not been run since the graph was last modified.
  void backward(NodeId root);

  /// Vector-Jacobian product: adjoints of sum_k weight_k * node_k.
  void backward(std::span<const std::pair<NodeId, double>> seeds);

  double value(NodeId id) const { return values_[id]; }
  double adjoint(NodeId id) const { return adjoints_[id]; }

  std::span<const NodeId> inputs() const { return inputs_; }
  std::size_t size() const { return ops_.size(); }

  /// Drops all nodes but keeps allocated capacity.
  void clear();

 private:
  NodeId push(Op op, std::span<const NodeId> args, double constant = 0.0);

  std::vector<Op> ops_;
  std::vector<std::uint32_t> arg_begin_;
  std::vector<std::uint32_t> arg_count_;
  std::vector<double> constants_;
  std::vector<NodeId> args_;
  std::vector<NodeId> inputs_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
  bool evaluated_ = false;
};

/// Lightweight handle so that generic numeric code (ODE right-hand sides,
/// small networks) can be instantiated over graph nodes.
struct Var {
  Graph* graph;
  NodeId id;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var square(Var a);

/// Flat trainable parameters with a gradient buffer of equal length.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n) : values_(n, 0.0), grads_(n, 0.0) {}

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }
  void zero_grads();
  void resize(std::size_t n);

 private:
  std::vector<double> values_;
  std::vector<double> grads_;
};

/// Loss evaluated at a parameter vector; writes the analytic gradient into
/// `grad` when it is non-empty.
using LossFunction =
    std::function<double(std::span<const double> params, std::span<double> grad)>;

/// Max over coordinates of |analytic - central difference| / (|analytic| + step).
double fd_check(const LossFunction& loss, std::span<const double> params, double step);

}  // namespace adaann
