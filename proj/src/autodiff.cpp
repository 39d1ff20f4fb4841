#include "adaann/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adaann/errors.hpp"

namespace adaann {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kOffset: return "offset";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kDot: return "dot";
  }
  return "?";
}

NodeId Graph::push(Op op, std::span<const NodeId> args, double constant) {
  const auto id = static_cast<NodeId>(ops_.size());
  for (NodeId a : args) {
    if (a >= id) throw UsageError("graph operand refers to a later node");
  }
  ops_.push_back(op);
  arg_begin_.push_back(static_cast<std::uint32_t>(args_.size()));
  arg_count_.push_back(static_cast<std::uint32_t>(args.size()));
  args_.insert(args_.end(), args.begin(), args.end());
  constants_.push_back(constant);
  evaluated_ = false;
  return id;
}

NodeId Graph::input() {
  const NodeId id = push(Op::kInput, {});
  inputs_.push_back(id);
  return id;
}

NodeId Graph::constant(double value) { return push(Op::kConst, {}, value); }

NodeId Graph::add(NodeId a, NodeId b) { const NodeId ab[] = {a, b}; return push(Op::kAdd, ab); }
NodeId Graph::sub(NodeId a, NodeId b) { const NodeId ab[] = {a, b}; return push(Op::kSub, ab); }
NodeId Graph::mul(NodeId a, NodeId b) { const NodeId ab[] = {a, b}; return push(Op::kMul, ab); }
NodeId Graph::div(NodeId a, NodeId b) { const NodeId ab[] = {a, b}; return push(Op::kDiv, ab); }
NodeId Graph::neg(NodeId a) { return push(Op::kNeg, {&a, 1}); }
NodeId Graph::scale(NodeId a, double c) { return push(Op::kScale, {&a, 1}, c); }
NodeId Graph::offset(NodeId a, double c) { return push(Op::kOffset, {&a, 1}, c); }
NodeId Graph::exp(NodeId a) { return push(Op::kExp, {&a, 1}); }
NodeId Graph::log(NodeId a) { return push(Op::kLog, {&a, 1}); }
NodeId Graph::tanh(NodeId a) { return push(Op::kTanh, {&a, 1}); }
NodeId Graph::relu(NodeId a) { return push(Op::kRelu, {&a, 1}); }
NodeId Graph::square(NodeId a) { return push(Op::kSquare, {&a, 1}); }

NodeId Graph::sum(std::span<const NodeId> terms) { return push(Op::kSum, terms); }

NodeId Graph::dot(std::span<const NodeId> a, std::span<const NodeId> b) {
  if (a.size() != b.size()) throw UsageError("dot: operand lengths differ");
  std::vector<NodeId> interleaved;
  interleaved.reserve(2 * a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    interleaved.push_back(a[i]);
    interleaved.push_back(b[i]);
  }
  return push(Op::kDot, interleaved);
}

void Graph::clear() {
  ops_.clear();
  arg_begin_.clear();
  arg_count_.clear();
  constants_.clear();
  args_.clear();
  inputs_.clear();
  evaluated_ = false;
}

void Graph::forward(std::span<const double> inputs) {
  if (inputs.size() != inputs_.size()) {
    throw UsageError("forward: expected " + std::to_string(inputs_.size()) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
  const std::size_t n = ops_.size();
  values_.resize(n);
  std::size_t next_input = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const NodeId* arg = args_.data() + arg_begin_[i];
    double v = 0.0;
    switch (ops_[i]) {
      case Op::kInput: v = inputs[next_input++]; break;
      case Op::kConst: v = constants_[i]; break;
      case Op::kAdd: v = values_[arg[0]] + values_[arg[1]]; break;
      case Op::kSub: v = values_[arg[0]] - values_[arg[1]]; break;
      case Op::kMul: v = values_[arg[0]] * values_[arg[1]]; break;
      case Op::kDiv: v = values_[arg[0]] / values_[arg[1]]; break;
      case Op::kNeg: v = -values_[arg[0]]; break;
      case Op::kScale: v = constants_[i] * values_[arg[0]]; break;
      case Op::kOffset: v = values_[arg[0]] + constants_[i]; break;
      case Op::kExp: v = std::exp(values_[arg[0]]); break;
      case Op::kLog: v = std::log(values_[arg[0]]); break;
      case Op::kTanh: v = std::tanh(values_[arg[0]]); break;
      case Op::kRelu: v = values_[arg[0]] > 0.0 ? values_[arg[0]] : 0.0; break;
      case Op::kSquare: v = values_[arg[0]] * values_[arg[0]]; break;
      case Op::kSum:
        for (std::uint32_t k = 0; k < arg_count_[i]; ++k) v += values_[arg[k]];
        break;
      case Op::kDot:
        for (std::uint32_t k = 0; k < arg_count_[i]; k += 2) {
          v += values_[arg[k]] * values_[arg[k + 1]];
        }
        break;
    }
    if (!std::isfinite(v)) {
      evaluated_ = false;
      throw NumericOverflow("non-finite value in graph node " + std::to_string(i) +
                            " (op " + std::string(op_name(ops_[i])) + ")");
    }
    values_[i] = v;
  }
  evaluated_ = true;
}

void Graph::backward(NodeId root) {
  const std::pair<NodeId, double> seed{root, 1.0};
  backward(std::span(&seed, 1));
}

void Graph::backward(std::span<const std::pair<NodeId, double>> seeds) {
  if (!evaluated_) throw UsageError("backward called before forward");
  const std::size_t n = ops_.size();
  adjoints_.assign(n, 0.0);
  std::size_t last = 0;
  for (const auto& [id, weight] : seeds) {
    if (id >= n) throw UsageError("backward: seed node out of range");
    adjoints_[id] += weight;
    last = std::max<std::size_t>(last, id + 1);
  }
  for (std::size_t i = last; i-- > 0;) {
    const double g = adjoints_[i];
    if (g == 0.0) continue;
    const NodeId* arg = args_.data() + arg_begin_[i];
    switch (ops_[i]) {
      case Op::kInput:
      case Op::kConst:
        break;
      case Op::kAdd:
        adjoints_[arg[0]] += g;
        adjoints_[arg[1]] += g;
        break;
      case Op::kSub:
        adjoints_[arg[0]] += g;
        adjoints_[arg[1]] -= g;
        break;
      case Op::kMul:
        adjoints_[arg[0]] += g * values_[arg[1]];
        adjoints_[arg[1]] += g * values_[arg[0]];
        break;
      case Op::kDiv: {
        const double inv = 1.0 / values_[arg[1]];
        adjoints_[arg[0]] += g * inv;
        adjoints_[arg[1]] -= g * values_[i] * inv;
        break;
      }
      case Op::kNeg: adjoints_[arg[0]] -= g; break;
      case Op::kScale: adjoints_[arg[0]] += g * constants_[i]; break;
      case Op::kOffset: adjoints_[arg[0]] += g; break;
      case Op::kExp: adjoints_[arg[0]] += g * values_[i]; break;
      case Op::kLog: adjoints_[arg[0]] += g / values_[arg[0]]; break;
      case Op::kTanh: adjoints_[arg[0]] += g * (1.0 - values_[i] * values_[i]); break;
      case Op::kRelu:
        if (values_[arg[0]] > 0.0) adjoints_[arg[0]] += g;
        break;
      case Op::kSquare: adjoints_[arg[0]] += 2.0 * g * values_[arg[0]]; break;
      case Op::kSum:
        for (std::uint32_t k = 0; k < arg_count_[i]; ++k) adjoints_[arg[k]] += g;
        break;
      case Op::kDot:
        for (std::uint32_t k = 0; k < arg_count_[i]; k += 2) {
          adjoints_[arg[k]] += g * values_[arg[k + 1]];
          adjoints_[arg[k + 1]] += g * values_[arg[k]];
        }
        break;
    }
  }
}

namespace {
Var wrap(Var like, NodeId id) { return {like.graph, id}; }
}  // namespace

Var operator+(Var a, Var b) { return wrap(a, a.graph->add(a.id, b.id)); }
Var operator-(Var a, Var b) { return wrap(a, a.graph->sub(a.id, b.id)); }
Var operator*(Var a, Var b) { return wrap(a, a.graph->mul(a.id, b.id)); }
Var operator/(Var a, Var b) { return wrap(a, a.graph->div(a.id, b.id)); }
Var operator-(Var a) { return wrap(a, a.graph->neg(a.id)); }
Var operator+(Var a, double c) { return wrap(a, a.graph->offset(a.id, c)); }
Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, double c) { return wrap(a, a.graph->offset(a.id, -c)); }
Var operator-(double c, Var a) { return wrap(a, a.graph->offset(a.graph->neg(a.id), c)); }
Var operator*(Var a, double c) { return wrap(a, a.graph->scale(a.id, c)); }
Var operator*(double c, Var a) { return a * c; }
Var operator/(Var a, double c) { return wrap(a, a.graph->scale(a.id, 1.0 / c)); }
Var exp(Var a) { return wrap(a, a.graph->exp(a.id)); }
Var log(Var a) { return wrap(a, a.graph->log(a.id)); }
Var tanh(Var a) { return wrap(a, a.graph->tanh(a.id)); }
Var relu(Var a) { return wrap(a, a.graph->relu(a.id)); }
Var square(Var a) { return wrap(a, a.graph->square(a.id)); }

void ParamVector::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

void ParamVector::resize(std::size_t n) {
  values_.resize(n, 0.0);
  grads_.resize(n, 0.0);
}

double fd_check(const LossFunction& loss, std::span<const double> params, double step) {
  if (!(step > 0.0)) throw UsageError("fd_check: step must be positive");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> analytic(x.size(), 0.0);
  loss(x, analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = loss(x, {});
    x[i] = saved - step;
    const double down = loss(x, {});
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + step));
  }
  return worst;
}

}  // namespace adaann
