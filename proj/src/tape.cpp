#include "gksn/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace gksn::ad {

namespace {

std::size_t arity(Op op) {
  switch (op) {
    case Op::leaf:
      return 0;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div:
      return 2;
    case Op::neg:
    case Op::relu:
    case Op::sqrt:
    case Op::sin:
    case Op::ln:
    case Op::max0:
      return 1;
    case Op::dot:
      return 0;  // variadic
  }
  return 0;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::relu: return "relu";
    case Op::sqrt: return "sqrt";
    case Op::sin: return "sin";
    case Op::ln: return "ln";
    case Op::max0: return "max0";
    case Op::dot: return "dot";
  }
  return "?";
}

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw GraphError("operands recorded on different tapes");
  }
  return *a.tape;
}

}  // namespace

Var Tape::variable(double value) {
  if (consumed_) {
    throw GraphError("tape already differentiated; call reset() before recording");
  }
  nodes_.push_back({Op::leaf, static_cast<std::uint32_t>(args_.size()), 0, value, true});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(double value) {
  const Var v = variable(value);
  nodes_.back().active = false;
  return v;
}

Var Tape::record(Op op, std::span<const Var> operands) {
  if (consumed_) {
    throw GraphError("tape already differentiated; call reset() before recording");
  }
  if (op == Op::leaf) {
    throw GraphError("leaves are created with variable()");
  }
  if (op == Op::dot) {
    if (operands.size() % 2 != 0) {
      throw GraphError("dot needs an even number of operands");
    }
  } else if (operands.size() != arity(op)) {
    throw GraphError(std::string(op_name(op)) + ": wrong operand count");
  }
  for (const Var& v : operands) {
    if (v.tape != this || v.index >= nodes_.size()) {
      throw GraphError(std::string(op_name(op)) + ": operand not on this tape");
    }
  }

  auto val = [&](std::size_t i) { return nodes_[operands[i].index].value; };
  double out = 0.0;
  switch (op) {
    case Op::add: out = val(0) + val(1); break;
    case Op::sub: out = val(0) - val(1); break;
    case Op::mul: out = val(0) * val(1); break;
    case Op::div:
      if (val(1) == 0.0) throw GraphError("div: division by zero");
      out = val(0) / val(1);
      break;
    case Op::neg: out = -val(0); break;
    case Op::relu:
    case Op::max0:
      if (nodes_[operands[0].index].active) {
        kink_margin_ = std::min(kink_margin_, std::abs(val(0)));
      }
      out = val(0) > 0.0 ? val(0) : 0.0;
      break;
    case Op::sqrt:
      if (val(0) < 0.0) throw GraphError("sqrt: negative argument");
      out = std::sqrt(val(0));
      break;
    case Op::sin: out = std::sin(val(0)); break;
    case Op::ln:
      if (!(val(0) > 0.0)) throw GraphError("ln: non-positive argument");
      out = std::log(val(0));
      break;
    case Op::dot: {
      const std::size_t k = operands.size() / 2;
      for (std::size_t i = 0; i < k; ++i) out += val(i) * val(k + i);
      break;
    }
    case Op::leaf: break;
  }

  const auto first = static_cast<std::uint32_t>(args_.size());
  for (const Var& v : operands) args_.push_back(v.index);
  bool active = false;
  for (const Var& v : operands) active = active || nodes_[v.index].active;
  nodes_.push_back({op, first, static_cast<std::uint32_t>(operands.size()), out, active});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Gradients Tape::backward(Var output) {
  if (output.tape != this || output.index >= nodes_.size()) {
    throw GraphError("backward: output not on this tape");
  }
  if (consumed_) {
    throw GraphError("backward called twice without reset()");
  }
  consumed_ = true;

  std::vector<double> adj(nodes_.size(), 0.0);
  adj[output.index] = 1.0;
  for (std::size_t idx = output.index + 1; idx-- > 0;) {
    const Node& node = nodes_[idx];
    const double g = adj[idx];
    if (g == 0.0 || node.op == Op::leaf) continue;
    const std::uint32_t* a = args_.data() + node.first;
    auto v = [&](std::size_t i) { return nodes_[a[i]].value; };
    switch (node.op) {
      case Op::add:
        adj[a[0]] += g;
        adj[a[1]] += g;
        break;
      case Op::sub:
        adj[a[0]] += g;
        adj[a[1]] -= g;
        break;
      case Op::mul:
        adj[a[0]] += g * v(1);
        adj[a[1]] += g * v(0);
        break;
      case Op::div:
        adj[a[0]] += g / v(1);
        adj[a[1]] -= g * node.value / v(1);
        break;
      case Op::neg:
        adj[a[0]] -= g;
        break;
      case Op::relu:
      case Op::max0:
        if (v(0) > 0.0) adj[a[0]] += g;
        break;
      case Op::sqrt:
        if (node.value > 0.0) adj[a[0]] += g * 0.5 / node.value;
        break;
      case Op::sin:
        adj[a[0]] += g * std::cos(v(0));
        break;
      case Op::ln:
        adj[a[0]] += g / v(0);
        break;
      case Op::dot: {
        const std::size_t k = node.count / 2;
        for (std::size_t i = 0; i < k; ++i) {
          adj[a[i]] += g * v(k + i);
          adj[a[k + i]] += g * v(i);
        }
        break;
      }
      case Op::leaf:
        break;
    }
  }
  return Gradients(std::move(adj));
}

void Tape::reset() {
  nodes_.clear();
  args_.clear();
  kink_margin_ = 1e300;
  consumed_ = false;
}

namespace {
Var binary(Op op, Var a, Var b) {
  const std::array<Var, 2> ops{a, b};
  return tape_of(a, b).record(op, ops);
}
Var unary(Op op, Var a) {
  if (a.tape == nullptr) throw GraphError("operand has no tape");
  const std::array<Var, 1> ops{a};
  return a.tape->record(op, ops);
}
}  // namespace

Var operator+(Var a, Var b) { return binary(Op::add, a, b); }
Var operator-(Var a, Var b) { return binary(Op::sub, a, b); }
Var operator*(Var a, Var b) { return binary(Op::mul, a, b); }
Var operator/(Var a, Var b) { return binary(Op::div, a, b); }
Var operator-(Var a) { return unary(Op::neg, a); }
Var operator+(Var a, double b) { return a + a.tape->constant(b); }
Var operator+(double a, Var b) { return b.tape->constant(a) + b; }
Var operator-(Var a, double b) { return a - a.tape->constant(b); }
Var operator-(double a, Var b) { return b.tape->constant(a) - b; }
Var operator*(Var a, double b) { return a * a.tape->constant(b); }
Var operator*(double a, Var b) { return b.tape->constant(a) * b; }
Var operator/(Var a, double b) { return a / a.tape->constant(b); }
Var operator/(double a, Var b) { return b.tape->constant(a) / b; }
Var& operator+=(Var& a, Var b) { return a = a + b; }
Var& operator+=(Var& a, double b) { return a = a + b; }

Var relu(Var a) { return unary(Op::relu, a); }
Var max0(Var a) { return unary(Op::max0, a); }
Var sqrt(Var a) { return unary(Op::sqrt, a); }
Var sin(Var a) { return unary(Op::sin, a); }
Var log(Var a) { return unary(Op::ln, a); }

Var dot(std::span<const Var> x, std::span<const Var> y) {
  if (x.size() != y.size()) throw GraphError("dot: length mismatch");
  if (x.empty()) throw GraphError("dot: empty operands");
  std::vector<Var> ops(x.begin(), x.end());
  ops.insert(ops.end(), y.begin(), y.end());
  return x.front().tape->record(Op::dot, ops);
}

double value_and_gradient(const TapeFunction& f, std::span<const double> point,
                          std::span<double> gradient) {
  if (gradient.size() != point.size()) throw DimensionError("gradient size mismatch");
  Tape tape;
  std::vector<Var> xs;
  xs.reserve(point.size());
  for (double p : point) xs.push_back(tape.variable(p));
  const Var out = f(tape, xs);
  const Gradients g = tape.backward(out);
  for (std::size_t i = 0; i < xs.size(); ++i) gradient[i] = g[xs[i]];
  return out.value();
}

GradCheck grad_check(const TapeFunction& f, std::span<const double> point, double step) {
  GradCheck result;
  std::vector<double> analytic(point.size());
  {
    Tape tape;
    std::vector<Var> xs;
    for (double p : point) xs.push_back(tape.variable(p));
    const Var out = f(tape, xs);
    result.kink_margin = tape.kink_margin();
    const Gradients g = tape.backward(out);
    for (std::size_t i = 0; i < xs.size(); ++i) analytic[i] = g[xs[i]];
  }

  auto eval = [&](std::span<const double> x) {
    Tape tape;
    std::vector<Var> xs;
    for (double p : x) xs.push_back(tape.variable(p));
    return f(tape, xs).value();
  };

  const double floor = relative_error_floor(analytic);
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = eval(x);
    x[i] = orig - step;
    const double down = eval(x);
    x[i] = orig;
    const double central = (up - down) / (2.0 * step);
    result.max_rel_error =
        std::max(result.max_rel_error, fd_relative_error(analytic[i], central, floor));
  }
  return result;
}

double relative_error_floor(std::span<const double> analytic) {
  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  return std::max(1e-3 * scale, 1e-12);
}

}  // namespace gksn::ad
