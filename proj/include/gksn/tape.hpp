#pragma once

// Reverse-mode differentiation over scalar computation graphs.
//
// A Tape is an append-only list of nodes in topological order. Values are
// computed eagerly while recording; backward() walks the list once in reverse
// and accumulates adjoints. A tape supports one backward pass per forward
// pass; call reset() to reuse it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gksn/error.hpp"

namespace gksn::ad {

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  relu,
  sqrt,
  sin,
  ln,
  max0,
  dot,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;

  double value() const;
};

/// Adjoints of every node after a backward pass.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<double> adjoints) : adjoints_(std::move(adjoints)) {}

  double operator[](Var v) const { return adjoints_.at(v.index); }
  std::span<const double> raw() const { return adjoints_; }

 private:
  std::vector<double> adjoints_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// New leaf node. Leaves are the only nodes with user-set values.
  Var variable(double value);
  /// Leaf that is not an input of interest: relu/max0 nodes depending only
  /// on constants do not count towards kink_margin().
  Var constant(double value);

  /// Records an operation. Binary ops take two operands, unary ops one, and
  /// dot takes 2k operands laid out as (x_1..x_k, y_1..y_k).
  /// Throws GraphError on division by zero, sqrt of a negative number or ln
  /// of a non-positive number.
  Var record(Op op, std::span<const Var> operands);

  double value(Var v) const { return nodes_.at(v.index).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Smallest |argument| seen by a relu or max0 node that depends on a
  /// variable() leaf, since the last reset.
  /// Finite-difference checks use it to detect kink collisions.
  double kink_margin() const noexcept { return kink_margin_; }

  /// Seeds d(output)/d(output) = 1 and propagates adjoints to every node.
  /// The subgradient of relu and max0 at exactly zero is 0; so is the
  /// derivative of sqrt at 0.
  Gradients backward(Var output);

  void reset();

 private:
  struct Node {
    Op op;
    std::uint32_t first;  // offset into args_
    std::uint32_t count;
    double value;
    bool active;  // depends on a variable() leaf
  };

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> args_;
  double kink_margin_ = 1e300;
  bool consumed_ = false;
};

inline double Var::value() const { return tape->value(*this); }

// Operator overloads. Mixed Var/double operands record the double as a leaf.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);
Var& operator+=(Var& a, Var b);
Var& operator+=(Var& a, double b);

Var relu(Var a);
Var max0(Var a);
Var sqrt(Var a);
Var sin(Var a);
Var log(Var a);
Var dot(std::span<const Var> x, std::span<const Var> y);

// Scalar overloads so templated code compiles for T = double.
inline double relu(double a) { return a > 0.0 ? a : 0.0; }
inline double max0(double a) { return a > 0.0 ? a : 0.0; }

inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.value(); }

/// Max over coordinates of |analytic - central| / max(|analytic| + |central|, floor),
/// where the function is re-evaluated on fresh tapes for the central
/// differences. floor is relative_error_floor() of the analytic gradient.
struct GradCheck {
  double max_rel_error = 0.0;
  double kink_margin = 0.0;  // from the analytic pass
};

using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

GradCheck grad_check(const TapeFunction& f, std::span<const double> point, double step = 1e-5);

/// 1e-3 of the largest analytic component (at least 1e-12). Components far
/// below the gradient's own scale are compared against it, since central
/// differences cannot resolve them beyond roundoff.
double relative_error_floor(std::span<const double> analytic);

/// |analytic - central| / max(|analytic| + |central|, floor).
inline double fd_relative_error(double analytic, double central, double floor) {
  return std::abs(analytic - central) / std::max(std::abs(analytic) + std::abs(central), floor);
}

/// Value and gradient of f at point on a fresh tape.
double value_and_gradient(const TapeFunction& f, std::span<const double> point,
                          std::span<double> gradient);

}  // namespace gksn::ad
