#pragma once

/**
 * @file
 * @brief Reverse-mode autodiff on an append-only tape.
 *
 * Every differentiable quantity in the library (network outputs, QP
 * solutions, robustness values) is an `Ad` scalar: a double plus an index
 * into a `Tape`. Plain doubles enter expressions as constants and are not
 * recorded. A tape is single-writer: one rollout records on one tape, then
 * `Tape::backward` propagates adjoints in a single reverse sweep.
 */

#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace stlcbf {

class Tape;

/// Scalar carrying a value and, when recorded, a node index on a tape.
struct Ad {
  double v = 0.0;
  std::int32_t idx = -1;  // -1: constant, not on any tape
  Tape* tape = nullptr;

  Ad() = default;
  Ad(double value) : v(value) {}  // NOLINT: implicit is the point
  Ad(double value, std::int32_t i, Tape* t) : v(value), idx(i), tape(t) {}

  bool on_tape() const { return idx >= 0; }
};

/// Append-only graph of scalar operations with a dedicated adjoint buffer.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Creates an independent variable on this tape.
  Ad leaf(double value) {
    nodes_.push_back(Node{value, 0.0, 0.0, -1, -1, -1});
    return Ad{value, static_cast<std::int32_t>(nodes_.size() - 1), this};
  }

  std::int32_t push1(double value, std::int32_t p0, double g0) {
    nodes_.push_back(Node{value, g0, 0.0, p0, -1, -1});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  std::int32_t push2(double value, std::int32_t p0, double g0, std::int32_t p1, double g1) {
    nodes_.push_back(Node{value, g0, g1, p0, p1, -1});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  /// Node with an arbitrary parent list (used by the QP layer).
  std::int32_t push_n(double value, std::span<const std::pair<std::int32_t, double>> parents) {
    ext_.emplace_back(parents.begin(), parents.end());
    nodes_.push_back(Node{value, 0.0, 0.0, -1, -1, static_cast<std::int32_t>(ext_.size() - 1)});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  /// Seeds d(root)/d(root) = 1 and sweeps adjoints back to the leaves.
  void backward(const Ad& root) {
    assert(root.on_tape() && root.tape == this);
    adjoints_.assign(nodes_.size(), 0.0);
    adjoints_[static_cast<std::size_t>(root.idx)] = 1.0;
    for (std::int32_t i = root.idx; i >= 0; --i) {
      const double a = adjoints_[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.p0 >= 0) adjoints_[static_cast<std::size_t>(n.p0)] += n.g0 * a;
      if (n.p1 >= 0) adjoints_[static_cast<std::size_t>(n.p1)] += n.g1 * a;
      if (n.ext >= 0) {
        for (const auto& [p, g] : ext_[static_cast<std::size_t>(n.ext)]) {
          adjoints_[static_cast<std::size_t>(p)] += g * a;
        }
      }
    }
  }

  /// Adjoint of a variable after `backward`; constants have zero gradient.
  double gradient(const Ad& x) const {
    if (!x.on_tape()) return 0.0;
    assert(x.tape == this);
    if (static_cast<std::size_t>(x.idx) >= adjoints_.size()) return 0.0;
    return adjoints_[static_cast<std::size_t>(x.idx)];
  }

  /// Drops all nodes but keeps allocated capacity for reuse.
  void reset() {
    nodes_.clear();
    ext_.clear();
    adjoints_.clear();
  }

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

private:
  struct Node {
    double val;
    double g0, g1;
    std::int32_t p0, p1;
    std::int32_t ext;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<std::pair<std::int32_t, double>>> ext_;
  std::vector<double> adjoints_;
};

namespace detail {

inline Ad unary(const Ad& a, double value, double da) {
  if (!a.on_tape()) return Ad{value};
  return Ad{value, a.tape->push1(value, a.idx, da), a.tape};
}

inline Ad binary(const Ad& a, const Ad& b, double value, double da, double db) {
  Tape* t = a.on_tape() ? a.tape : b.tape;
  if (t == nullptr) return Ad{value};
  assert(!a.on_tape() || !b.on_tape() || a.tape == b.tape);
  if (a.on_tape() && b.on_tape()) return Ad{value, t->push2(value, a.idx, da, b.idx, db), t};
  if (a.on_tape()) return Ad{value, t->push1(value, a.idx, da), t};
  return Ad{value, t->push1(value, b.idx, db), t};
}

}  // namespace detail

// -- arithmetic ---------------------------------------------------------

inline Ad operator+(const Ad& a, const Ad& b) { return detail::binary(a, b, a.v + b.v, 1.0, 1.0); }
inline Ad operator-(const Ad& a, const Ad& b) { return detail::binary(a, b, a.v - b.v, 1.0, -1.0); }
inline Ad operator*(const Ad& a, const Ad& b) { return detail::binary(a, b, a.v * b.v, b.v, a.v); }
inline Ad operator/(const Ad& a, const Ad& b) {
  return detail::binary(a, b, a.v / b.v, 1.0 / b.v, -a.v / (b.v * b.v));
}
inline Ad operator-(const Ad& a) { return detail::unary(a, -a.v, -1.0); }
inline Ad operator+(const Ad& a) { return a; }

inline Ad& operator+=(Ad& a, const Ad& b) { return a = a + b; }
inline Ad& operator-=(Ad& a, const Ad& b) { return a = a - b; }
inline Ad& operator*=(Ad& a, const Ad& b) { return a = a * b; }
inline Ad& operator/=(Ad& a, const Ad& b) { return a = a / b; }

inline bool operator<(const Ad& a, const Ad& b) { return a.v < b.v; }
inline bool operator>(const Ad& a, const Ad& b) { return a.v > b.v; }
inline bool operator<=(const Ad& a, const Ad& b) { return a.v <= b.v; }
inline bool operator>=(const Ad& a, const Ad& b) { return a.v >= b.v; }
inline bool operator==(const Ad& a, const Ad& b) { return a.v == b.v; }
inline bool operator!=(const Ad& a, const Ad& b) { return a.v != b.v; }

// -- elementary functions ------------------------------------------------

inline Ad exp(const Ad& a) {
  const double e = std::exp(a.v);
  return detail::unary(a, e, e);
}

inline Ad log(const Ad& a) { return detail::unary(a, std::log(a.v), 1.0 / a.v); }

inline Ad sqrt(const Ad& a) {
  const double s = std::sqrt(a.v);
  return detail::unary(a, s, 0.5 / s);
}

inline Ad pow(const Ad& a, double e) {
  return detail::unary(a, std::pow(a.v, e), e * std::pow(a.v, e - 1.0));
}

inline Ad tanh(const Ad& a) {
  const double t = std::tanh(a.v);
  return detail::unary(a, t, 1.0 - t * t);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Ad sigmoid(const Ad& a) {
  const double s = sigmoid(a.v);
  return detail::unary(a, s, s * (1.0 - s));
}

inline double softplus(double x) {
  // log(1 + e^x), stable for large |x|
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline Ad softplus(const Ad& a) { return detail::unary(a, softplus(a.v), sigmoid(a.v)); }

inline Ad relu(const Ad& a) { return detail::unary(a, a.v > 0.0 ? a.v : 0.0, a.v > 0.0 ? 1.0 : 0.0); }

inline Ad abs(const Ad& a) { return detail::unary(a, std::abs(a.v), a.v >= 0.0 ? 1.0 : -1.0); }

/// Exact min; ties resolve to the first argument, gradient flows to one side.
inline Ad min(const Ad& a, const Ad& b) { return b.v < a.v ? b : a; }
inline Ad max(const Ad& a, const Ad& b) { return b.v > a.v ? b : a; }

// Double overloads so scalar-templated code resolves without std:: imports.
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double pow(double x, double e) { return std::pow(x, e); }
inline double tanh(double x) { return std::tanh(x); }
inline double abs(double x) { return std::abs(x); }
inline double min(double a, double b) { return b < a ? b : a; }
inline double max(double a, double b) { return b > a ? b : a; }

// Eigen interop helpers.
inline Ad conj(const Ad& a) { return a; }
inline Ad real(const Ad& a) { return a; }
inline Ad imag(const Ad&) { return Ad{0.0}; }
inline Ad abs2(const Ad& a) { return a * a; }

/// Numeric value of a scalar; lets code template over double and Ad.
inline double value_of(double x) { return x; }
inline double value_of(const Ad& x) { return x.v; }

}  // namespace stlcbf

namespace Eigen {

template <>
struct NumTraits<stlcbf::Ad> : GenericNumTraits<stlcbf::Ad> {
  typedef stlcbf::Ad Real;
  typedef stlcbf::Ad NonInteger;
  typedef stlcbf::Ad Nested;
  typedef stlcbf::Ad Literal;

  static inline Real epsilon() { return Real(NumTraits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(NumTraits<double>::dummy_precision()); }
  static inline Real highest() { return Real(NumTraits<double>::highest()); }
  static inline Real lowest() { return Real(NumTraits<double>::lowest()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }

  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3,
  };
};

}  // namespace Eigen

namespace stlcbf {

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;

/// Lifts a double vector to constants of scalar type S.
template <typename Scalar>
VecX<Scalar> to_scalar(const Eigen::VectorXd& x) {
  VecX<Scalar> out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = Scalar(x[i]);
  return out;
}

inline Eigen::VectorXd values_of(const VecX<Ad>& x) {
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = x[i].v;
  return out;
}

}  // namespace stlcbf
