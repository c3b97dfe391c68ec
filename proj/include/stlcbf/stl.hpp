#pragma once

/**
 * @file
 * @brief Signal Temporal Logic fragment: predicates over gauge regions,
 *        formula AST, horizons, and classical / exponential robustness.
 *
 * The fragment consists of predicate-level formulas (predicates, negated
 * predicates, conjunction, disjunction) wrapped by timed F / G operators and
 * joined by a top-level conjunction. Classical robustness uses exact min/max
 * semantics and serves as the oracle; exponential robustness is the smooth,
 * differentiable aggregation used as the training signal.
 */

#include "stlcbf/autodiff.hpp"

#include <json.hpp>

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlcbf {

enum class GaugeKind { EuclideanNorm, Superellipse4 };

/// Atomic predicate h(x) = s * (R - sigma(l(x) - o)), positive inside the
/// reach region (s = +1) or outside the avoid region (s = -1).
struct Predicate {
  std::string name;
  double sign = 1.0;  // +1 reach, -1 avoid
  double radius = 1.0;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  GaugeKind gauge = GaugeKind::EuclideanNorm;
  Eigen::Vector2d half_axes = Eigen::Vector2d::Ones();  // superellipse a, b

  /// Largest attainable h over all states: R for reach, unbounded for avoid.
  bool sup_h_finite() const { return sign > 0.0; }
  double sup_h() const { return radius; }
};

/// Gauge value sigma(z); strictly convex and radially unbounded.
template <typename S>
S gauge_value(const Predicate& p, const Vec2<S>& z) {
  if (p.gauge == GaugeKind::EuclideanNorm) {
    return sqrt(z[0] * z[0] + z[1] * z[1]);
  }
  const S za = z[0] / S(p.half_axes[0]);
  const S zb = z[1] / S(p.half_axes[1]);
  return pow(za * za * za * za + zb * zb * zb * zb, 0.25);
}

template <typename S>
Vec2<S> gauge_gradient(const Predicate& p, const Vec2<S>& z) {
  Vec2<S> g;
  if (p.gauge == GaugeKind::EuclideanNorm) {
    const S n = gauge_value(p, z);
    g[0] = z[0] / n;
    g[1] = z[1] / n;
    return g;
  }
  const double a4 = std::pow(p.half_axes[0], 4);
  const double b4 = std::pow(p.half_axes[1], 4);
  const S sig = gauge_value(p, z);
  const S s3 = sig * sig * sig;
  g[0] = z[0] * z[0] * z[0] / (S(a4) * s3);
  g[1] = z[1] * z[1] * z[1] / (S(b4) * s3);
  return g;
}

template <typename S>
Mat2<S> gauge_hessian(const Predicate& p, const Vec2<S>& z) {
  Mat2<S> h;
  if (p.gauge == GaugeKind::EuclideanNorm) {
    const S n = gauge_value(p, z);
    const S n3 = n * n * n;
    h(0, 0) = (z[1] * z[1]) / n3;
    h(1, 1) = (z[0] * z[0]) / n3;
    h(0, 1) = S(0.0) - z[0] * z[1] / n3;
    h(1, 0) = h(0, 1);
    return h;
  }
  const double a4 = std::pow(p.half_axes[0], 4);
  const double b4 = std::pow(p.half_axes[1], 4);
  const S sig = gauge_value(p, z);
  const S s3 = sig * sig * sig;
  const S s7 = s3 * s3 * sig;
  const S z1_2 = z[0] * z[0];
  const S z2_2 = z[1] * z[1];
  const S z1_3 = z1_2 * z[0];
  const S z2_3 = z2_2 * z[1];
  h(0, 0) = S(3.0) * z1_2 / (S(a4) * s3) - S(3.0) * z1_3 * z1_3 / (S(a4 * a4) * s7);
  h(1, 1) = S(3.0) * z2_2 / (S(b4) * s3) - S(3.0) * z2_3 * z2_3 / (S(b4 * b4) * s7);
  h(0, 1) = S(-3.0) * z1_3 * z2_3 / (S(a4 * b4) * s7);
  h(1, 0) = h(0, 1);
  return h;
}

/// Output map l(x): the position components of the state.
template <typename S>
Vec2<S> output_map(const VecX<S>& x) {
  return Vec2<S>(x[0], x[1]);
}

/// h(x) = s * (R - sigma(l(x) - o)).
template <typename S>
S eval_predicate(const Predicate& p, const VecX<S>& x) {
  Vec2<S> z = output_map(x);
  z[0] -= S(p.center[0]);
  z[1] -= S(p.center[1]);
  return S(p.sign) * (S(p.radius) - gauge_value(p, z));
}

// -- formula -------------------------------------------------------------

/// AST node of the STL fragment. F/G wrap predicate-level formulas only;
/// TopAnd joins temporal conjuncts (and possibly bare predicate formulas).
struct StlFormula {
  enum class Kind { Pred, NegPred, And, Or, F, G, TopAnd };

  Kind kind = Kind::Pred;
  Predicate pred;                   // Pred / NegPred
  double t_a = 0.0, t_b = 0.0;      // F / G interval, seconds
  std::vector<StlFormula> children;

  static StlFormula atom(Predicate p) {
    StlFormula f;
    f.kind = Kind::Pred;
    f.pred = std::move(p);
    return f;
  }
  /// Negation is pushed into the predicate sign; the node keeps NegPred so
  /// serialization round-trips.
  static StlFormula negated(Predicate p) {
    StlFormula f;
    f.kind = Kind::NegPred;
    f.pred = std::move(p);
    return f;
  }
  static StlFormula conj(std::vector<StlFormula> cs) {
    StlFormula f;
    f.kind = Kind::And;
    f.children = std::move(cs);
    return f;
  }
  static StlFormula disj(std::vector<StlFormula> cs) {
    StlFormula f;
    f.kind = Kind::Or;
    f.children = std::move(cs);
    return f;
  }
  static StlFormula eventually(double ta, double tb, StlFormula child) {
    StlFormula f;
    f.kind = Kind::F;
    f.t_a = ta;
    f.t_b = tb;
    f.children.push_back(std::move(child));
    return f;
  }
  static StlFormula always(double ta, double tb, StlFormula child) {
    StlFormula f;
    f.kind = Kind::G;
    f.t_a = ta;
    f.t_b = tb;
    f.children.push_back(std::move(child));
    return f;
  }
  static StlFormula top(std::vector<StlFormula> cs) {
    StlFormula f;
    f.kind = Kind::TopAnd;
    f.children = std::move(cs);
    return f;
  }
};

/// Throws std::invalid_argument when the formula leaves the fragment
/// (nested temporal operators, bad intervals, temporal nodes below F/G).
void validate_fragment(const StlFormula& f);

/// Earliest future time needed to evaluate the formula; the fragment has no
/// nesting, so this is the largest interval end (bare predicates give 0).
double horizon(const StlFormula& f);

/// Discrete-time state/input trace at fixed dt spacing.
struct Trajectory {
  double dt = 0.1;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> inputs;  // one fewer than states on a rollout
};

struct TrajectoryTooShort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Sample index range covered by [t_a, t_b]: ceil(t_a/dt) .. floor(t_b/dt).
std::pair<int, int> interval_to_samples(double t_a, double t_b, double dt);

/// Exact min/max robustness at time t; positive iff satisfied under
/// discrete-sample semantics. This is the oracle the smooth semantics is
/// checked against.
double robustness_classical(const StlFormula& f, const Trajectory& traj, double t);

/// Exponential conjunction aggregator: blends the minimum with the mean of
/// per-element effective robustness values. Sign equals the sign of the
/// minimum for any beta in [0, 1]; ties in the minimum resolve to the first
/// index so the gradient flows to a single argument.
template <typename S>
S conj_exp(const std::vector<S>& values, double beta) {
  if (values.empty()) throw std::invalid_argument("conj_exp: empty value list");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (value_of(values[i]) < value_of(values[arg])) arg = i;
  }
  const S rho_min = values[arg];
  if (value_of(rho_min) == 0.0) return S(0.0);
  S sum = S(0.0);
  if (value_of(rho_min) < 0.0) {
    for (const S& r : values) sum += rho_min * exp((r - rho_min) / rho_min);
  } else {
    for (const S& r : values) sum += rho_min * (S(2.0) - exp((rho_min - r) / rho_min));
  }
  const S mean = sum / S(static_cast<double>(values.size()));
  return S(beta) * rho_min + S(1.0 - beta) * mean;
}

/// Smooth disjunction via De Morgan: -conj_exp(-values).
template <typename S>
S disj_exp(const std::vector<S>& values, double beta) {
  std::vector<S> neg;
  neg.reserve(values.size());
  for (const S& r : values) neg.push_back(S(0.0) - r);
  return S(0.0) - conj_exp(neg, beta);
}

/// Exponential robustness over tape-valued states. Sign agrees with
/// robustness_classical; with beta = 1 it reduces to exact min/max on
/// conjunction-only formulas.
Ad robustness_exp(const StlFormula& f, const std::vector<VecX<Ad>>& states, double dt, double t,
                  double beta);

// Canonical nested tagged-record form, round-trip exact.
void to_json(nlohmann::json& j, const Predicate& p);
void from_json(const nlohmann::json& j, Predicate& p);
void to_json(nlohmann::json& j, const StlFormula& f);
void from_json(const nlohmann::json& j, StlFormula& f);

}  // namespace stlcbf
