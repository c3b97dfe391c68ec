#pragma once

/**
 * @file
 * @brief Construction of time-varying high-order control barrier functions
 *        from an STL formula.
 *
 * Each predicate gets a barrier b = h + gamma(t). Predicates already
 * satisfied at t = 0 whose operator starts at 0 keep gamma = 0 (Category I);
 * F-wrapped predicates get a decreasing linear gamma (Category II); G-wrapped
 * ones get an exponential decay to -c (Category III). The gamma parameters
 * (omega1, omega2) are confined to boxes derived from the initial-time,
 * end-time and pairwise non-conflict inequalities, resolved sequentially in
 * end-time order so each box only depends on already-emitted values. The
 * multiplier-augmented psi recursion with linear class-kappa functions turns
 * every active barrier into one affine constraint row for the control QP.
 */

#include "stlcbf/autodiff.hpp"
#include "stlcbf/nn.hpp"
#include "stlcbf/stl.hpp"
#include "stlcbf/systems.hpp"

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlcbf {

enum class PredCategory { I, II, III };
enum class GammaKind { Zero, Linear, Exponential };

struct InfeasibleSpec : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyOmegaBox : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One predicate together with its enclosing temporal operator. Bare
/// predicates under the top conjunction use op = Pred with a zero interval.
struct PredSpec {
  Predicate pred;
  StlFormula::Kind op = StlFormula::Kind::Pred;  // F, G, or Pred (bare)
  double t_a = 0.0;
  double t_b = 0.0;
  int group = -1;  // temporal conjunct id; F-conjunction members delete together
};

/// Flattens the top-level conjunction into per-predicate specs. Negations
/// are folded into predicate signs. Disjunction below a temporal operator has
/// no barrier construction and is rejected here.
std::vector<PredSpec> collect_pred_specs(const StlFormula& top);

/// Category assignment at a given initial state. Throws InfeasibleSpec when a
/// G-predicate whose interval starts at 0 is violated at x0.
std::vector<PredCategory> categorize(const std::vector<PredSpec>& specs,
                                     const Eigen::VectorXd& x0);

/// Sorted predicate order by interval end time (stable on ties).
std::vector<int> end_time_order(const std::vector<PredSpec>& specs);

template <typename S>
struct GammaParams {
  GammaKind kind = GammaKind::Zero;
  S omega1{0.0};
  S omega2{0.0};
  double c = 0.05;  // exponential floor constant
};

template <typename S>
GammaValues<S> gamma_derivatives(const GammaParams<S>& g, double t) {
  GammaValues<S> out;
  switch (g.kind) {
    case GammaKind::Zero:
      break;
    case GammaKind::Linear:
      out.value = g.omega1 + g.omega2 * S(t);
      out.dot = g.omega2;
      break;
    case GammaKind::Exponential: {
      const S decay = g.omega1 * exp(S(0.0) - g.omega2 * S(t));
      out.value = decay - S(g.c);
      out.dot = S(0.0) - g.omega2 * decay;
      out.ddot = g.omega2 * g.omega2 * decay;
      break;
    }
  }
  return out;
}

template <typename S>
S gamma_eval(const GammaParams<S>& g, double t) {
  return gamma_derivatives(g, t).value;
}

/// One predicate's barrier at rollout time: gamma parameters, multipliers,
/// and deletion bookkeeping. Relative degree is 2 for both shipped systems.
template <typename S>
struct HocbfInstance {
  int pred_index = -1;
  PredCategory category = PredCategory::I;
  GammaParams<S> gamma;
  double t_a = 0.0;
  double t_b = 0.0;
  std::array<S, 2> p_init{S(1.0), S(1.0)};
  int group = -1;
  bool unconditional_deletion = true;  // G-type and Category I delete at t_b
  bool deleted = false;
  double t_del = std::numeric_limits<double>::infinity();
};

/// psi chain with linear class-kappa functions and multipliers held constant
/// within a sampling interval: psi1 = bdot + p1 b, and the input-affine
/// psi2 = row_a * u + row_c.
template <typename S>
struct PsiValues {
  S psi0{0.0};
  S psi1{0.0};
  Vec2<S> row_a = Vec2<S>::Zero();
  S row_c{0.0};
};

template <typename S>
PsiValues<S> psi_values(const BarrierDerivs<S>& d, const S& p1, const S& p2) {
  PsiValues<S> out;
  out.psi0 = d.b;
  out.psi1 = d.bdot + p1 * d.b;
  out.row_a = d.input_gain;
  out.row_c = d.bddot_drift + (p1 + p2) * d.bdot + (p1 * p2) * d.b;
  return out;
}

/// Instantaneous feasibility margin psi_{m-1} = bdot + p1 b: while positive,
/// the assembled row stays satisfiable by raising p2.
template <typename S>
S feasibility_margin(const BarrierDerivs<S>& d, const S& p1) {
  return d.bdot + p1 * d.b;
}

/// Deletion pass, run once per control step before row assembly. F-type
/// groups delete together at the first sample with t >= t_a where every
/// member satisfies h >= 0; unconditional instances delete once t exceeds
/// t_b. Deleted instances never reactivate.
template <typename S>
void update_deletions(std::vector<HocbfInstance<S>>& instances,
                      const std::vector<PredSpec>& specs, const Eigen::VectorXd& x, double t) {
  // unconditional deletions
  for (auto& inst : instances) {
    if (!inst.deleted && inst.unconditional_deletion && t > inst.t_b + 1e-9) {
      inst.deleted = true;
      inst.t_del = inst.t_b;
    }
  }
  // grouped F-type deletions
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto& inst = instances[i];
    if (inst.deleted || inst.unconditional_deletion) continue;
    if (t < inst.t_a - 1e-9) continue;
    bool all_satisfied = true;
    for (const auto& other : instances) {
      if (other.group != inst.group || other.unconditional_deletion) continue;
      if (eval_predicate(specs[static_cast<std::size_t>(other.pred_index)].pred, x) < 0.0) {
        all_satisfied = false;
        break;
      }
    }
    if (!all_satisfied) continue;
    for (auto& other : instances) {
      if (other.group == inst.group && !other.unconditional_deletion && !other.deleted) {
        other.deleted = true;
        other.t_del = t;
      }
    }
  }
}

namespace detail {

/// gamma(time) >= bound (lower) or gamma(time) <= bound (upper); strictness
/// slack is already folded into `bound`.
template <typename S>
struct GammaConstraint {
  double time = 0.0;
  S bound{0.0};
  bool is_lower = true;
};

template <typename S>
struct Interval {
  std::optional<S> lo;
  std::optional<S> hi;

  void raise_lo(const S& v) {
    if (!lo || value_of(v) > value_of(*lo)) lo = v;
  }
  void drop_hi(const S& v) {
    if (!hi || value_of(v) < value_of(*hi)) hi = v;
  }
  bool empty() const { return lo && hi && !(value_of(*lo) < value_of(*hi)); }
};

}  // namespace detail

/// Raw-activation offsets applied inside the emission heads. They place the
/// neutral (zero-raw) emission at a construction with initial clearance and
/// multipliers inside the sampled-time stability range; training moves freely
/// off these set points.
struct EmissionTuning {
  double omega1_raw_bias = 0.9;
  double p1_raw_bias = 2.2;
  double p2_raw_bias = 2.0;
  /// Floor p2 so every row accepts u = 0 at the initial state.
  bool p2_feasibility_floor = false;
};

/// Fixed per-scenario construction: categories, emission order, raw-channel
/// layout, and per-initial-condition instance emission. The layout is locked
/// against a representative initial state so the network architecture does
/// not change across samples; per-sample inequalities are still evaluated at
/// the sampled x0.
class HocbfBuilder {
public:
  HocbfBuilder(SystemModel model, std::vector<PredSpec> specs, const Eigen::VectorXd& x0_repr,
               double gamma_c, double eps_slack = 1e-3, double eps_p = 1e-3,
               EmissionTuning tuning = {});

  const std::vector<PredSpec>& specs() const { return specs_; }
  const std::vector<PredCategory>& categories() const { return categories_; }
  const std::vector<int>& emission_order() const { return order_; }
  const SystemModel& model() const { return model_; }

  int num_predicates() const { return static_cast<int>(specs_.size()); }
  int num_trainable_gammas() const { return trainable_count_; }
  /// Raw channels consumed by emit(): two per trainable gamma followed by
  /// two multipliers per predicate.
  int omega_raw_channels() const { return 2 * trainable_count_; }
  int multiplier_raw_channels() const { return 2 * num_predicates(); }

  /// Emits instances for one initial condition. `raws` holds the omega raw
  /// activations (emission order) followed by the multiplier raw activations
  /// (predicate order). Throws EmptyOmegaBox when the boxes collapse at this
  /// x0 and InfeasibleSpec when a Category I predicate is violated.
  template <typename S>
  std::vector<HocbfInstance<S>> emit(const Eigen::VectorXd& x0, std::span<const S> raws) const;

  /// Direct re-evaluation of every construction inequality (initial-time,
  /// end-time, non-conflict, multiplier lower bounds) at emitted values.
  /// Returns human-readable descriptions of any violations.
  std::vector<std::string> check_raw_constraints(const Eigen::VectorXd& x0,
                                                 const std::vector<HocbfInstance<double>>& insts) const;

  /// Gauge distance used in the pairwise non-conflict bound; evaluated with
  /// the later predicate's gauge.
  double cross_sigma(int later, int earlier) const;

private:
  template <typename S>
  std::vector<detail::GammaConstraint<S>> collect_constraints(
      int pos, const Eigen::VectorXd& x0, const std::vector<GammaParams<S>>& emitted) const;

  SystemModel model_;
  EmissionTuning tuning_;
  std::vector<PredSpec> specs_;
  std::vector<PredCategory> categories_;
  std::vector<int> order_;           // emission order (sorted by t_b)
  std::vector<int> pos_of_;          // inverse of order_
  std::vector<GammaKind> gkind_;     // per predicate
  int trainable_count_ = 0;
  double gamma_c_;
  double eps_slack_;
  double eps_p_;
};

// -- template implementation ----------------------------------------------

template <typename S>
std::vector<detail::GammaConstraint<S>> HocbfBuilder::collect_constraints(
    int pos, const Eigen::VectorXd& x0, const std::vector<GammaParams<S>>& emitted) const {
  using C = detail::GammaConstraint<S>;
  std::vector<C> out;
  const int j = order_[static_cast<std::size_t>(pos)];
  const PredSpec& sj = specs_[static_cast<std::size_t>(j)];
  const double h0 = eval_predicate(sj.pred, x0);

  // initial-time positivity: gamma(0) > -h(x0)
  out.push_back(C{0.0, S(-h0 + eps_slack_), true});

  if (gkind_[static_cast<std::size_t>(j)] == GammaKind::Linear) {
    // timed-reach shape: negative by t_b, superlevel set nonempty before t_a
    out.push_back(C{sj.t_b, S(-eps_slack_), false});
    if (sj.pred.sup_h_finite()) {
      out.push_back(C{sj.t_a, S(-sj.pred.sup_h() + eps_slack_), true});
    }
  } else {
    // timed-hold shape: negative from t_a on
    out.push_back(C{sj.t_a, S(-eps_slack_), false});
  }

  // non-conflict lower bounds against earlier predicates
  for (int kpos = 0; kpos < pos; ++kpos) {
    const int k = order_[static_cast<std::size_t>(kpos)];
    const PredSpec& sk = specs_[static_cast<std::size_t>(k)];
    if (sj.pred.sign < 0.0 && sk.pred.sign < 0.0) continue;  // avoid-avoid released
    const double sig = cross_sigma(j, k);
    const S gk = gamma_eval(emitted[static_cast<std::size_t>(k)], sk.t_b);
    const S bound = S(sj.pred.sign * sk.pred.sign * sig - sk.pred.sign * sk.pred.radius -
                      sj.pred.sign * sj.pred.radius) -
                    gk;
    out.push_back(C{sk.t_b, bound, true});
  }

  // bounds induced by later fixed-gamma predicates: their side of the pair
  // is constant zero, so the inequality lands on this gamma at its own t_b
  for (int lpos = pos + 1; lpos < static_cast<int>(order_.size()); ++lpos) {
    const int l = order_[static_cast<std::size_t>(lpos)];
    if (categories_[static_cast<std::size_t>(l)] != PredCategory::I) continue;
    const PredSpec& sl = specs_[static_cast<std::size_t>(l)];
    if (sl.pred.sign < 0.0 && sj.pred.sign < 0.0) continue;
    const double sig = cross_sigma(l, j);
    const double bound = sl.pred.sign * sj.pred.sign * sig - sj.pred.sign * sj.pred.radius -
                         sl.pred.sign * sl.pred.radius;
    out.push_back(C{sj.t_b, S(bound), true});
  }
  return out;
}

namespace detail {

/// Reduces the constraint set for a linear gamma(t) = w1 + w2 t (w1 > 0,
/// w2 < 0) to a sequential pair of intervals: first the w1 interval, then,
/// given w1, the w2 interval.
template <typename S>
Interval<S> linear_omega1_interval(const std::vector<GammaConstraint<S>>& cs, double eps) {
  Interval<S> iv;
  iv.raise_lo(S(eps));  // w1 > 0
  for (const auto& c : cs) {
    if (c.time <= 1e-12) {
      if (c.is_lower) {
        iv.raise_lo(c.bound);
      } else {
        iv.drop_hi(c.bound);
      }
      continue;
    }
    if (c.is_lower) {
      // pairing with w2 < 0 demands w1 above the bound value
      iv.raise_lo(c.bound + S(c.time * eps));
    }
  }
  // pair each timed lower bound with each timed upper bound
  for (const auto& lo : cs) {
    if (!lo.is_lower || lo.time <= 1e-12) continue;
    for (const auto& hi : cs) {
      if (hi.is_lower || hi.time <= 1e-12) continue;
      const double ti = lo.time;
      const double tj = hi.time;
      const S num = S(tj) * lo.bound - S(ti) * hi.bound;
      if (tj > ti + 1e-12) {
        iv.raise_lo(num / S(tj - ti) + S(1e-9));
      } else if (tj < ti - 1e-12) {
        iv.drop_hi(num / S(tj - ti) - S(1e-9));
      } else if (!(value_of(lo.bound) < value_of(hi.bound))) {
        throw EmptyOmegaBox("conflicting gamma bounds at time " + std::to_string(ti));
      }
    }
  }
  if (iv.empty()) throw EmptyOmegaBox("empty omega1 interval (linear gamma)");
  return iv;
}

template <typename S>
Interval<S> linear_omega2_interval(const std::vector<GammaConstraint<S>>& cs, const S& w1,
                                   double eps) {
  Interval<S> iv;
  iv.drop_hi(S(-eps));  // w2 < 0
  for (const auto& c : cs) {
    if (c.time <= 1e-12) continue;
    const S v = (c.bound - w1) / S(c.time);
    if (c.is_lower) {
      iv.raise_lo(v);
    } else {
      iv.drop_hi(v);
    }
  }
  if (iv.empty()) throw EmptyOmegaBox("empty omega2 interval (linear gamma)");
  return iv;
}

/// Same reduction for the exponential gamma(t) = w1 exp(-w2 t) - c with
/// w1 > 0, w2 > 0. Lower bounds on gamma cap w2 from above, upper bounds
/// push it from below.
template <typename S>
Interval<S> exp_omega1_interval(const std::vector<GammaConstraint<S>>& cs, double c, double eps) {
  Interval<S> iv;
  iv.raise_lo(S(eps));
  for (const auto& cons : cs) {
    const double bv = value_of(cons.bound);
    if (cons.is_lower) {
      if (bv + c <= 0.0) continue;  // gamma > -c always
      if (cons.time <= 1e-12) {
        iv.raise_lo(cons.bound + S(c));
      } else {
        // keep the implied w2 cap positive
        iv.raise_lo((cons.bound + S(c)) * S(std::exp(eps * cons.time)));
      }
    } else {
      if (bv + c <= 0.0) throw EmptyOmegaBox("gamma upper bound below -c");
      if (cons.time <= 1e-12) iv.drop_hi(cons.bound + S(c));
    }
  }
  for (const auto& lo : cs) {
    if (!lo.is_lower || lo.time <= 1e-12 || value_of(lo.bound) + c <= 0.0) continue;
    for (const auto& hi : cs) {
      if (hi.is_lower || hi.time <= 1e-12) continue;
      const double ti = lo.time;
      const double tj = hi.time;
      const S l_log = log(lo.bound + S(c));
      const S u_log = log(hi.bound + S(c));
      const S num = S(ti) * u_log - S(tj) * l_log;
      const double d = ti - tj;
      if (d > 1e-12) {
        iv.drop_hi(exp(num / S(d) - S(1e-9)));
      } else if (d < -1e-12) {
        iv.raise_lo(exp(num / S(d) + S(1e-9)));
      } else if (!(value_of(lo.bound) < value_of(hi.bound))) {
        throw EmptyOmegaBox("conflicting gamma bounds at time " + std::to_string(ti));
      }
    }
  }
  if (iv.empty()) throw EmptyOmegaBox("empty omega1 interval (exponential gamma)");
  return iv;
}

template <typename S>
Interval<S> exp_omega2_interval(const std::vector<GammaConstraint<S>>& cs, const S& w1, double c,
                                double eps) {
  Interval<S> iv;
  iv.raise_lo(S(eps));
  for (const auto& cons : cs) {
    if (cons.time <= 1e-12) continue;
    const double bv = value_of(cons.bound);
    if (bv + c <= 0.0) {
      if (cons.is_lower) continue;
      throw EmptyOmegaBox("gamma upper bound below -c");
    }
    const S v = log(w1 / (cons.bound + S(c))) / S(cons.time);
    if (cons.is_lower) {
      iv.drop_hi(v);
    } else {
      iv.raise_lo(v);
    }
  }
  if (iv.empty()) throw EmptyOmegaBox("empty omega2 interval (exponential gamma)");
  return iv;
}

}  // namespace detail

template <typename S>
std::vector<HocbfInstance<S>> HocbfBuilder::emit(const Eigen::VectorXd& x0,
                                                 std::span<const S> raws) const {
  const int M = num_predicates();
  if (static_cast<int>(raws.size()) != omega_raw_channels() + multiplier_raw_channels()) {
    throw std::invalid_argument("emit: raw channel count mismatch");
  }

  std::vector<GammaParams<S>> gammas(static_cast<std::size_t>(M));
  int chan = 0;
  for (int pos = 0; pos < M; ++pos) {
    const int j = order_[static_cast<std::size_t>(pos)];
    const auto kind = gkind_[static_cast<std::size_t>(j)];
    GammaParams<S>& g = gammas[static_cast<std::size_t>(j)];
    g.kind = kind;
    g.c = gamma_c_;
    if (kind == GammaKind::Zero) {
      if (eval_predicate(specs_[static_cast<std::size_t>(j)].pred, x0) < 1e-9) {
        throw InfeasibleSpec("category I predicate '" +
                             specs_[static_cast<std::size_t>(j)].pred.name +
                             "' not satisfied at the sampled initial state");
      }
      continue;
    }
    const S w1_raw = raws[static_cast<std::size_t>(chan)] + S(tuning_.omega1_raw_bias);
    const S w2_raw = raws[static_cast<std::size_t>(chan + 1)];
    const auto cs = collect_constraints<S>(pos, x0, gammas);
    if (kind == GammaKind::Linear) {
      const auto i1 = detail::linear_omega1_interval(cs, eps_slack_);
      g.omega1 = bounded_head_t<S>(w1_raw, i1.lo, i1.hi);
      const auto i2 = detail::linear_omega2_interval(cs, g.omega1, eps_slack_);
      g.omega2 = bounded_head_t<S>(w2_raw, i2.lo, i2.hi);
    } else {
      const auto i1 = detail::exp_omega1_interval(cs, gamma_c_, eps_slack_);
      g.omega1 = bounded_head_t<S>(w1_raw, i1.lo, i1.hi);
      const auto i2 = detail::exp_omega2_interval(cs, g.omega1, gamma_c_, eps_slack_);
      g.omega2 = bounded_head_t<S>(w2_raw, i2.lo, i2.hi);
    }
    chan += 2;
  }

  std::vector<HocbfInstance<S>> out(static_cast<std::size_t>(M));
  const VecX<S> x0s = to_scalar<S>(x0);
  for (int j = 0; j < M; ++j) {
    auto& inst = out[static_cast<std::size_t>(j)];
    const PredSpec& sp = specs_[static_cast<std::size_t>(j)];
    inst.pred_index = j;
    inst.category = categories_[static_cast<std::size_t>(j)];
    inst.gamma = gammas[static_cast<std::size_t>(j)];
    inst.t_a = sp.t_a;
    inst.t_b = sp.t_b;
    inst.group = sp.group;
    inst.unconditional_deletion =
        inst.category != PredCategory::II || sp.op != StlFormula::Kind::F;

    // multiplier initialization: p1 above the bound keeping psi1(x0, 0)
    // positive, p2 only positive
    const auto gv = gamma_derivatives(inst.gamma, 0.0);
    const auto d = barrier_derivatives(model_, sp.pred, gv, x0s);
    if (!(value_of(d.b) > 0.0)) {
      throw EmptyOmegaBox("barrier nonpositive at the initial state for predicate '" +
                          sp.pred.name + "'");
    }
    const S ratio = S(0.0) - d.bdot / d.b;
    const S p1_floor = (value_of(ratio) > 0.0 ? ratio : S(0.0)) + S(eps_p_);
    const std::size_t base = static_cast<std::size_t>(omega_raw_channels() + 2 * j);
    // slack above the p1 floor widens psi1, which in turn keeps the
    // feasibility-restoring p2 below the sampled-time stability range
    inst.p_init[0] =
        bounded_head_t<S>(raws[base] + S(tuning_.p1_raw_bias), p1_floor, std::nullopt);
    S p2_floor = S(eps_p_);
    if (tuning_.p2_feasibility_floor) {
      // floor the top multiplier so the assembled row accepts u = 0 at the
      // initial state: c = bddot_drift + p1 bdot + p2 psi1 >= 0 with psi1 > 0
      const S psi1_0 = d.bdot + inst.p_init[0] * d.b;
      const S p2_need = (S(0.0) - (d.bddot_drift + inst.p_init[0] * d.bdot)) / psi1_0;
      if (value_of(p2_need) > 0.0) p2_floor = p2_need + S(eps_p_);
    }
    inst.p_init[1] =
        bounded_head_t<S>(raws[base + 1] + S(tuning_.p2_raw_bias), p2_floor, std::nullopt);
  }
  return out;
}

/// Value snapshot of an Ad-valued instance, for raw-constraint re-checks.
inline HocbfInstance<double> values_of(const HocbfInstance<Ad>& inst) {
  HocbfInstance<double> out;
  out.pred_index = inst.pred_index;
  out.category = inst.category;
  out.gamma.kind = inst.gamma.kind;
  out.gamma.omega1 = inst.gamma.omega1.v;
  out.gamma.omega2 = inst.gamma.omega2.v;
  out.gamma.c = inst.gamma.c;
  out.t_a = inst.t_a;
  out.t_b = inst.t_b;
  out.p_init = {inst.p_init[0].v, inst.p_init[1].v};
  out.group = inst.group;
  out.unconditional_deletion = inst.unconditional_deletion;
  out.deleted = inst.deleted;
  out.t_del = inst.t_del;
  return out;
}

}  // namespace stlcbf
