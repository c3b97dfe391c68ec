#pragma once

// Random formula/trajectory generator over the supported STL fragment,
// shared by the robustness property tests and the acceptance suite.

#include "stlcbf/stl.hpp"

#include <random>

namespace stlcbf::test {

inline Predicate fuzz_reach(double cx, double cy, double r) {
  Predicate p;
  p.name = "reach";
  p.sign = 1.0;
  p.radius = r;
  p.center = Eigen::Vector2d(cx, cy);
  return p;
}

struct RandomFragment {
  std::mt19937_64 rng;

  explicit RandomFragment(unsigned seed) : rng(seed) {}

  Predicate random_pred() {
    std::uniform_real_distribution<double> pos(-2.0, 2.0);
    std::uniform_real_distribution<double> rad(0.3, 1.5);
    std::bernoulli_distribution coin(0.5);
    Predicate p = fuzz_reach(pos(rng), pos(rng), rad(rng));
    if (coin(rng)) p.sign = -1.0;
    if (coin(rng)) {
      p.gauge = GaugeKind::Superellipse4;
      p.half_axes = Eigen::Vector2d(rad(rng), rad(rng));
      p.radius = 1.0;
    }
    return p;
  }

  StlFormula random_pred_level(int depth) {
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<int> arity(2, 3);
    if (depth <= 0 || coin(rng)) {
      return coin(rng) ? StlFormula::atom(random_pred()) : StlFormula::negated(random_pred());
    }
    std::vector<StlFormula> cs;
    const int n = arity(rng);
    for (int i = 0; i < n; ++i) cs.push_back(random_pred_level(depth - 1));
    return coin(rng) ? StlFormula::conj(std::move(cs)) : StlFormula::disj(std::move(cs));
  }

  StlFormula random_formula() {
    std::uniform_int_distribution<int> n_conj(1, 3);
    std::uniform_real_distribution<double> t0(0.0, 1.0);
    std::uniform_real_distribution<double> dur(0.2, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<StlFormula> nodes;
    const int n = n_conj(rng);
    for (int i = 0; i < n; ++i) {
      const double a = t0(rng);
      const double b = a + dur(rng);
      auto child = random_pred_level(1);
      nodes.push_back(coin(rng) ? StlFormula::eventually(a, b, std::move(child))
                                : StlFormula::always(a, b, std::move(child)));
    }
    return StlFormula::top(std::move(nodes));
  }

  Trajectory random_traj(double coverage) {
    std::uniform_real_distribution<double> pos(-3.0, 3.0);
    Trajectory t;
    t.dt = 0.1;
    const int n = static_cast<int>(std::ceil(coverage / t.dt)) + 1;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd s(4);
      s << pos(rng), pos(rng), 0.0, 0.0;
      t.states.push_back(std::move(s));
    }
    return t;
  }
};

inline std::vector<VecX<Ad>> lift_states(Tape& tape, const Trajectory& traj) {
  std::vector<VecX<Ad>> out;
  for (const auto& s : traj.states) {
    VecX<Ad> v(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) v[i] = tape.leaf(s[i]);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace stlcbf::test
