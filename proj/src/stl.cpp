#include "stlcbf/stl.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace stlcbf {

namespace {

bool is_predicate_level(const StlFormula& f) {
  switch (f.kind) {
    case StlFormula::Kind::Pred:
    case StlFormula::Kind::NegPred:
      return true;
    case StlFormula::Kind::And:
    case StlFormula::Kind::Or:
      return std::all_of(f.children.begin(), f.children.end(), is_predicate_level);
    default:
      return false;
  }
}

}  // namespace

void validate_fragment(const StlFormula& f) {
  switch (f.kind) {
    case StlFormula::Kind::Pred:
    case StlFormula::Kind::NegPred:
      if (f.pred.radius <= 0.0) throw std::invalid_argument("predicate radius must be positive");
      return;
    case StlFormula::Kind::And:
    case StlFormula::Kind::Or:
      if (f.children.empty()) throw std::invalid_argument("empty boolean node");
      for (const auto& c : f.children) {
        if (!is_predicate_level(c)) {
          throw std::invalid_argument("boolean connectives only combine predicate-level formulas");
        }
        validate_fragment(c);
      }
      return;
    case StlFormula::Kind::F:
    case StlFormula::Kind::G:
      if (f.children.size() != 1) throw std::invalid_argument("temporal node needs one child");
      if (f.t_a < 0.0 || !(f.t_a < f.t_b)) {
        throw std::invalid_argument("temporal interval must satisfy 0 <= t_a < t_b");
      }
      if (!is_predicate_level(f.children.front())) {
        throw std::invalid_argument("temporal operators wrap predicate-level formulas only");
      }
      validate_fragment(f.children.front());
      return;
    case StlFormula::Kind::TopAnd:
      if (f.children.empty()) throw std::invalid_argument("empty top-level conjunction");
      for (const auto& c : f.children) {
        if (c.kind == StlFormula::Kind::TopAnd) {
          throw std::invalid_argument("nested top-level conjunction");
        }
        validate_fragment(c);
      }
      return;
  }
  throw std::invalid_argument("unknown formula node");
}

double horizon(const StlFormula& f) {
  switch (f.kind) {
    case StlFormula::Kind::Pred:
    case StlFormula::Kind::NegPred:
      return 0.0;
    case StlFormula::Kind::And:
    case StlFormula::Kind::Or:
    case StlFormula::Kind::TopAnd: {
      double h = 0.0;
      for (const auto& c : f.children) h = std::max(h, horizon(c));
      return h;
    }
    case StlFormula::Kind::F:
    case StlFormula::Kind::G:
      return f.t_b;
  }
  return 0.0;
}

std::pair<int, int> interval_to_samples(double t_a, double t_b, double dt) {
  // the 1e-9 guards absorb representation error in t/dt ratios
  const int lo = static_cast<int>(std::ceil(t_a / dt - 1e-9));
  const int hi = static_cast<int>(std::floor(t_b / dt + 1e-9));
  return {lo, hi};
}

namespace {

double classical_at(const StlFormula& f, const Trajectory& traj, int k) {
  switch (f.kind) {
    case StlFormula::Kind::Pred:
      return eval_predicate(f.pred, traj.states[static_cast<std::size_t>(k)]);
    case StlFormula::Kind::NegPred:
      return -eval_predicate(f.pred, traj.states[static_cast<std::size_t>(k)]);
    case StlFormula::Kind::And:
    case StlFormula::Kind::TopAnd: {
      double r = std::numeric_limits<double>::infinity();
      for (const auto& c : f.children) r = std::min(r, classical_at(c, traj, k));
      return r;
    }
    case StlFormula::Kind::Or: {
      double r = -std::numeric_limits<double>::infinity();
      for (const auto& c : f.children) r = std::max(r, classical_at(c, traj, k));
      return r;
    }
    case StlFormula::Kind::F:
    case StlFormula::Kind::G: {
      const auto [lo, hi] = interval_to_samples(f.t_a, f.t_b, traj.dt);
      const bool is_f = f.kind == StlFormula::Kind::F;
      double r = is_f ? -std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::infinity();
      for (int i = lo; i <= hi; ++i) {
        const int kk = k + i;
        if (kk < 0 || kk >= static_cast<int>(traj.states.size())) {
          throw TrajectoryTooShort("trajectory does not cover the formula horizon");
        }
        const double v = classical_at(f.children.front(), traj, kk);
        r = is_f ? std::max(r, v) : std::min(r, v);
      }
      return r;
    }
  }
  return 0.0;
}

}  // namespace

double robustness_classical(const StlFormula& f, const Trajectory& traj, double t) {
  const int k = static_cast<int>(std::llround(t / traj.dt));
  const double needed = t + horizon(f);
  if ((static_cast<double>(traj.states.size()) - 1.0) * traj.dt < needed - 1e-9) {
    throw TrajectoryTooShort("trajectory does not cover the formula horizon");
  }
  return classical_at(f, traj, k);
}

namespace {

Ad exp_at(const StlFormula& f, const std::vector<VecX<Ad>>& states, double dt, int k, double beta) {
  switch (f.kind) {
    case StlFormula::Kind::Pred:
      return eval_predicate(f.pred, states[static_cast<std::size_t>(k)]);
    case StlFormula::Kind::NegPred:
      return Ad(0.0) - eval_predicate(f.pred, states[static_cast<std::size_t>(k)]);
    case StlFormula::Kind::And:
    case StlFormula::Kind::TopAnd: {
      std::vector<Ad> vals;
      vals.reserve(f.children.size());
      for (const auto& c : f.children) vals.push_back(exp_at(c, states, dt, k, beta));
      return conj_exp(vals, beta);
    }
    case StlFormula::Kind::Or: {
      std::vector<Ad> vals;
      vals.reserve(f.children.size());
      for (const auto& c : f.children) vals.push_back(exp_at(c, states, dt, k, beta));
      return disj_exp(vals, beta);
    }
    case StlFormula::Kind::F:
    case StlFormula::Kind::G: {
      const auto [lo, hi] = interval_to_samples(f.t_a, f.t_b, dt);
      std::vector<Ad> vals;
      vals.reserve(static_cast<std::size_t>(hi - lo + 1));
      for (int i = lo; i <= hi; ++i) {
        const int kk = k + i;
        if (kk < 0 || kk >= static_cast<int>(states.size())) {
          throw TrajectoryTooShort("trajectory does not cover the formula horizon");
        }
        vals.push_back(exp_at(f.children.front(), states, dt, kk, beta));
      }
      return f.kind == StlFormula::Kind::G ? conj_exp(vals, beta) : disj_exp(vals, beta);
    }
  }
  return Ad(0.0);
}

}  // namespace

Ad robustness_exp(const StlFormula& f, const std::vector<VecX<Ad>>& states, double dt, double t,
                  double beta) {
  const int k = static_cast<int>(std::llround(t / dt));
  const double needed = t + horizon(f);
  if ((static_cast<double>(states.size()) - 1.0) * dt < needed - 1e-9) {
    throw TrajectoryTooShort("trajectory does not cover the formula horizon");
  }
  return exp_at(f, states, dt, k, beta);
}

// -- serialization --------------------------------------------------------

void to_json(nlohmann::json& j, const Predicate& p) {
  j = nlohmann::json{
      {"name", p.name},
      {"sign", p.sign},
      {"radius", p.radius},
      {"center", {p.center[0], p.center[1]}},
      {"gauge", p.gauge == GaugeKind::EuclideanNorm ? "euclidean" : "superellipse"},
      {"half_axes", {p.half_axes[0], p.half_axes[1]}},
  };
}

void from_json(const nlohmann::json& j, Predicate& p) {
  p.name = j.value("name", std::string{});
  p.sign = j.at("sign").get<double>();
  p.radius = j.at("radius").get<double>();
  p.center = Eigen::Vector2d(j.at("center")[0].get<double>(), j.at("center")[1].get<double>());
  const std::string g = j.at("gauge").get<std::string>();
  if (g == "euclidean") {
    p.gauge = GaugeKind::EuclideanNorm;
  } else if (g == "superellipse") {
    p.gauge = GaugeKind::Superellipse4;
  } else {
    throw std::invalid_argument("unknown gauge kind: " + g);
  }
  if (j.contains("half_axes")) {
    p.half_axes =
        Eigen::Vector2d(j.at("half_axes")[0].get<double>(), j.at("half_axes")[1].get<double>());
  }
}

namespace {

const char* kind_tag(StlFormula::Kind k) {
  switch (k) {
    case StlFormula::Kind::Pred: return "pred";
    case StlFormula::Kind::NegPred: return "neg_pred";
    case StlFormula::Kind::And: return "and";
    case StlFormula::Kind::Or: return "or";
    case StlFormula::Kind::F: return "F";
    case StlFormula::Kind::G: return "G";
    case StlFormula::Kind::TopAnd: return "top_and";
  }
  return "?";
}

StlFormula::Kind tag_kind(const std::string& s) {
  if (s == "pred") return StlFormula::Kind::Pred;
  if (s == "neg_pred") return StlFormula::Kind::NegPred;
  if (s == "and") return StlFormula::Kind::And;
  if (s == "or") return StlFormula::Kind::Or;
  if (s == "F") return StlFormula::Kind::F;
  if (s == "G") return StlFormula::Kind::G;
  if (s == "top_and") return StlFormula::Kind::TopAnd;
  throw std::invalid_argument("unknown formula tag: " + s);
}

}  // namespace

void to_json(nlohmann::json& j, const StlFormula& f) {
  j = nlohmann::json{{"kind", kind_tag(f.kind)}};
  if (f.kind == StlFormula::Kind::Pred || f.kind == StlFormula::Kind::NegPred) {
    j["pred"] = f.pred;
    return;
  }
  if (f.kind == StlFormula::Kind::F || f.kind == StlFormula::Kind::G) {
    j["interval"] = {f.t_a, f.t_b};
  }
  j["children"] = f.children;
}

void from_json(const nlohmann::json& j, StlFormula& f) {
  f.kind = tag_kind(j.at("kind").get<std::string>());
  if (f.kind == StlFormula::Kind::Pred || f.kind == StlFormula::Kind::NegPred) {
    f.pred = j.at("pred").get<Predicate>();
    return;
  }
  if (f.kind == StlFormula::Kind::F || f.kind == StlFormula::Kind::G) {
    f.t_a = j.at("interval")[0].get<double>();
    f.t_b = j.at("interval")[1].get<double>();
  }
  f.children = j.at("children").get<std::vector<StlFormula>>();
}

}  // namespace stlcbf
