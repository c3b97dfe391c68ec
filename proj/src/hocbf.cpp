#include "stlcbf/hocbf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace stlcbf {

namespace {

void collect_predicate_level(const StlFormula& f, bool negate, std::vector<Predicate>& out) {
  switch (f.kind) {
    case StlFormula::Kind::Pred:
    case StlFormula::Kind::NegPred: {
      Predicate p = f.pred;
      const bool neg = negate != (f.kind == StlFormula::Kind::NegPred);
      if (neg) p.sign = -p.sign;
      out.push_back(std::move(p));
      return;
    }
    case StlFormula::Kind::And:
      for (const auto& c : f.children) collect_predicate_level(c, negate, out);
      return;
    case StlFormula::Kind::Or:
      throw InfeasibleSpec(
          "barrier construction does not support disjunction under temporal operators");
    default:
      throw InfeasibleSpec("temporal operators must wrap predicate-level formulas");
  }
}

}  // namespace

std::vector<PredSpec> collect_pred_specs(const StlFormula& top) {
  validate_fragment(top);
  const StlFormula* root = &top;
  StlFormula wrapped;
  if (top.kind != StlFormula::Kind::TopAnd) {
    wrapped = StlFormula::top({top});
    root = &wrapped;
  }

  std::vector<PredSpec> out;
  int group = 0;
  for (const auto& node : root->children) {
    std::vector<Predicate> preds;
    PredSpec proto;
    proto.group = group++;
    switch (node.kind) {
      case StlFormula::Kind::F:
      case StlFormula::Kind::G:
        proto.op = node.kind;
        proto.t_a = node.t_a;
        proto.t_b = node.t_b;
        collect_predicate_level(node.children.front(), false, preds);
        break;
      case StlFormula::Kind::Pred:
      case StlFormula::Kind::NegPred:
      case StlFormula::Kind::And:
        proto.op = StlFormula::Kind::Pred;  // bare: obligation at t = 0 only
        collect_predicate_level(node, false, preds);
        break;
      default:
        throw InfeasibleSpec("unsupported top-level conjunct");
    }
    for (auto& p : preds) {
      PredSpec s = proto;
      s.pred = std::move(p);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<PredCategory> categorize(const std::vector<PredSpec>& specs,
                                     const Eigen::VectorXd& x0) {
  std::vector<PredCategory> out;
  out.reserve(specs.size());
  for (const auto& s : specs) {
    const double h0 = eval_predicate(s.pred, x0);
    const bool starts_at_zero = s.t_a <= 1e-12;
    if (s.op == StlFormula::Kind::Pred) {
      if (h0 < 0.0) {
        throw InfeasibleSpec("bare predicate '" + s.pred.name + "' violated at x0");
      }
      out.push_back(PredCategory::I);
      continue;
    }
    if (h0 >= 0.0 && starts_at_zero) {
      out.push_back(PredCategory::I);
      continue;
    }
    if (s.op == StlFormula::Kind::F) {
      out.push_back(PredCategory::II);
      continue;
    }
    if (starts_at_zero) {
      // a hold obligation from t = 0 that is already violated has no remedy
      throw InfeasibleSpec("predicate '" + s.pred.name +
                           "' under an always-from-zero operator is violated at x0");
    }
    out.push_back(PredCategory::III);
  }
  return out;
}

std::vector<int> end_time_order(const std::vector<PredSpec>& specs) {
  std::vector<int> order(specs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return specs[static_cast<std::size_t>(a)].t_b < specs[static_cast<std::size_t>(b)].t_b;
  });
  return order;
}

HocbfBuilder::HocbfBuilder(SystemModel model, std::vector<PredSpec> specs,
                           const Eigen::VectorXd& x0_repr, double gamma_c, double eps_slack,
                           double eps_p, EmissionTuning tuning)
    : model_(model),
      tuning_(tuning),
      specs_(std::move(specs)),
      gamma_c_(gamma_c),
      eps_slack_(eps_slack),
      eps_p_(eps_p) {
  categories_ = categorize(specs_, x0_repr);
  order_ = end_time_order(specs_);
  pos_of_.assign(specs_.size(), -1);
  for (std::size_t p = 0; p < order_.size(); ++p) pos_of_[static_cast<std::size_t>(order_[p])] = static_cast<int>(p);

  gkind_.resize(specs_.size());
  for (std::size_t j = 0; j < specs_.size(); ++j) {
    switch (categories_[j]) {
      case PredCategory::I: gkind_[j] = GammaKind::Zero; break;
      case PredCategory::II: gkind_[j] = GammaKind::Linear; break;
      case PredCategory::III: gkind_[j] = GammaKind::Exponential; break;
    }
    if (gkind_[j] != GammaKind::Zero) ++trainable_count_;
  }

  // pairs where both gammas are fixed have nothing to adjust; their
  // non-conflict inequality is a property of the scenario geometry
  for (std::size_t pj = 0; pj < order_.size(); ++pj) {
    const int j = order_[pj];
    if (categories_[static_cast<std::size_t>(j)] != PredCategory::I) continue;
    for (std::size_t pk = 0; pk < pj; ++pk) {
      const int k = order_[pk];
      if (categories_[static_cast<std::size_t>(k)] != PredCategory::I) continue;
      const auto& sj = specs_[static_cast<std::size_t>(j)].pred;
      const auto& sk = specs_[static_cast<std::size_t>(k)].pred;
      if (sj.sign < 0.0 && sk.sign < 0.0) continue;
      const double lhs = 0.0;
      const double rhs = sj.sign * sk.sign * cross_sigma(j, k) - 0.0 - sk.sign * sk.radius -
                         sj.sign * sj.radius;
      if (lhs < rhs) {
        throw InfeasibleSpec("fixed-barrier predicates '" + sk.name + "' and '" + sj.name +
                             "' conflict geometrically");
      }
    }
  }
}

double HocbfBuilder::cross_sigma(int later, int earlier) const {
  const Predicate& pj = specs_[static_cast<std::size_t>(later)].pred;
  const Predicate& pk = specs_[static_cast<std::size_t>(earlier)].pred;
  const Eigen::Vector2d diff = pj.center - pk.center;
  return gauge_value(pj, Vec2<double>(diff[0], diff[1]));
}

std::vector<std::string> HocbfBuilder::check_raw_constraints(
    const Eigen::VectorXd& x0, const std::vector<HocbfInstance<double>>& insts) const {
  std::vector<std::string> violations;
  auto fail = [&](const std::string& what) { violations.push_back(what); };

  for (std::size_t j = 0; j < specs_.size(); ++j) {
    const PredSpec& sp = specs_[j];
    const auto& inst = insts[j];
    const double h0 = eval_predicate(sp.pred, x0);
    std::ostringstream tag;
    tag << "pred '" << sp.pred.name << "': ";

    switch (inst.gamma.kind) {
      case GammaKind::Zero:
        if (h0 < 0.0) fail(tag.str() + "category I predicate violated at x0");
        break;
      case GammaKind::Linear: {
        if (!(inst.gamma.omega1 > 0.0)) fail(tag.str() + "omega1 must be positive");
        if (!(inst.gamma.omega2 < 0.0)) fail(tag.str() + "omega2 must be negative");
        if (!(gamma_eval(inst.gamma, 0.0) > -h0)) fail(tag.str() + "gamma(0) > -h(x0) violated");
        if (!(gamma_eval(inst.gamma, sp.t_b) < 0.0)) fail(tag.str() + "gamma(t_b) < 0 violated");
        if (sp.pred.sup_h_finite() &&
            !(gamma_eval(inst.gamma, sp.t_a) > -sp.pred.sup_h())) {
          fail(tag.str() + "gamma(t_a) > -sup h violated");
        }
        break;
      }
      case GammaKind::Exponential: {
        if (!(inst.gamma.omega1 > 0.0)) fail(tag.str() + "omega1 must be positive");
        if (!(inst.gamma.omega2 > 0.0)) fail(tag.str() + "omega2 must be positive");
        if (!(gamma_eval(inst.gamma, 0.0) > -h0)) fail(tag.str() + "gamma(0) > -h(x0) violated");
        if (!(gamma_eval(inst.gamma, sp.t_a) < 0.0)) fail(tag.str() + "gamma(t_a) < 0 violated");
        break;
      }
    }
  }

  // pairwise non-conflict inequalities in end-time order
  for (std::size_t pj = 0; pj < order_.size(); ++pj) {
    const int j = order_[pj];
    const auto& sj = specs_[static_cast<std::size_t>(j)];
    for (std::size_t pk = 0; pk < pj; ++pk) {
      const int k = order_[pk];
      const auto& sk = specs_[static_cast<std::size_t>(k)];
      if (sj.pred.sign < 0.0 && sk.pred.sign < 0.0) continue;
      const double lhs = gamma_eval(insts[static_cast<std::size_t>(j)].gamma, sk.t_b);
      const double rhs = sj.pred.sign * sk.pred.sign * cross_sigma(j, k) -
                         gamma_eval(insts[static_cast<std::size_t>(k)].gamma, sk.t_b) -
                         sk.pred.sign * sk.pred.radius - sj.pred.sign * sj.pred.radius;
      if (lhs < rhs - 1e-12) {
        std::ostringstream msg;
        msg << "non-conflict bound violated for '" << sj.pred.name << "' vs '" << sk.pred.name
            << "': gamma_j(" << sk.t_b << ") = " << lhs << " < " << rhs;
        fail(msg.str());
      }
    }
  }

  // multiplier lower bounds at the initial state
  for (std::size_t j = 0; j < specs_.size(); ++j) {
    const auto& inst = insts[j];
    const auto gv = gamma_derivatives(inst.gamma, 0.0);
    const auto d = barrier_derivatives(model_, specs_[j].pred, gv, VecX<double>(x0));
    std::ostringstream tag;
    tag << "pred '" << specs_[j].pred.name << "': ";
    if (!(d.b > 0.0)) {
      fail(tag.str() + "barrier not positive at x0");
      continue;
    }
    const double floor = std::max(-d.bdot / d.b, 0.0);
    if (!(inst.p_init[0] > floor)) fail(tag.str() + "p1 below its initialization bound");
    if (!(inst.p_init[1] > 0.0)) fail(tag.str() + "p2 must be positive");
    if (!(d.bdot + inst.p_init[0] * d.b > 0.0)) {
      fail(tag.str() + "psi1 not positive at the initial state");
    }
  }

  return violations;
}

}  // namespace stlcbf
