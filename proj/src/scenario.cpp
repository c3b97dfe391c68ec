#include "stlcbf/scenario.hpp"

#include <fstream>
#include <sstream>

namespace stlcbf {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::BnFixedP: return "bn-fixedp";
    case Ablation::BnVarP: return "bn-varp";
    case Ablation::FeasiBnVarP: return "feasibn-varp";
    case Ablation::FcNet: return "fcnet";
    case Ablation::HocbfBaseline: return "hocbf-baseline";
  }
  return "?";
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "bn-fixedp") return Ablation::BnFixedP;
  if (s == "bn-varp") return Ablation::BnVarP;
  if (s == "feasibn-varp") return Ablation::FeasiBnVarP;
  if (s == "fcnet") return Ablation::FcNet;
  if (s == "hocbf-baseline") return Ablation::HocbfBaseline;
  throw ConfigError("unknown ablation: " + s);
}

Eigen::VectorXd InitRegion::center_state() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  x[0] = 0.5 * (x_min + x_max);
  x[1] = 0.5 * (y_min + y_max);
  return x;
}

Eigen::VectorXd InitRegion::sample_state(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> ux(x_min, x_max);
  std::uniform_real_distribution<double> uy(y_min, y_max);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  x[0] = ux(rng);
  x[1] = uy(rng);
  return x;
}

namespace {

Predicate predicate_from_json(const nlohmann::json& j) {
  Predicate p;
  p.name = j.at("name").get<std::string>();
  const std::string role = j.at("role").get<std::string>();
  if (role == "reach") {
    p.sign = 1.0;
  } else if (role == "avoid") {
    p.sign = -1.0;
  } else {
    throw ConfigError("predicate '" + p.name + "': role must be reach or avoid");
  }
  const std::string gauge = j.at("gauge").get<std::string>();
  p.center = Eigen::Vector2d(j.at("center")[0].get<double>(), j.at("center")[1].get<double>());
  if (gauge == "euclidean") {
    p.gauge = GaugeKind::EuclideanNorm;
    p.radius = j.at("radius").get<double>();
  } else if (gauge == "superellipse") {
    p.gauge = GaugeKind::Superellipse4;
    p.radius = 1.0;
    p.half_axes = Eigen::Vector2d(j.at("half_axes")[0].get<double>(),
                                  j.at("half_axes")[1].get<double>());
    if (p.half_axes.minCoeff() <= 0.0) {
      throw ConfigError("predicate '" + p.name + "': half axes must be positive");
    }
  } else {
    throw ConfigError("predicate '" + p.name + "': unknown gauge " + gauge);
  }
  if (p.radius <= 0.0) throw ConfigError("predicate '" + p.name + "': radius must be positive");
  return p;
}

nlohmann::json predicate_to_json(const Predicate& p) {
  nlohmann::json j;
  j["name"] = p.name;
  j["role"] = p.sign > 0 ? "reach" : "avoid";
  j["center"] = {p.center[0], p.center[1]};
  if (p.gauge == GaugeKind::EuclideanNorm) {
    j["gauge"] = "euclidean";
    j["radius"] = p.radius;
  } else {
    j["gauge"] = "superellipse";
    j["half_axes"] = {p.half_axes[0], p.half_axes[1]};
  }
  return j;
}

}  // namespace

nlohmann::json ScenarioConfig::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["system"] = system.name();
  j["dt_s"] = dt;
  j["horizon_s"] = horizon;
  j["init_region"] = {{"x", {init_region.x_min, init_region.x_max}},
                      {"y", {init_region.y_min, init_region.y_max}}};
  nlohmann::json conjuncts = nlohmann::json::array();
  // regroup the flattened specs by conjunct
  int group = -1;
  for (const auto& s : pred_specs) {
    if (s.group != group) {
      group = s.group;
      nlohmann::json node;
      node["op"] = s.op == StlFormula::Kind::F ? "F" : (s.op == StlFormula::Kind::G ? "G" : "now");
      if (s.op != StlFormula::Kind::Pred) node["interval"] = {s.t_a, s.t_b};
      node["predicates"] = nlohmann::json::array();
      conjuncts.push_back(std::move(node));
    }
    conjuncts.back()["predicates"].push_back(predicate_to_json(s.pred));
  }
  j["formula"] = std::move(conjuncts);
  j["input_bounds"] = {{"min", {input_bounds.u_min[0], input_bounds.u_min[1]}},
                       {"max", {input_bounds.u_max[0], input_bounds.u_max[1]}}};
  j["robustness_beta"] = beta;
  j["gamma_exp_floor"] = gamma_c;
  j["input_cost_weight"] = input_cost_weight;
  j["construction"] = {{"omega1_raw_bias", tuning.omega1_raw_bias},
                       {"p1_raw_bias", tuning.p1_raw_bias},
                       {"p2_raw_bias", tuning.p2_raw_bias},
                       {"p2_feasibility_floor", tuning.p2_feasibility_floor}};
  j["policy"] = {{"ablation", to_string(policy.ablation)},
                 {"memory", policy.memory},
                 {"q_mode", policy.q_mode == QMode::Identity ? "identity" : "trainable"}};
  j["training"] = {{"iterations", training.iterations},
                   {"rollouts_per_iter", training.rollouts_per_iter},
                   {"learning_rate", training.learning_rate},
                   {"lr_step_decay", training.lr_step_decay},
                   {"seed", training.seed},
                   {"hidden_width", training.hidden_width},
                   {"lstm_hidden", training.lstm_hidden}};
  return j;
}

std::string ScenarioConfig::config_hash() const {
  // pins the scenario, policy and network architecture; run provenance
  // (iterations, seed, learning rate) may differ between train and replay
  nlohmann::json j = to_json();
  j["training"] = {{"hidden_width", training.hidden_width},
                   {"lstm_hidden", training.lstm_hidden}};
  const std::size_t h = std::hash<std::string>{}(j.dump());
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig cfg;
  try {
    cfg.name = j.at("name").get<std::string>();
    cfg.system = SystemModel::from_name(j.at("system").get<std::string>());
    cfg.dt = j.at("dt_s").get<double>();
    cfg.horizon = j.at("horizon_s").get<double>();
    if (cfg.dt <= 0.0 || cfg.horizon <= 0.0) {
      throw ConfigError("dt_s and horizon_s must be positive");
    }

    const auto& init = j.at("init_region");
    cfg.init_region.x_min = init.at("x")[0].get<double>();
    cfg.init_region.x_max = init.at("x")[1].get<double>();
    cfg.init_region.y_min = init.at("y")[0].get<double>();
    cfg.init_region.y_max = init.at("y")[1].get<double>();
    if (!(cfg.init_region.x_min <= cfg.init_region.x_max) ||
        !(cfg.init_region.y_min <= cfg.init_region.y_max)) {
      throw ConfigError("init_region bounds are inverted");
    }

    std::vector<StlFormula> conjuncts;
    for (const auto& node : j.at("formula")) {
      const std::string op = node.at("op").get<std::string>();
      std::vector<StlFormula> members;
      for (const auto& pj : node.at("predicates")) {
        Predicate p = predicate_from_json(pj);
        members.push_back(StlFormula::atom(std::move(p)));
      }
      if (members.empty()) throw ConfigError("formula conjunct without predicates");
      StlFormula inner =
          members.size() == 1 ? std::move(members.front()) : StlFormula::conj(std::move(members));
      if (op == "F" || op == "G") {
        const double ta = node.at("interval")[0].get<double>();
        const double tb = node.at("interval")[1].get<double>();
        conjuncts.push_back(op == "F" ? StlFormula::eventually(ta, tb, std::move(inner))
                                      : StlFormula::always(ta, tb, std::move(inner)));
      } else if (op == "now") {
        conjuncts.push_back(std::move(inner));
      } else {
        throw ConfigError("formula op must be F, G or now");
      }
    }
    cfg.formula = StlFormula::top(std::move(conjuncts));

    const auto& ib = j.at("input_bounds");
    cfg.input_bounds.u_min =
        (Eigen::VectorXd(2) << ib.at("min")[0].get<double>(), ib.at("min")[1].get<double>())
            .finished();
    cfg.input_bounds.u_max =
        (Eigen::VectorXd(2) << ib.at("max")[0].get<double>(), ib.at("max")[1].get<double>())
            .finished();
    cfg.input_bounds.validate();

    cfg.beta = j.value("robustness_beta", 0.5);
    cfg.gamma_c = j.value("gamma_exp_floor", 0.05);
    cfg.input_cost_weight = j.value("input_cost_weight", 0.003);
    if (j.contains("construction")) {
      const auto& cj = j.at("construction");
      cfg.tuning.omega1_raw_bias = cj.value("omega1_raw_bias", cfg.tuning.omega1_raw_bias);
      cfg.tuning.p1_raw_bias = cj.value("p1_raw_bias", cfg.tuning.p1_raw_bias);
      cfg.tuning.p2_raw_bias = cj.value("p2_raw_bias", cfg.tuning.p2_raw_bias);
      cfg.tuning.p2_feasibility_floor =
          cj.value("p2_feasibility_floor", cfg.tuning.p2_feasibility_floor);
    }
    if (cfg.beta < 0.0 || cfg.beta > 1.0) throw ConfigError("robustness_beta must be in [0,1]");

    if (j.contains("policy")) {
      const auto& pj = j.at("policy");
      cfg.policy.ablation = ablation_from_string(pj.value("ablation", "feasibn-varp"));
      cfg.policy.memory = pj.value("memory", false);
      const std::string qm = pj.value("q_mode", "identity");
      if (qm == "identity") {
        cfg.policy.q_mode = QMode::Identity;
      } else if (qm == "trainable") {
        cfg.policy.q_mode = QMode::Trainable;
      } else {
        throw ConfigError("q_mode must be identity or trainable");
      }
    }
    if (j.contains("training")) {
      const auto& tj = j.at("training");
      cfg.training.iterations = tj.value("iterations", 500);
      cfg.training.rollouts_per_iter = tj.value("rollouts_per_iter", 10);
      cfg.training.learning_rate = tj.value("learning_rate", 1e-3);
      cfg.training.lr_step_decay = tj.value("lr_step_decay", true);
      cfg.training.seed = tj.value("seed", std::uint64_t{0});
      cfg.training.hidden_width = tj.value("hidden_width", 64);
      cfg.training.lstm_hidden = tj.value("lstm_hidden", 32);
      if (cfg.training.rollouts_per_iter < 1) {
        throw ConfigError("rollouts_per_iter must be at least 1");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario schema error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("scenario validation error: ") + e.what());
  }

  try {
    validate_fragment(cfg.formula);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("formula outside the supported fragment: ") + e.what());
  }
  cfg.pred_specs = collect_pred_specs(cfg.formula);
  if (cfg.pred_specs.empty()) throw ConfigError("scenario has no predicates");
  if (horizon(cfg.formula) > cfg.horizon + 1e-9) {
    throw ConfigError("horizon_s is shorter than the formula horizon");
  }

  // feasibility of the construction from the initial region: categories must
  // hold at the center and the corners
  if (cfg.policy.uses_qp()) {
    const Eigen::VectorXd center = cfg.init_region.center_state();
    const auto cats = categorize(cfg.pred_specs, center);
    for (double cx : {cfg.init_region.x_min, cfg.init_region.x_max}) {
      for (double cy : {cfg.init_region.y_min, cfg.init_region.y_max}) {
        Eigen::VectorXd corner = Eigen::VectorXd::Zero(4);
        corner[0] = cx;
        corner[1] = cy;
        const auto corner_cats = categorize(cfg.pred_specs, corner);
        for (std::size_t i = 0; i < cats.size(); ++i) {
          if (cats[i] == PredCategory::I && corner_cats[i] != PredCategory::I) {
            throw InfeasibleSpec("predicate '" + cfg.pred_specs[i].pred.name +
                                 "' is not satisfied on the whole initial region");
          }
        }
      }
    }
    // exercises the geometric non-conflict checks between fixed barriers
    HocbfBuilder probe(cfg.system, cfg.pred_specs, center, cfg.gamma_c, 1e-3, 1e-3, cfg.tuning);
    (void)probe;
  }
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario parse error: ") + e.what());
  }
  return scenario_from_json(j);
}

}  // namespace stlcbf
