#pragma once

/**
 * @file
 * @brief Scenario configuration: environment geometry, task formula, system
 *        selection, policy ablation flags, and training hyperparameters.
 *
 * Scenarios load from a JSON key tree with explicit units in the field names.
 * Loading validates the schema, checks horizon/interval consistency, and
 * verifies the construction is feasible from the initial region.
 */

#include "stlcbf/hocbf.hpp"
#include "stlcbf/stl.hpp"
#include "stlcbf/systems.hpp"

#include <json.hpp>

#include <cstdint>
#include <random>
#include <string>

namespace stlcbf {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Ablation { BnFixedP, BnVarP, FeasiBnVarP, FcNet, HocbfBaseline };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

enum class QMode { Identity, Trainable };

/// Controller variant switches. The three BarrierNet ablations map to
/// (fixed multipliers, no feasibility terms), (time-varying, no feasibility
/// terms) and (time-varying, feasibility-aware).
struct PolicyConfig {
  Ablation ablation = Ablation::FeasiBnVarP;
  bool memory = false;
  QMode q_mode = QMode::Identity;

  bool uses_qp() const { return ablation != Ablation::FcNet; }
  bool multipliers_time_varying() const {
    return ablation == Ablation::BnVarP || ablation == Ablation::FeasiBnVarP;
  }
  bool feasibility_aware() const { return ablation == Ablation::FeasiBnVarP; }
  bool trained() const { return ablation != Ablation::HocbfBaseline; }
  /// Input bounds live inside the QP only for the untrained baseline; the
  /// learned controllers keep them in the objective through the bound
  /// subformula instead.
  bool qp_input_bounds() const { return ablation == Ablation::HocbfBaseline; }
};

struct TrainingConfig {
  int iterations = 500;
  int rollouts_per_iter = 10;
  double learning_rate = 1e-3;
  /// Step decay: lr multiplied by 0.25 at 70% and again at 90% of the run.
  bool lr_step_decay = true;
  std::uint64_t seed = 0;
  int hidden_width = 64;
  int lstm_hidden = 32;
};

/// Axis-aligned initial-position region; rollouts start at rest inside it.
struct InitRegion {
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;

  Eigen::VectorXd center_state() const;
  Eigen::VectorXd sample_state(std::mt19937_64& rng) const;
};

struct ScenarioConfig {
  std::string name;
  SystemModel system;
  double dt = 0.1;
  double horizon = 5.0;
  InitRegion init_region;
  StlFormula formula;
  std::vector<PredSpec> pred_specs;  // flattened, construction order
  InputBounds input_bounds;
  double beta = 0.5;
  double gamma_c = 0.05;
  double input_cost_weight = 0.003;
  EmissionTuning tuning;
  PolicyConfig policy;
  TrainingConfig training;

  int control_steps() const { return static_cast<int>(std::llround(horizon / dt)); }

  /// Canonical serialized form; the hash guards checkpoint/config pairing.
  nlohmann::json to_json() const;
  std::string config_hash() const;
};

/// Parses and validates a scenario. Throws ConfigError for schema problems
/// and InfeasibleSpec when the task cannot be constructed from the initial
/// region.
ScenarioConfig scenario_from_json(const nlohmann::json& j);
ScenarioConfig load_scenario(const std::string& path);

}  // namespace stlcbf
