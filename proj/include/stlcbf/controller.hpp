#pragma once

/**
 * @file
 * @brief Closed-loop policy: the hyperparameter net maps the initial state
 *        to gamma parameters and initial multipliers, the reference net
 *        produces the QP cost terms each step, the multiplier net rescales
 *        the class-kappa gains along the rollout, and the control QP closes
 *        the loop. Training maximizes the robustness of the augmented
 *        specification (task, input bounds, per-barrier feasibility) minus a
 *        quadratic input cost.
 */

#include "stlcbf/checkpoint.hpp"
#include "stlcbf/hocbf.hpp"
#include "stlcbf/nn.hpp"
#include "stlcbf/qp.hpp"
#include "stlcbf/scenario.hpp"

#include <memory>
#include <optional>
#include <random>
#include <vector>

namespace stlcbf {

struct StepRecord {
  double t = 0.0;
  Eigen::VectorXd state;
  Eigen::VectorXd input;
  QpStatus qp_status = QpStatus::Optimal;
  bool used_fallback = false;
  std::vector<bool> active;   // per instance
  std::vector<double> psi0;   // per instance, NaN when inactive
  std::vector<double> psi1;
  std::vector<double> p1;     // multipliers queried this step
  std::vector<double> p2;
};

struct RolloutRecord {
  Trajectory traj;
  std::vector<StepRecord> steps;
  std::vector<double> deletion_times;  // per instance, +inf when never deleted
  int infeasible_qp_count = 0;
  bool aborted = false;  // execution-mode stop at an infeasible QP

  // tape-valued results (valid while the recording tape lives)
  Ad rho_uni;
  Ad rho_task_exp;
  Ad rho_bounds_exp;
  std::vector<Ad> rho_fea;  // per instance, only in feasibility-aware mode
  Ad input_cost;
  Ad objective;  // rho_uni - cost
  double rho_task_classical = 0.0;
};

struct TrainRow {
  int iteration = 0;
  double mean_rho_uni = 0.0;
  double mean_rho_task_classical = 0.0;
  double mean_objective = 0.0;
  int infeasible_qp_count = 0;
  int resampled_x0 = 0;
  bool skipped_update = false;
};

struct EvalSummary {
  int rollouts = 0;
  int aborted = 0;
  double mean_rho_classical = 0.0;
  double min_rho_classical = 0.0;
  double mean_rho_uni = 0.0;
  int satisfied = 0;  // classical robustness > 0
  int infeasible_qp = 0;
};

/// Per-rollout behavior switches beyond the scenario's own policy flags;
/// used by evaluation protocols that probe the untrained construction.
struct RolloutOptions {
  enum class Mode { Training, Execution };
  Mode mode = Mode::Execution;
  /// Draw the construction raw activations from this RNG instead of the
  /// hyperparameter net (random constraint-satisfying draw).
  std::mt19937_64* random_raws = nullptr;
  /// Offsets on the random raw activations: negative values draw gamma
  /// shapes near their minimal clearance and small multipliers (gentle
  /// barrier pacing).
  double random_omega_shift = 0.0;
  double random_p_shift = 0.0;
  /// Force a zero reference term regardless of the reference net.
  bool zero_reference = false;
  std::optional<bool> override_qp_bounds;
};

class Controller {
public:
  /// Fresh controller with freshly initialized networks.
  explicit Controller(ScenarioConfig cfg);
  /// Controller over restored parameters (shapes must match the config).
  Controller(ScenarioConfig cfg, ParamStore params);

  const ScenarioConfig& config() const { return cfg_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  const HocbfBuilder* builder() const { return builder_.get(); }

  Eigen::VectorXd sample_initial_state(std::mt19937_64& rng) const;

  /// Hyperparameter emission for one initial condition: gamma parameters
  /// squashed into their boxes plus initial multipliers above their bounds.
  std::vector<HocbfInstance<Ad>> initnet_forward(const Eigen::VectorXd& x0, const TapedParams& tp,
                                                 Tape& tape) const;

  /// Full closed-loop rollout recorded on the given tape.
  RolloutRecord rollout(const Eigen::VectorXd& x0, Tape& tape, const RolloutOptions& opts) const;

  /// Rollout against caller-managed parameter leaves, so gradients can be
  /// read back after the backward sweep.
  RolloutRecord rollout_with_params(const Eigen::VectorXd& x0, Tape& tape, const TapedParams& tp,
                                    const RolloutOptions& opts) const;

  /// Mean objective over a batch of records (tape-valued).
  static Ad batch_objective(const std::vector<RolloutRecord>& records);

  /// Runs the training loop; returns one row per iteration.
  std::vector<TrainRow> train(int iterations, std::uint64_t seed, int threads);

  EvalSummary evaluate(int rollouts, std::uint64_t seed);

  /// Human-readable construction report: categories, emission order, boxes
  /// at the initial-region center.
  std::string construction_report() const;

  Checkpoint make_checkpoint() const;

private:
  void init_networks();
  friend struct ControllerTestAccess;

  ScenarioConfig cfg_;
  ParamStore params_;
  std::unique_ptr<HocbfBuilder> builder_;
  MlpSpec initnet_spec_;
  MlpSpec refnet_spec_;
  MlpSpec multnet_spec_;
  MlpSpec qnet_spec_;
};

/// Writes learning-curve rows as delimited text (one row per iteration).
void write_curves(const std::string& path, const std::vector<TrainRow>& rows);
std::vector<TrainRow> read_curves(const std::string& path);

int default_thread_count(int rollouts_per_iter);

}  // namespace stlcbf
