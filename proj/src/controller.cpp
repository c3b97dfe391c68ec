#include "stlcbf/controller.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

namespace stlcbf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (a + 1) + 0xBF58476D1CE4E5B9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<Ad> softplus_gate(const std::vector<Ad>& raw) {
  std::vector<Ad> out;
  out.reserve(raw.size());
  for (const Ad& r : raw) out.push_back(softplus(r) + Ad(1e-3));
  return out;
}

}  // namespace

Controller::Controller(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
  init_networks();
  std::mt19937_64 rng(mix_seed(cfg_.training.seed, 17, 23));
  if (cfg_.policy.uses_qp()) {
    init_mlp(params_, "initnet", initnet_spec_, rng);
    init_mlp(params_, "multnet", multnet_spec_, rng);
  }
  if (cfg_.policy.memory) {
    init_lstm(params_, "refnet.lstm0", cfg_.system.state_dim(), cfg_.training.lstm_hidden, rng);
    init_lstm(params_, "refnet.lstm1", cfg_.training.lstm_hidden, cfg_.training.lstm_hidden, rng);
    init_mlp(params_, "refnet.head", refnet_spec_, rng);
  } else {
    init_mlp(params_, "refnet", refnet_spec_, rng);
  }
  // zero reference at the start: the barrier construction alone paces the
  // untrained rollout
  const std::string head = cfg_.policy.memory ? "refnet.head" : "refnet";
  const int last = static_cast<int>(refnet_spec_.hidden.size());
  for (const char* part : {".W", ".b"}) {
    auto it = params_.tensors.find(head + part + std::to_string(last));
    if (it != params_.tensors.end()) {
      std::fill(it->second.values.begin(), it->second.values.end(), 0.0);
    }
  }
  if (cfg_.policy.q_mode == QMode::Trainable) init_mlp(params_, "qnet", qnet_spec_, rng);
}

Controller::Controller(ScenarioConfig cfg, ParamStore params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  init_networks();
}

void Controller::init_networks() {
  if (cfg_.policy.uses_qp()) {
    builder_ = std::make_unique<HocbfBuilder>(cfg_.system, cfg_.pred_specs,
                                              cfg_.init_region.center_state(), cfg_.gamma_c,
                                              1e-3, 1e-3, cfg_.tuning);
  }
  const int n = cfg_.system.state_dim();
  const int q = cfg_.system.input_dim();
  const int w = cfg_.training.hidden_width;
  const int raw_channels =
      builder_ ? builder_->omega_raw_channels() + builder_->multiplier_raw_channels() : 0;
  initnet_spec_ = MlpSpec{n, {w, w}, raw_channels};
  multnet_spec_ = MlpSpec{2, {w, w}, builder_ ? builder_->multiplier_raw_channels() : 0};
  refnet_spec_ = cfg_.policy.memory ? MlpSpec{cfg_.training.lstm_hidden, {}, q}
                                    : MlpSpec{n, {w, w}, q};
  qnet_spec_ = MlpSpec{n, {w}, q * (q + 1) / 2};
}

Eigen::VectorXd Controller::sample_initial_state(std::mt19937_64& rng) const {
  return cfg_.init_region.sample_state(rng);
}

std::vector<HocbfInstance<Ad>> Controller::initnet_forward(const Eigen::VectorXd& x0,
                                                           const TapedParams& tp,
                                                           Tape& tape) const {
  if (!builder_) throw std::logic_error("initnet_forward: policy has no barrier construction");
  std::vector<Ad> input;
  for (int i = 0; i < x0.size(); ++i) input.push_back(Ad(x0[i]));
  const std::vector<Ad> raws = mlp_forward(tp, "initnet", initnet_spec_, input);
  (void)tape;
  return builder_->emit<Ad>(x0, raws);
}

namespace {

/// Multiplier gates at a query position: softplus(head) + 1e-3 per (i, j).
std::vector<Ad> multiplier_gates(const TapedParams& tp, const MlpSpec& spec,
                                 const Vec2<Ad>& pos) {
  const std::vector<Ad> input = {pos[0], pos[1]};
  return softplus_gate(mlp_forward(tp, "multnet", spec, input));
}

}  // namespace

RolloutRecord Controller::rollout(const Eigen::VectorXd& x0, Tape& tape,
                                  const RolloutOptions& opts) const {
  const TapedParams tp(params_, tape);
  return rollout_with_params(x0, tape, tp, opts);
}

RolloutRecord Controller::rollout_with_params(const Eigen::VectorXd& x0, Tape& tape,
                                              const TapedParams& tp,
                                              const RolloutOptions& opts) const {
  const PolicyConfig& pol = cfg_.policy;
  const SystemModel& model = cfg_.system;
  const int K = cfg_.control_steps();
  const int q = model.input_dim();
  const double dt = cfg_.dt;
  const bool use_qp = pol.uses_qp();
  // the untrained reference construction is a measurement protocol, not a
  // deployed controller: its rollouts continue through infeasible steps so
  // its (typically negative) robustness is observable
  const bool training = opts.mode == RolloutOptions::Mode::Training ||
                        pol.ablation == Ablation::HocbfBaseline;
  // the physical input box lives inside the QP whenever the controller is
  // executed; the optimization stage lifts it and accounts for the limits
  // through the bound subformula instead
  const bool qp_bounds =
      opts.override_qp_bounds.value_or(!training || pol.qp_input_bounds());
  const bool zero_ref = opts.zero_reference || pol.ablation == Ablation::HocbfBaseline;

  RolloutRecord rec;
  rec.traj.dt = dt;

  std::vector<VecX<Ad>> states;
  states.reserve(static_cast<std::size_t>(K) + 1);
  states.push_back(to_scalar<Ad>(x0));

  // construction at t = 0
  std::vector<HocbfInstance<Ad>> instances;
  std::vector<Ad> gate_denom;
  const int M = builder_ ? builder_->num_predicates() : 0;
  if (use_qp) {
    if (opts.random_raws != nullptr) {
      std::normal_distribution<double> nd(0.0, 1.0);
      std::vector<Ad> raws;
      const int omega_chan = builder_->omega_raw_channels();
      const int nchan = omega_chan + builder_->multiplier_raw_channels();
      raws.reserve(static_cast<std::size_t>(nchan));
      for (int i = 0; i < nchan; ++i) {
        const double shift = i < omega_chan ? opts.random_omega_shift : opts.random_p_shift;
        raws.push_back(Ad(nd(*opts.random_raws) + shift));
      }
      instances = builder_->emit<Ad>(x0, raws);
    } else {
      instances = initnet_forward(x0, tp, tape);
    }
    if (pol.multipliers_time_varying()) {
      gate_denom = multiplier_gates(tp, multnet_spec_, Vec2<Ad>(Ad(x0[0]), Ad(x0[1])));
    }
  }
  rec.deletion_times.assign(static_cast<std::size_t>(M), kInf);

  // per-instance feasibility margins (time, psi1) while active
  std::vector<std::vector<std::pair<double, Ad>>> margins(static_cast<std::size_t>(M));

  LstmState lstm0, lstm1;
  if (pol.memory) {
    lstm0.h.assign(static_cast<std::size_t>(cfg_.training.lstm_hidden), Ad(0.0));
    lstm0.c = lstm0.h;
    lstm1 = lstm0;
  }

  std::vector<VecX<Ad>> inputs;
  inputs.reserve(static_cast<std::size_t>(K));

  for (int k = 0; k < K; ++k) {
    const double t = k * dt;
    const Eigen::VectorXd xval = values_of(states.back());

    StepRecord srec;
    srec.t = t;
    srec.state = xval;
    srec.active.assign(static_cast<std::size_t>(M), false);
    srec.psi0.assign(static_cast<std::size_t>(M), kNan);
    srec.psi1.assign(static_cast<std::size_t>(M), kNan);
    srec.p1.assign(static_cast<std::size_t>(M), kNan);
    srec.p2.assign(static_cast<std::size_t>(M), kNan);

    // constraint rows from the active barriers
    std::vector<Vec2<Ad>> row_a;
    std::vector<Ad> row_c;
    if (use_qp) {
      update_deletions(instances, cfg_.pred_specs, xval, t);
      std::vector<Ad> gates;
      if (pol.multipliers_time_varying()) {
        gates = multiplier_gates(tp, multnet_spec_,
                                 Vec2<Ad>(states.back()[0], states.back()[1]));
      }
      for (int j = 0; j < M; ++j) {
        auto& inst = instances[static_cast<std::size_t>(j)];
        if (inst.deleted) continue;
        const auto gv = gamma_derivatives(inst.gamma, t);
        const PredSpec& sp = cfg_.pred_specs[static_cast<std::size_t>(j)];
        BarrierDerivs<Ad> d;
        try {
          d = barrier_derivatives(model, sp.pred, gv, states.back());
        } catch (const SingularGradient&) {
          VecX<Ad> nudged = states.back();
          nudged[0] = nudged[0] + Ad(1e-9);
          d = barrier_derivatives(model, sp.pred, gv, nudged);
        }
        Ad p1 = inst.p_init[0];
        Ad p2 = inst.p_init[1];
        if (pol.multipliers_time_varying()) {
          p1 = p1 * gates[static_cast<std::size_t>(2 * j)] /
               gate_denom[static_cast<std::size_t>(2 * j)];
          p2 = p2 * gates[static_cast<std::size_t>(2 * j + 1)] /
               gate_denom[static_cast<std::size_t>(2 * j + 1)];
        }
        const auto psi = psi_values(d, p1, p2);
        row_a.push_back(psi.row_a);
        row_c.push_back(psi.row_c);
        margins[static_cast<std::size_t>(j)].emplace_back(t, psi.psi1);
        srec.active[static_cast<std::size_t>(j)] = true;
        srec.psi0[static_cast<std::size_t>(j)] = psi.psi0.v;
        srec.psi1[static_cast<std::size_t>(j)] = psi.psi1.v;
        srec.p1[static_cast<std::size_t>(j)] = p1.v;
        srec.p2[static_cast<std::size_t>(j)] = p2.v;
      }
    }

    // reference terms
    VecX<Ad> F = VecX<Ad>::Zero(q);
    if (!zero_ref) {
      if (pol.memory) {
        std::vector<Ad> xin(states.back().data(), states.back().data() + states.back().size());
        lstm0 = lstm_step(tp, "refnet.lstm0", cfg_.training.lstm_hidden, lstm0, xin);
        lstm1 = lstm_step(tp, "refnet.lstm1", cfg_.training.lstm_hidden, lstm1, lstm0.h);
        const auto out = mlp_forward(tp, "refnet.head", refnet_spec_, lstm1.h);
        for (int i = 0; i < q; ++i) F[i] = out[static_cast<std::size_t>(i)];
      } else {
        std::vector<Ad> xin(states.back().data(), states.back().data() + states.back().size());
        const auto out = mlp_forward(tp, "refnet", refnet_spec_, xin);
        for (int i = 0; i < q; ++i) F[i] = out[static_cast<std::size_t>(i)];
      }
    }

    VecX<Ad> u(q);
    if (!use_qp) {
      u = F;  // plain network controller
    } else {
      QpProblem qp;
      qp.allow_infeasible_fallback = training;
      qp.Q.resize(q, q);
      for (int i = 0; i < q; ++i) {
        for (int jj = 0; jj < q; ++jj) qp.Q(i, jj) = Ad(i == jj ? 1.0 : 0.0);
      }
      if (pol.q_mode == QMode::Trainable) {
        std::vector<Ad> xin(states.back().data(), states.back().data() + states.back().size());
        const auto l = mlp_forward(tp, "qnet", qnet_spec_, xin);
        // Q = L L' + 1e-6 I with L lower triangular
        const Ad l00 = l[0], l10 = l[1], l11 = l[2];
        qp.Q(0, 0) = l00 * l00 + Ad(1e-6);
        qp.Q(0, 1) = l00 * l10;
        qp.Q(1, 0) = l00 * l10;
        qp.Q(1, 1) = l10 * l10 + l11 * l11 + Ad(1e-6);
      }
      qp.F = F;
      // without the physical bounds a wide guard box still caps the
      // commanded input; any trajectory that needs it has already lost the
      // bound subformula by a factor of five
      const double guard = qp_bounds ? 1.0 : 5.0;
      qp.G.resize(static_cast<int>(row_a.size()) + 2 * q, q);
      qp.h.resize(static_cast<int>(row_a.size()) + 2 * q);
      for (std::size_t r = 0; r < row_a.size(); ++r) {
        for (int jj = 0; jj < q; ++jj) {
          qp.G(static_cast<int>(r), jj) = Ad(0.0) - row_a[r][jj];
        }
        qp.h[static_cast<int>(r)] = row_c[r];
      }
      const int base = static_cast<int>(row_a.size());
      for (int i = 0; i < q; ++i) {
        for (int jj = 0; jj < q; ++jj) {
          qp.G(base + i, jj) = Ad(i == jj ? 1.0 : 0.0);
          qp.G(base + q + i, jj) = Ad(i == jj ? -1.0 : 0.0);
        }
        qp.h[base + i] = Ad(guard * cfg_.input_bounds.u_max[i]);
        qp.h[base + q + i] = Ad(-guard * cfg_.input_bounds.u_min[i]);
      }

      const QpSolution sol = solve(qp);
      srec.qp_status = sol.status;
      if (sol.status != QpStatus::Optimal) {
        ++rec.infeasible_qp_count;
        if (!training || sol.u.size() == 0) {
          rec.aborted = true;
          rec.steps.push_back(std::move(srec));
          break;
        }
        srec.used_fallback = true;
        // the violation minimizer trades the guard rows against barrier
        // violations; clamp it to the guard box so the plant state stays
        // representable
        u = sol.u;
        for (int i = 0; i < q; ++i) {
          u[i] = min(max(u[i], Ad(guard * cfg_.input_bounds.u_min[i])),
                     Ad(guard * cfg_.input_bounds.u_max[i]));
        }
      } else {
        u = sol.u;
      }
    }

    srec.input = values_of(u);
    inputs.push_back(u);
    rec.steps.push_back(std::move(srec));
    states.push_back(step(model, states.back(), u, dt));
  }

  for (int j = 0; j < M; ++j) {
    rec.deletion_times[static_cast<std::size_t>(j)] =
        instances.empty() ? kInf : instances[static_cast<std::size_t>(j)].t_del;
  }
  rec.traj.states.reserve(states.size());
  for (const auto& s : states) rec.traj.states.push_back(values_of(s));
  rec.traj.inputs.reserve(inputs.size());
  for (const auto& uu : inputs) rec.traj.inputs.push_back(values_of(uu));

  if (rec.aborted) {
    rec.rho_uni = Ad(-kInf);
    rec.objective = Ad(-kInf);
    return rec;
  }

  const double beta = cfg_.beta;

  // task robustness
  rec.rho_task_exp = robustness_exp(cfg_.formula, states, dt, 0.0, beta);
  rec.rho_task_classical = robustness_classical(cfg_.formula, rec.traj, 0.0);

  // input-bound subformula over every control step
  std::vector<Ad> step_terms;
  step_terms.reserve(inputs.size());
  for (const auto& uu : inputs) {
    std::vector<Ad> comps;
    comps.reserve(static_cast<std::size_t>(2 * q));
    for (int i = 0; i < q; ++i) {
      comps.push_back(uu[i] - Ad(cfg_.input_bounds.u_min[i]));
      comps.push_back(Ad(cfg_.input_bounds.u_max[i]) - uu[i]);
    }
    step_terms.push_back(conj_exp(comps, beta));
  }
  rec.rho_bounds_exp = conj_exp(step_terms, beta);

  std::vector<Ad> uni_terms = {rec.rho_task_exp, rec.rho_bounds_exp};

  // per-barrier feasibility subformulas: the deletion event must arrive in
  // its window (h-triggered instances) and the margin stays positive before
  // the deletion time
  if (pol.feasibility_aware() && use_qp) {
    for (int j = 0; j < M; ++j) {
      const auto& inst = instances[static_cast<std::size_t>(j)];
      std::vector<Ad> parts;

      if (!inst.unconditional_deletion) {
        const auto [lo, hi] = interval_to_samples(inst.t_a, inst.t_b, dt);
        std::vector<Ad> h_window;
        for (int kk = lo; kk <= hi && kk < static_cast<int>(states.size()); ++kk) {
          h_window.push_back(eval_predicate(cfg_.pred_specs[static_cast<std::size_t>(j)].pred,
                                            states[static_cast<std::size_t>(kk)]));
        }
        if (!h_window.empty()) parts.push_back(disj_exp(h_window, beta));
      }

      std::vector<Ad> margin_vals;
      for (const auto& [mt, m] : margins[static_cast<std::size_t>(j)]) {
        if (mt < inst.t_del - 1e-9) margin_vals.push_back(m);
      }
      if (!margin_vals.empty()) parts.push_back(conj_exp(margin_vals, beta));

      if (!parts.empty()) {
        const Ad fea = parts.size() == 1 ? parts.front() : conj_exp(parts, beta);
        rec.rho_fea.push_back(fea);
        uni_terms.push_back(fea);
      }
    }
  }

  rec.rho_uni = conj_exp(uni_terms, beta);

  Ad cost(0.0);
  for (const auto& uu : inputs) {
    Ad sq(0.0);
    for (int i = 0; i < q; ++i) sq += uu[i] * uu[i];
    cost += sq * Ad(dt);
  }
  rec.input_cost = Ad(cfg_.input_cost_weight) * cost;
  rec.objective = rec.rho_uni - rec.input_cost;
  return rec;
}

Ad Controller::batch_objective(const std::vector<RolloutRecord>& records) {
  if (records.empty()) throw std::invalid_argument("batch_objective: no records");
  Ad sum(0.0);
  for (const auto& r : records) sum += r.objective;
  return sum / Ad(static_cast<double>(records.size()));
}

int default_thread_count(int rollouts_per_iter) {
  if (const char* env = std::getenv("STLCBF_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return std::min(n, rollouts_per_iter);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return std::max(1, std::min<int>(static_cast<int>(hw), rollouts_per_iter));
}

std::vector<TrainRow> Controller::train(int iterations, std::uint64_t seed, int threads) {
  const int V = cfg_.training.rollouts_per_iter;
  threads = std::clamp(threads, 1, V);
  AdamConfig adam;
  adam.lr = cfg_.training.learning_rate;

  std::vector<TrainRow> rows;
  if (!cfg_.policy.trained()) return rows;

  struct Slot {
    GradMap grads;
    double rho_uni = 0.0;
    double rho_cls = 0.0;
    double objective = 0.0;
    int infeasible = 0;
    int resampled = 0;
    bool ok = false;
  };

  for (int iter = 0; iter < iterations; ++iter) {
    if (cfg_.training.lr_step_decay) {
      const double frac = iterations > 1 ? static_cast<double>(iter) / iterations : 0.0;
      adam.lr = cfg_.training.learning_rate * (frac >= 0.9 ? 0.0625 : frac >= 0.7 ? 0.25 : 1.0);
    }
    std::vector<Slot> slots(static_cast<std::size_t>(V));

    auto worker = [&](int tid) {
      Tape tape;
      for (int v = tid; v < V; v += threads) {
        Slot& slot = slots[static_cast<std::size_t>(v)];
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(iter),
                                     static_cast<std::uint64_t>(v)));
        for (int attempt = 0; attempt < 64; ++attempt) {
          const Eigen::VectorXd x0 = sample_initial_state(rng);
          tape.reset();
          const TapedParams tp(params_, tape);
          RolloutRecord rec;
          try {
            RolloutOptions opts;
            opts.mode = RolloutOptions::Mode::Training;
            rec = rollout_with_params(x0, tape, tp, opts);
          } catch (const EmptyOmegaBox&) {
            ++slot.resampled;
            continue;
          } catch (const InfeasibleSpec&) {
            ++slot.resampled;
            continue;
          }
          if (!std::isfinite(rec.objective.v)) {
            ++slot.resampled;
            continue;
          }
          tape.backward(rec.objective);
          tp.accumulate_gradients(tape, 1.0, slot.grads);
          slot.rho_uni = rec.rho_uni.v;
          slot.rho_cls = rec.rho_task_classical;
          slot.objective = rec.objective.v;
          slot.infeasible = rec.infeasible_qp_count;
          slot.ok = true;
          break;
        }
      }
    };

    if (threads <= 1) {
      worker(0);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(threads));
      for (int tid = 0; tid < threads; ++tid) pool.emplace_back(worker, tid);
      for (auto& th : pool) th.join();
    }

    TrainRow row;
    row.iteration = iter;
    int ok_count = 0;
    GradMap grads;
    for (const auto& slot : slots) {
      row.infeasible_qp_count += slot.infeasible;
      row.resampled_x0 += slot.resampled;
      if (!slot.ok) continue;
      ++ok_count;
      row.mean_rho_uni += slot.rho_uni;
      row.mean_rho_task_classical += slot.rho_cls;
      row.mean_objective += slot.objective;
      for (const auto& [name, g] : slot.grads) {
        auto& acc = grads[name];
        if (acc.size() != g.size()) acc.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
      }
    }

    if (ok_count == 0) {
      row.skipped_update = true;
      row.mean_rho_uni = kNan;
      row.mean_rho_task_classical = kNan;
      row.mean_objective = kNan;
      rows.push_back(row);
      continue;
    }
    row.mean_rho_uni /= ok_count;
    row.mean_rho_task_classical /= ok_count;
    row.mean_objective /= ok_count;

    // ascend the objective: Adam minimizes, so negate
    for (auto& [name, g] : grads) {
      for (double& x : g) x = -x / ok_count;
    }
    try {
      adam_step(params_, grads, adam);
    } catch (const NanGradient&) {
      row.skipped_update = true;
    }
    rows.push_back(row);
  }
  return rows;
}

EvalSummary Controller::evaluate(int rollouts, std::uint64_t seed) {
  EvalSummary sum;
  sum.min_rho_classical = kInf;
  Tape tape;
  for (int i = 0; i < rollouts; ++i) {
    std::mt19937_64 rng(mix_seed(seed ^ 0xE7A11501u, static_cast<std::uint64_t>(i), 0));
    const Eigen::VectorXd x0 = sample_initial_state(rng);
    tape.reset();
    RolloutOptions opts;
    opts.mode = RolloutOptions::Mode::Execution;
    std::mt19937_64 raw_rng(mix_seed(seed ^ 0xBA5E11FEu, static_cast<std::uint64_t>(i), 1));
    if (cfg_.policy.ablation == Ablation::HocbfBaseline) opts.random_raws = &raw_rng;
    RolloutRecord rec;
    try {
      rec = rollout(x0, tape, opts);
    } catch (const EmptyOmegaBox&) {
      ++sum.aborted;
      ++sum.rollouts;
      continue;
    }
    ++sum.rollouts;
    sum.infeasible_qp += rec.infeasible_qp_count;
    if (rec.aborted) {
      ++sum.aborted;
      continue;
    }
    sum.mean_rho_classical += rec.rho_task_classical;
    sum.min_rho_classical = std::min(sum.min_rho_classical, rec.rho_task_classical);
    sum.mean_rho_uni += rec.rho_uni.v;
    if (rec.rho_task_classical > 0.0) ++sum.satisfied;
  }
  const int valid = sum.rollouts - sum.aborted;
  if (valid > 0) {
    sum.mean_rho_classical /= valid;
    sum.mean_rho_uni /= valid;
  } else {
    sum.min_rho_classical = kNan;
  }
  return sum;
}

std::string Controller::construction_report() const {
  std::ostringstream os;
  os << "scenario: " << cfg_.name << "\n";
  os << "system: " << cfg_.system.name() << ", dt " << cfg_.dt << " s, horizon " << cfg_.horizon
     << " s (" << cfg_.control_steps() << " control steps)\n";
  if (!builder_) {
    os << "plain network controller: no barrier construction\n";
    return os.str();
  }
  const auto& specs = builder_->specs();
  const auto& cats = builder_->categories();
  os << "predicates (emission order by interval end):\n";
  for (int pos : builder_->emission_order()) {
    const auto& s = specs[static_cast<std::size_t>(pos)];
    os << "  " << s.pred.name << ": " << (s.pred.sign > 0 ? "reach" : "avoid") << " ";
    if (s.op == StlFormula::Kind::F) {
      os << "F[" << s.t_a << "," << s.t_b << "]";
    } else if (s.op == StlFormula::Kind::G) {
      os << "G[" << s.t_a << "," << s.t_b << "]";
    } else {
      os << "now";
    }
    os << ", category ";
    switch (cats[static_cast<std::size_t>(pos)]) {
      case PredCategory::I: os << "I (fixed barrier)"; break;
      case PredCategory::II: os << "II (linear gamma)"; break;
      case PredCategory::III: os << "III (exponential gamma)"; break;
    }
    os << ", deletion group " << s.group << "\n";
  }

  // sample emission at the initial-region center with neutral activations
  const Eigen::VectorXd x0 = cfg_.init_region.center_state();
  std::vector<double> raws(static_cast<std::size_t>(builder_->omega_raw_channels() +
                                                    builder_->multiplier_raw_channels()),
                           0.0);
  try {
    const auto insts = builder_->emit<double>(x0, raws);
    os << "neutral emission at the initial-region center:\n";
    for (std::size_t j = 0; j < insts.size(); ++j) {
      const auto& inst = insts[j];
      os << "  " << specs[j].pred.name << ": ";
      switch (inst.gamma.kind) {
        case GammaKind::Zero: os << "gamma = 0"; break;
        case GammaKind::Linear:
          os << "gamma(t) = " << inst.gamma.omega1 << " + " << inst.gamma.omega2 << " t";
          break;
        case GammaKind::Exponential:
          os << "gamma(t) = " << inst.gamma.omega1 << " exp(-" << inst.gamma.omega2 << " t) - "
             << inst.gamma.c;
          break;
      }
      os << ", p_init = (" << inst.p_init[0] << ", " << inst.p_init[1] << ")\n";
    }
  } catch (const std::exception& e) {
    os << "neutral emission failed: " << e.what() << "\n";
  }
  return os.str();
}

Checkpoint Controller::make_checkpoint() const {
  Checkpoint ckpt;
  ckpt.scenario_name = cfg_.name;
  ckpt.config_hash = cfg_.config_hash();
  ckpt.ablation = to_string(cfg_.policy.ablation);
  ckpt.memory = cfg_.policy.memory;
  ckpt.params = params_;
  return ckpt;
}

void write_curves(const std::string& path, const std::vector<TrainRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve file: " + path);
  out << "iteration,mean_rho_uni,mean_rho_task_classical,mean_objective,"
         "infeasible_qp_count,resampled_x0,skipped_update\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.mean_rho_uni << ',' << r.mean_rho_task_classical << ','
        << r.mean_objective << ',' << r.infeasible_qp_count << ',' << r.resampled_x0 << ','
        << (r.skipped_update ? 1 : 0) << '\n';
  }
}

std::vector<TrainRow> read_curves(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read curve file: " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<TrainRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TrainRow r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    int skipped = 0;
    is >> r.iteration >> r.mean_rho_uni >> r.mean_rho_task_classical >> r.mean_objective >>
        r.infeasible_qp_count >> r.resampled_x0 >> skipped;
    r.skipped_update = skipped != 0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace stlcbf
