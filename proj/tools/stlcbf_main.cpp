// Command-line front end: train controllers, roll out and evaluate trained
// checkpoints, and export plot-ready data files.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
// 3 infeasible scenario, 4 checkpoint/config hash mismatch.

#include "stlcbf/controller.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace stlcbf;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string ablation;
  std::string memory;  // "", "on", "off"
  int iters = -1;
  std::int64_t seed = -1;
};

ScenarioConfig load_with_overrides(const CommonOpts& opts) {
  ScenarioConfig cfg = load_scenario(opts.config_path);
  if (!opts.ablation.empty()) cfg.policy.ablation = ablation_from_string(opts.ablation);
  if (opts.memory == "on") cfg.policy.memory = true;
  if (opts.memory == "off") cfg.policy.memory = false;
  if (opts.iters >= 0) cfg.training.iterations = opts.iters;
  if (opts.seed >= 0) cfg.training.seed = static_cast<std::uint64_t>(opts.seed);
  return cfg;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_rollout_csv(const std::string& path, const ScenarioConfig& cfg,
                       const RolloutRecord& rec) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  const bool unicycle = cfg.system.kind == SystemModel::Kind::Unicycle;
  out << "t,x,y," << (unicycle ? "theta,v" : "vx,vy") << ",u1,u2,qp_status,used_fallback";
  for (const auto& s : cfg.pred_specs) {
    out << ",active_" << s.pred.name << ",psi0_" << s.pred.name << ",psi1_" << s.pred.name
        << ",p1_" << s.pred.name << ",p2_" << s.pred.name;
  }
  out << "\n";

  auto status_str = [](QpStatus st) {
    switch (st) {
      case QpStatus::Optimal: return "optimal";
      case QpStatus::Infeasible: return "infeasible";
      case QpStatus::MaxIterations: return "max-iter";
    }
    return "?";
  };

  for (const auto& s : rec.steps) {
    out << fmt(s.t);
    for (int i = 0; i < 4; ++i) out << ',' << fmt(s.state[i]);
    if (s.input.size() == 2) {
      out << ',' << fmt(s.input[0]) << ',' << fmt(s.input[1]);
    } else {
      out << ",,";
    }
    out << ',' << status_str(s.qp_status) << ',' << (s.used_fallback ? 1 : 0);
    for (std::size_t j = 0; j < s.active.size(); ++j) {
      out << ',' << (s.active[j] ? 1 : 0);
      for (const auto* col : {&s.psi0, &s.psi1, &s.p1, &s.p2}) {
        const double v = (*col)[j];
        out << ',';
        if (std::isfinite(v)) out << fmt(v);
      }
    }
    out << "\n";
  }
  // terminal state row (no input, no rows)
  if (!rec.traj.states.empty() && !rec.aborted) {
    const auto& xT = rec.traj.states.back();
    out << fmt(cfg.dt * static_cast<double>(rec.traj.states.size() - 1));
    for (int i = 0; i < 4; ++i) out << ',' << fmt(xT[i]);
    out << ",,,,";
    for (std::size_t j = 0; j < cfg.pred_specs.size(); ++j) out << ",0,,,,";
    out << "\n";
  }
}

int cmd_train(const CommonOpts& opts, const std::string& out_dir) {
  ScenarioConfig cfg = load_with_overrides(opts);
  fs::create_directories(out_dir);

  Controller ctrl(cfg);
  std::ofstream(fs::path(out_dir) / "construction_report.txt") << ctrl.construction_report();

  std::vector<TrainRow> rows;
  if (cfg.policy.trained()) {
    const int threads = default_thread_count(cfg.training.rollouts_per_iter);
    rows = ctrl.train(cfg.training.iterations, cfg.training.seed, threads);
  } else {
    std::cout << "untrained baseline: skipping the training loop\n";
  }
  write_curves((fs::path(out_dir) / "curves.csv").string(), rows);
  save_checkpoint((fs::path(out_dir) / "checkpoint.json").string(), ctrl.make_checkpoint());

  std::cout << "scenario: " << cfg.name << " (" << to_string(cfg.policy.ablation) << ")\n";
  std::cout << "iterations: " << rows.size() << "\n";
  if (!rows.empty()) {
    const auto& last = rows.back();
    std::cout << "final mean unified robustness: " << last.mean_rho_uni << "\n";
    std::cout << "final mean task robustness (classical): " << last.mean_rho_task_classical
              << "\n";
    std::cout << "final mean objective: " << last.mean_objective << "\n";
  }
  std::cout << "wrote " << out_dir << "/checkpoint.json, curves.csv, construction_report.txt\n";
  return 0;
}

int cmd_rollout(const CommonOpts& opts, const std::string& ckpt_path, int n, std::uint64_t seed,
                const std::string& out_dir) {
  ScenarioConfig cfg = load_with_overrides(opts);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.config_hash != cfg.config_hash()) {
    std::cerr << "error: checkpoint was trained on a different configuration (hash "
              << ckpt.config_hash << " vs " << cfg.config_hash() << ")\n";
    return 4;
  }
  fs::create_directories(out_dir);
  Controller ctrl(cfg, ckpt.params);

  nlohmann::json meta;
  meta["scenario"] = cfg.name;
  meta["config_hash"] = cfg.config_hash();
  meta["system"] = cfg.system.name();
  meta["dt_s"] = cfg.dt;
  meta["u_min"] = {cfg.input_bounds.u_min[0], cfg.input_bounds.u_min[1]};
  meta["u_max"] = {cfg.input_bounds.u_max[0], cfg.input_bounds.u_max[1]};
  meta["predicates"] = nlohmann::json::array();
  for (const auto& s : cfg.pred_specs) meta["predicates"].push_back(s.pred.name);
  meta["rollouts"] = n;
  std::ofstream(fs::path(out_dir) / "metadata.json") << meta.dump(1) << "\n";

  std::ofstream summary(fs::path(out_dir) / "rollouts_summary.csv");
  summary << "rollout,rho_classical,rho_uni,aborted,infeasible_qp";
  for (const auto& s : cfg.pred_specs) summary << ",t_del_" << s.pred.name;
  summary << "\n";

  Tape tape;
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(i + 1));
    const Eigen::VectorXd x0 = ctrl.sample_initial_state(rng);
    tape.reset();
    RolloutOptions ropts;
    ropts.mode = RolloutOptions::Mode::Execution;
    std::mt19937_64 raw_rng(seed ^ (0xABCDEFull + static_cast<std::uint64_t>(i)));
    if (cfg.policy.ablation == Ablation::HocbfBaseline) ropts.random_raws = &raw_rng;
    const RolloutRecord rec = ctrl.rollout(x0, tape, ropts);

    std::ostringstream name;
    name << "rollout_" << std::setw(3) << std::setfill('0') << i << ".csv";
    write_rollout_csv((fs::path(out_dir) / name.str()).string(), cfg, rec);

    summary << i << ',' << fmt(rec.rho_task_classical) << ','
            << (rec.aborted ? std::string("") : fmt(rec.rho_uni.v)) << ','
            << (rec.aborted ? 1 : 0) << ',' << rec.infeasible_qp_count;
    for (double td : rec.deletion_times) {
      summary << ',';
      if (std::isfinite(td)) summary << fmt(td);
    }
    summary << "\n";
  }
  std::cout << "wrote " << n << " rollouts to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, int n, std::uint64_t seed) {
  ScenarioConfig cfg = load_with_overrides(opts);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.config_hash != cfg.config_hash()) {
    std::cerr << "error: checkpoint was trained on a different configuration\n";
    return 4;
  }
  if (n == 0) {
    std::cout << "rollouts: 0\n";
    return 0;
  }
  Controller ctrl(cfg, ckpt.params);
  const EvalSummary s = ctrl.evaluate(n, seed);
  std::cout << "rollouts: " << s.rollouts << "\n";
  std::cout << "aborted (infeasible at execution): " << s.aborted << "\n";
  std::cout << "mean task robustness (classical): " << s.mean_rho_classical << "\n";
  std::cout << "min task robustness (classical): " << s.min_rho_classical << "\n";
  std::cout << "mean unified robustness: " << s.mean_rho_uni << "\n";
  std::cout << "satisfaction rate: " << s.satisfied << "/" << (s.rollouts - s.aborted) << "\n";
  std::cout << "infeasible QP count: " << s.infeasible_qp << "\n";
  return 0;
}

// minimal CSV access for plot-data
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

Csv read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Csv csv;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (first) {
      csv.header = std::move(cells);
      first = false;
    } else {
      csv.rows.push_back(std::move(cells));
    }
  }
  return csv;
}

int cmd_plotdata(const std::string& rollout_dir, const std::string& kind,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);

  if (kind == "curves") {
    // pass the training curve file through unchanged
    const fs::path src = fs::path(rollout_dir) / "curves.csv";
    if (!fs::exists(src)) throw std::runtime_error("missing curves.csv in " + rollout_dir);
    fs::copy_file(src, fs::path(out_dir) / "plot_curves.csv", fs::copy_options::overwrite_existing);
    std::cout << "wrote " << out_dir << "/plot_curves.csv\n";
    return 0;
  }

  nlohmann::json meta;
  {
    std::ifstream mi(fs::path(rollout_dir) / "metadata.json");
    if (!mi) throw std::runtime_error("missing metadata.json in " + rollout_dir);
    mi >> meta;
  }
  const bool unicycle = meta.at("system").get<std::string>() == "unicycle";
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(rollout_dir)) {
    const std::string fn = e.path().filename().string();
    if (fn.rfind("rollout_", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no rollout files in " + rollout_dir);

  if (kind == "traj") {
    std::ofstream out(fs::path(out_dir) / "plot_traj.csv");
    out << "rollout,t,x,y," << (unicycle ? "theta,v" : "vx,vy") << "\n";
    int idx = 0;
    for (const auto& f : files) {
      const Csv csv = read_csv(f);
      const int ct = csv.col("t");
      for (const auto& row : csv.rows) {
        out << idx << ',' << row[static_cast<std::size_t>(ct)] << ',' << row[1] << ',' << row[2]
            << ',' << row[3] << ',' << row[4] << "\n";
      }
      ++idx;
    }
    std::cout << "wrote " << out_dir << "/plot_traj.csv\n";
    return 0;
  }

  if (kind == "inputs") {
    std::ofstream out(fs::path(out_dir) / "plot_inputs.csv");
    out << "rollout,t,u1,u2,u1_min,u2_min,u1_max,u2_max\n";
    const double lo0 = meta.at("u_min")[0].get<double>();
    const double lo1 = meta.at("u_min")[1].get<double>();
    const double hi0 = meta.at("u_max")[0].get<double>();
    const double hi1 = meta.at("u_max")[1].get<double>();
    int idx = 0;
    for (const auto& f : files) {
      const Csv csv = read_csv(f);
      const int ct = csv.col("t");
      const int cu1 = csv.col("u1");
      const int cu2 = csv.col("u2");
      for (const auto& row : csv.rows) {
        if (row[static_cast<std::size_t>(cu1)].empty()) continue;
        out << idx << ',' << row[static_cast<std::size_t>(ct)] << ','
            << row[static_cast<std::size_t>(cu1)] << ',' << row[static_cast<std::size_t>(cu2)]
            << ',' << lo0 << ',' << lo1 << ',' << hi0 << ',' << hi1 << "\n";
      }
      ++idx;
    }
    std::cout << "wrote " << out_dir << "/plot_inputs.csv\n";
    return 0;
  }

  if (kind == "multipliers") {
    std::ofstream out(fs::path(out_dir) / "plot_multipliers.csv");
    out << "rollout,t,instance,p1,p2\n";
    int idx = 0;
    for (const auto& f : files) {
      const Csv csv = read_csv(f);
      const int ct = csv.col("t");
      for (const auto& name : meta.at("predicates")) {
        const std::string pname = name.get<std::string>();
        const int ca = csv.col("active_" + pname);
        const int c1 = csv.col("p1_" + pname);
        const int c2 = csv.col("p2_" + pname);
        if (ca < 0 || c1 < 0 || c2 < 0) {
          throw std::runtime_error("rollout files lack multiplier columns for " + pname);
        }
        for (const auto& row : csv.rows) {
          if (row[static_cast<std::size_t>(ca)] != "1") continue;  // truncated at deletion
          out << idx << ',' << row[static_cast<std::size_t>(ct)] << ',' << pname << ','
              << row[static_cast<std::size_t>(c1)] << ',' << row[static_cast<std::size_t>(c2)]
              << "\n";
        }
      }
      ++idx;
    }
    std::cout << "wrote " << out_dir << "/plot_multipliers.csv\n";
    return 0;
  }

  throw std::runtime_error("unknown plot kind: " + kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controller synthesis from timed reach/avoid specifications"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string out_dir = "out";
  std::string ckpt_path;
  std::string rollout_dir;
  std::string plot_kind;
  int n_rollouts = 10;
  std::uint64_t run_seed = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    if (needs_config) {
      cmd->add_option("--config", opts.config_path, "scenario configuration file")->required();
      cmd->add_option("--ablation", opts.ablation,
                      "bn-fixedp | bn-varp | feasibn-varp | fcnet | hocbf-baseline");
      cmd->add_option("--memory", opts.memory, "on | off")
          ->check(CLI::IsMember({"on", "off", ""}));
    }
  };

  CLI::App* train = app.add_subcommand("train", "train a controller");
  add_common(train, true);
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--iters", opts.iters, "override training iterations");
  train->add_option("--seed", opts.seed, "override training seed");

  CLI::App* rollout = app.add_subcommand("rollout", "roll out a trained checkpoint");
  add_common(rollout, true);
  rollout->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  rollout->add_option("--n", n_rollouts, "number of rollouts");
  rollout->add_option("--seed", run_seed, "sampling seed");
  rollout->add_option("--out", out_dir, "output directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--n", n_rollouts, "number of rollouts");
  eval->add_option("--seed", run_seed, "sampling seed");

  CLI::App* plot = app.add_subcommand("plot-data", "export plot-ready files");
  plot->add_option("--rollout-dir", rollout_dir, "directory with rollout files or curves.csv")
      ->required();
  plot->add_option("--kind", plot_kind, "traj | inputs | multipliers | curves")->required();
  plot->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(opts, out_dir);
    if (rollout->parsed()) return cmd_rollout(opts, ckpt_path, n_rollouts, run_seed, out_dir);
    if (eval->parsed()) return cmd_eval(opts, ckpt_path, n_rollouts, run_seed);
    if (plot->parsed()) return cmd_plotdata(rollout_dir, plot_kind, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const InfeasibleSpec& e) {
    std::cerr << "infeasible scenario: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
