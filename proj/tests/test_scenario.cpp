#include "stlcbf/scenario.hpp"

#include "stlcbf/checkpoint.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

using namespace stlcbf;

namespace {

nlohmann::json minimal_scenario() {
  return nlohmann::json::parse(R"({
    "name": "mini",
    "system": "double_integrator",
    "dt_s": 0.1,
    "horizon_s": 2.0,
    "init_region": {"x": [-0.2, 0.2], "y": [-0.2, 0.2]},
    "formula": [
      {"op": "F", "interval": [0.0, 2.0], "predicates": [
        {"name": "goal", "role": "reach", "gauge": "euclidean", "center": [2.0, 0.0], "radius": 0.5}
      ]},
      {"op": "G", "interval": [0.0, 2.0], "predicates": [
        {"name": "wall", "role": "avoid", "gauge": "superellipse", "center": [1.0, 0.9], "half_axes": [0.4, 0.4]}
      ]}
    ],
    "input_bounds": {"min": [-10.0, -10.0], "max": [10.0, 10.0]}
  })");
}

}  // namespace

TEST_CASE("bundled scenarios load and validate") {
  for (const char* path : {"scenarios/double_integrator_I1.json",
                           "scenarios/double_integrator_I2_memory.json",
                           "scenarios/unicycle_II.json"}) {
    const ScenarioConfig cfg = load_scenario(path);
    CHECK(cfg.horizon >= horizon(cfg.formula) - 1e-9);
    CHECK(cfg.control_steps() > 0);
    CHECK(!cfg.pred_specs.empty());
    CHECK(cfg.input_bounds.u_min[0] == -10.0);
    CHECK(cfg.input_bounds.u_max[1] == 10.0);
    const auto order = end_time_order(cfg.pred_specs);
    for (std::size_t i = 1; i < order.size(); ++i) {
      CHECK(cfg.pred_specs[static_cast<std::size_t>(order[i - 1])].t_b <=
            cfg.pred_specs[static_cast<std::size_t>(order[i])].t_b);
    }
  }
  const ScenarioConfig i1 = load_scenario("scenarios/double_integrator_I1.json");
  CHECK(i1.control_steps() == 50);
  CHECK(horizon(i1.formula) == doctest::Approx(5.0));
  const ScenarioConfig mem = load_scenario("scenarios/double_integrator_I2_memory.json");
  CHECK(mem.policy.memory);
  CHECK(horizon(mem.formula) == doctest::Approx(10.0));
  const ScenarioConfig uni = load_scenario("scenarios/unicycle_II.json");
  CHECK(uni.system.kind == SystemModel::Kind::Unicycle);
  CHECK(horizon(uni.formula) == doctest::Approx(6.0));
}

TEST_CASE("schema violations are rejected") {
  auto j = minimal_scenario();
  CHECK_NOTHROW(scenario_from_json(j));

  auto bad = j;
  bad["horizon_s"] = 1.0;  // shorter than the formula horizon
  CHECK_THROWS_AS(scenario_from_json(bad), ConfigError);

  bad = j;
  bad["input_bounds"]["min"] = {10.0, -10.0};
  CHECK_THROWS_AS(scenario_from_json(bad), ConfigError);

  bad = j;
  bad["formula"][0]["predicates"][0]["role"] = "observe";
  CHECK_THROWS_AS(scenario_from_json(bad), ConfigError);

  bad = j;
  bad["robustness_beta"] = 1.5;
  CHECK_THROWS_AS(scenario_from_json(bad), ConfigError);

  bad = j;
  bad.erase("system");
  CHECK_THROWS_AS(scenario_from_json(bad), ConfigError);
}

TEST_CASE("infeasible initial region is rejected") {
  auto j = minimal_scenario();
  // obstacle sitting on the initial region violates the fixed-barrier category
  j["formula"][1]["predicates"][0]["center"] = {0.0, 0.0};
  j["formula"][1]["predicates"][0]["half_axes"] = {0.5, 0.5};
  CHECK_THROWS_AS(scenario_from_json(j), InfeasibleSpec);
}

TEST_CASE("config hash pins scenario, policy and architecture") {
  const ScenarioConfig a = scenario_from_json(minimal_scenario());
  ScenarioConfig b = scenario_from_json(minimal_scenario());
  CHECK(a.config_hash() == b.config_hash());

  // run provenance may differ between training and replay
  b.training.seed = 123;
  b.training.iterations = 7;
  CHECK(a.config_hash() == b.config_hash());

  // architecture and policy may not
  b.training.hidden_width = 48;
  CHECK(a.config_hash() != b.config_hash());
  ScenarioConfig c = scenario_from_json(minimal_scenario());
  c.policy.ablation = Ablation::BnVarP;
  CHECK(a.config_hash() != c.config_hash());
  ScenarioConfig d = scenario_from_json(minimal_scenario());
  d.pred_specs[0].pred.radius = 0.4;
  CHECK(a.config_hash() != d.config_hash());
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ParamStore store;
  MlpSpec spec{3, {5}, 2};
  std::mt19937_64 rng(77);
  init_mlp(store, "net", spec, rng);
  store.adam_m["net.W0"][0] = 0.125;
  store.adam_v["net.W0"][0] = 1e-300;
  store.tensors.at("net.b0").values[1] = -0.1 + 0.3;  // not exactly representable
  store.adam_step_count = 41;

  Checkpoint ckpt;
  ckpt.scenario_name = "mini";
  ckpt.config_hash = "abc123";
  ckpt.ablation = "feasibn-varp";
  ckpt.memory = false;
  ckpt.params = store;

  const std::string path = "/tmp/stlcbf_ckpt_test.json";
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.scenario_name == "mini");
  CHECK(back.config_hash == "abc123");
  CHECK(back.params.adam_step_count == 41);
  for (const auto& [name, t] : store.tensors) {
    const auto& bt = back.params.tensors.at(name);
    REQUIRE(bt.values.size() == t.values.size());
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      CHECK(std::memcmp(&bt.values[i], &t.values[i], sizeof(double)) == 0);
    }
  }
  CHECK(back.params.adam_v.at("net.W0")[0] == 1e-300);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_checkpoint("/tmp/does_not_exist_ckpt.json"), CheckpointError);
}
