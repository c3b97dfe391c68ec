#include "stlcbf/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace stlcbf;

namespace {

std::vector<Ad> lift(Tape& tape, const std::vector<double>& xs) {
  std::vector<Ad> out;
  for (double x : xs) out.push_back(tape.leaf(x));
  return out;
}

}  // namespace

TEST_CASE("mlp with zero parameters maps everything to zero") {
  ParamStore store;
  MlpSpec spec{3, {8, 8}, 2};
  std::mt19937_64 rng(1);
  init_mlp(store, "net", spec, rng);
  for (auto& [name, t] : store.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);

  Tape tape;
  TapedParams tp(store, tape);
  auto out = mlp_forward(tp, "net", spec, lift(tape, {0.3, -1.2, 4.0}));
  REQUIRE(out.size() == 2);
  CHECK(out[0].v == 0.0);
  CHECK(out[1].v == 0.0);
}

TEST_CASE("single identity layer passes the input through") {
  ParamStore store;
  MlpSpec spec{2, {}, 2};
  std::mt19937_64 rng(1);
  init_mlp(store, "net", spec, rng);
  auto& w = store.tensors.at("net.W0");
  w.values = {1.0, 0.0, 0.0, 1.0};
  std::fill(store.tensors.at("net.b0").values.begin(), store.tensors.at("net.b0").values.end(),
            0.0);

  Tape tape;
  TapedParams tp(store, tape);
  auto out = mlp_forward(tp, "net", spec, lift(tape, {0.7, -0.2}));
  CHECK(out[0].v == doctest::Approx(0.7));
  CHECK(out[1].v == doctest::Approx(-0.2));

  CHECK_THROWS_AS(mlp_forward(tp, "net", spec, lift(tape, {1.0})), std::invalid_argument);
}

TEST_CASE("mlp weight gradients match finite differences") {
  ParamStore store;
  MlpSpec spec{3, {6, 5}, 2};
  std::mt19937_64 rng(33);
  init_mlp(store, "net", spec, rng);
  const std::vector<double> input = {0.4, -0.9, 1.3};

  auto loss_value = [&](const ParamStore& s) {
    Tape tape;
    TapedParams tp(s, tape);
    auto out = mlp_forward(tp, "net", spec, lift(tape, input));
    return out[0].v * 2.0 + out[1].v * out[1].v;
  };

  Tape tape;
  TapedParams tp(store, tape);
  auto out = mlp_forward(tp, "net", spec, lift(tape, input));
  Ad loss = out[0] * Ad(2.0) + out[1] * out[1];
  tape.backward(loss);

  int checked = 0;
  for (const auto& [name, tensor] : store.tensors) {
    for (std::size_t i = 0; i < tensor.values.size(); i += 7) {
      const double step = 1e-6;
      ParamStore p = store, m = store;
      p.tensors.at(name).values[i] += step;
      m.tensors.at(name).values[i] -= step;
      const double fd = (loss_value(p) - loss_value(m)) / (2 * step);
      const auto& leaves = tp.at(name);
      const double got = tape.gradient(leaves[i]);
      CHECK(std::abs(got - fd) <= 1e-5 * std::max({std::abs(fd), std::abs(got), 1.0}));
      ++checked;
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("bounded_head frozen values and limits") {
  Tape tape;
  // two-sided: sigmoid(0) = 1/2 of the interval
  Ad mid = bounded_head(tape.leaf(0.0), HeadBound::interval(Ad(0.0), Ad(2.0)));
  CHECK(mid.v == doctest::Approx(1.0));

  // one-sided: softplus(0) = ln 2
  Ad lo = bounded_head(tape.leaf(0.0), HeadBound::at_least(Ad(3.0)));
  CHECK(lo.v == doctest::Approx(3.0 + std::log(2.0)));

  // saturating low keeps the bound
  Ad sat = bounded_head(tape.leaf(-40.0), HeadBound::at_least(Ad(3.0)));
  CHECK(sat.v >= 3.0);
  CHECK(sat.v == doctest::Approx(3.0).epsilon(1e-12));

  CHECK_THROWS_AS(bounded_head(tape.leaf(0.0), HeadBound::interval(Ad(2.0), Ad(2.0))),
                  std::invalid_argument);
}

TEST_CASE("bounded_head outputs always satisfy their bounds (fuzz)") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> raw_dist(-1e9, 1e9);
  std::uniform_real_distribution<double> b_dist(-50.0, 50.0);
  Tape tape;
  for (int i = 0; i < 100000; ++i) {
    const double raw = raw_dist(rng);
    const double a = b_dist(rng);
    const double b = a + std::abs(b_dist(rng)) + 1e-6;
    tape.reset();
    const Ad two = bounded_head(tape.leaf(raw), HeadBound::interval(Ad(a), Ad(b)));
    CHECK(two.v >= a);
    CHECK(two.v <= b);
    const Ad one = bounded_head(tape.leaf(raw), HeadBound::at_least(Ad(a)));
    CHECK(one.v >= a);
    const Ad upper = bounded_head(tape.leaf(raw), HeadBound::at_most(Ad(b)));
    CHECK(upper.v <= b);
  }
}

TEST_CASE("lstm with zero parameters emits zeros") {
  ParamStore store;
  std::mt19937_64 rng(1);
  init_lstm(store, "cell", 3, 4, rng);
  for (auto& [name, t] : store.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);

  Tape tape;
  TapedParams tp(store, tape);
  LstmState st;
  st.h.assign(4, Ad(0.0));
  st.c.assign(4, Ad(0.0));
  const auto next = lstm_step(tp, "cell", 4, st, lift(tape, {1.0, -2.0, 0.5}));
  for (const auto& h : next.h) CHECK(h.v == 0.0);
}

TEST_CASE("lstm carries state across steps") {
  // forget gate driven to ~1 and input gate open: the cell accumulates, so
  // the same input at the second step produces a different output
  ParamStore store;
  std::mt19937_64 rng(5);
  init_lstm(store, "cell", 1, 1, rng);
  auto& b = store.tensors.at("cell.b");
  b.values[1] = 10.0;  // forget gate bias
  auto& w = store.tensors.at("cell.W");
  w.values[0] = 2.0;  // input gate from input
  w.values[2] = 2.0;  // candidate from input

  Tape tape;
  TapedParams tp(store, tape);
  LstmState st;
  st.h.assign(1, Ad(0.0));
  st.c.assign(1, Ad(0.0));
  const auto s1 = lstm_step(tp, "cell", 1, st, lift(tape, {1.0}));
  const auto s2 = lstm_step(tp, "cell", 1, s1, lift(tape, {1.0}));
  CHECK(std::abs(s1.h[0].v - s2.h[0].v) > 1e-3);
}

TEST_CASE("lstm gradients over a two-step unroll match finite differences") {
  ParamStore store;
  std::mt19937_64 rng(21);
  init_lstm(store, "cell", 2, 3, rng);

  const std::vector<double> in1 = {0.3, -0.6};
  const std::vector<double> in2 = {-1.1, 0.2};
  auto loss_value = [&](const ParamStore& s) {
    Tape tape;
    TapedParams tp(s, tape);
    LstmState st;
    st.h.assign(3, Ad(0.0));
    st.c.assign(3, Ad(0.0));
    st = lstm_step(tp, "cell", 3, st, lift(tape, in1));
    st = lstm_step(tp, "cell", 3, st, lift(tape, in2));
    return st.h[0].v + 0.5 * st.h[1].v * st.h[1].v + st.c[2].v;
  };

  Tape tape;
  TapedParams tp(store, tape);
  LstmState st;
  st.h.assign(3, Ad(0.0));
  st.c.assign(3, Ad(0.0));
  st = lstm_step(tp, "cell", 3, st, lift(tape, in1));
  st = lstm_step(tp, "cell", 3, st, lift(tape, in2));
  Ad loss = st.h[0] + Ad(0.5) * st.h[1] * st.h[1] + st.c[2];
  tape.backward(loss);

  for (const auto& [name, tensor] : store.tensors) {
    for (std::size_t i = 0; i < tensor.values.size(); i += 5) {
      const double step = 1e-6;
      ParamStore p = store, m = store;
      p.tensors.at(name).values[i] += step;
      m.tensors.at(name).values[i] -= step;
      const double fd = (loss_value(p) - loss_value(m)) / (2 * step);
      const double got = tape.gradient(tp.at(name)[i]);
      CHECK(std::abs(got - fd) <= 1e-4 * std::max({std::abs(fd), std::abs(got), 0.1}));
    }
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store;
  MlpSpec spec{2, {4}, 1};
  std::mt19937_64 rng(2);
  init_mlp(store, "net", spec, rng);
  const auto before = store.tensors;

  GradMap grads;
  for (const auto& [name, t] : store.tensors) grads[name].assign(t.values.size(), 0.0);
  adam_step(store, grads, AdamConfig{});

  for (const auto& [name, t] : store.tensors) {
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      CHECK(t.values[i] == before.at(name).values[i]);
    }
  }
  CHECK(store.adam_step_count == 1);
}

TEST_CASE("adam: constant gradient gives per-step displacement -> lr") {
  ParamStore store;
  store.add("w", {1});
  GradMap grads;
  grads["w"] = {0.37};
  AdamConfig cfg;
  cfg.lr = 1e-3;
  double prev = 0.0;
  double displacement = 0.0;
  for (int i = 0; i < 500; ++i) {
    adam_step(store, grads, cfg);
    displacement = std::abs(store.tensors.at("w").values[0] - prev);
    prev = store.tensors.at("w").values[0];
  }
  CHECK(displacement == doctest::Approx(cfg.lr).epsilon(1e-3));
}

TEST_CASE("adam: identical stores and gradients update identically") {
  ParamStore a, b;
  MlpSpec spec{2, {3}, 1};
  std::mt19937_64 rng_a(9), rng_b(9);
  init_mlp(a, "net", spec, rng_a);
  init_mlp(b, "net", spec, rng_b);

  GradMap grads;
  std::mt19937_64 rng_g(4);
  std::uniform_real_distribution<double> g(-1.0, 1.0);
  for (const auto& [name, t] : a.tensors) {
    auto& v = grads[name];
    for (std::size_t i = 0; i < t.values.size(); ++i) v.push_back(g(rng_g));
  }
  adam_step(a, grads, AdamConfig{});
  adam_step(b, grads, AdamConfig{});
  for (const auto& [name, t] : a.tensors) {
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      CHECK(t.values[i] == b.tensors.at(name).values[i]);
    }
  }
}

TEST_CASE("adam rejects non-finite gradients before mutating anything") {
  ParamStore store;
  store.add("w", {2});
  store.tensors.at("w").values = {1.0, 2.0};
  GradMap grads;
  grads["w"] = {0.1, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(adam_step(store, grads, AdamConfig{}), NanGradient);
  CHECK(store.tensors.at("w").values[0] == 1.0);
  CHECK(store.adam_step_count == 0);
}
