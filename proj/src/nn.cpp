#include "stlcbf/nn.hpp"

#include <cmath>

namespace stlcbf {

ParamStore::Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
  int n = 1;
  for (int d : shape) n *= d;
  Tensor t;
  t.shape = std::move(shape);
  t.values.assign(static_cast<std::size_t>(n), 0.0);
  auto [it, inserted] = tensors.emplace(name, std::move(t));
  if (!inserted) throw std::invalid_argument("duplicate parameter tensor: " + name);
  adam_m[name].assign(static_cast<std::size_t>(n), 0.0);
  adam_v[name].assign(static_cast<std::size_t>(n), 0.0);
  return it->second;
}

const ParamStore::Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("unknown parameter tensor: " + name);
  return it->second;
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.values.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& [_, t] : tensors) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

TapedParams::TapedParams(const ParamStore& store, Tape& tape) {
  for (const auto& [name, tensor] : store.tensors) {
    std::vector<Ad> leaves;
    leaves.reserve(tensor.values.size());
    for (double v : tensor.values) leaves.push_back(tape.leaf(v));
    leaves_.emplace(name, std::move(leaves));
  }
}

const std::vector<Ad>& TapedParams::at(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw std::out_of_range("unknown taped tensor: " + name);
  return it->second;
}

void TapedParams::accumulate_gradients(const Tape& tape, double scale, GradMap& out) const {
  for (const auto& [name, leaves] : leaves_) {
    auto& g = out[name];
    if (g.size() != leaves.size()) g.assign(leaves.size(), 0.0);
    for (std::size_t i = 0; i < leaves.size(); ++i) g[i] += scale * tape.gradient(leaves[i]);
  }
}

void init_mlp(ParamStore& store, const std::string& name, const MlpSpec& spec,
              std::mt19937_64& rng) {
  std::vector<int> dims;
  dims.push_back(spec.input);
  for (int h : spec.hidden) dims.push_back(h);
  dims.push_back(spec.output);

  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto& w = store.add(name + ".W" + std::to_string(l), {out, in});
    for (double& v : w.values) v = dist(rng);
    auto& b = store.add(name + ".b" + std::to_string(l), {out});
    for (double& v : b.values) v = dist(rng);
  }
}

std::vector<Ad> mlp_forward(const TapedParams& params, const std::string& name,
                            const MlpSpec& spec, std::span<const Ad> input) {
  if (static_cast<int>(input.size()) != spec.input) {
    throw std::invalid_argument("mlp_forward: input size mismatch for " + name);
  }
  std::vector<int> dims;
  dims.push_back(spec.input);
  for (int h : spec.hidden) dims.push_back(h);
  dims.push_back(spec.output);

  std::vector<Ad> act(input.begin(), input.end());
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    const auto& w = params.at(name + ".W" + std::to_string(l));
    const auto& b = params.at(name + ".b" + std::to_string(l));
    std::vector<Ad> next(static_cast<std::size_t>(out));
    for (int r = 0; r < out; ++r) {
      Ad acc = b[static_cast<std::size_t>(r)];
      const std::size_t row = static_cast<std::size_t>(r) * static_cast<std::size_t>(in);
      for (int c = 0; c < in; ++c) acc += w[row + static_cast<std::size_t>(c)] * act[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] = (l + 2 < dims.size()) ? relu(acc) : acc;
    }
    act = std::move(next);
  }
  return act;
}

Ad bounded_head(const Ad& raw, const HeadBound& bound) {
  return bounded_head_t<Ad>(raw, bound.lo, bound.hi);
}

void init_lstm(ParamStore& store, const std::string& name, int input, int hidden,
               std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto& w = store.add(name + ".W", {4 * hidden, input});
  for (double& v : w.values) v = dist(rng);
  auto& u = store.add(name + ".U", {4 * hidden, hidden});
  for (double& v : u.values) v = dist(rng);
  auto& b = store.add(name + ".b", {4 * hidden});
  for (double& v : b.values) v = dist(rng);
}

LstmState lstm_step(const TapedParams& params, const std::string& name, int hidden,
                    const LstmState& state, std::span<const Ad> input) {
  if (static_cast<int>(state.h.size()) != hidden || static_cast<int>(state.c.size()) != hidden) {
    throw std::invalid_argument("lstm_step: state size mismatch for " + name);
  }
  const auto& W = params.at(name + ".W");
  const auto& U = params.at(name + ".U");
  const auto& b = params.at(name + ".b");
  const int in = static_cast<int>(input.size());
  if (static_cast<int>(W.size()) != 4 * hidden * in) {
    throw std::invalid_argument("lstm_step: input size mismatch for " + name);
  }

  auto gate_preact = [&](int g, int r) {
    const int row = g * hidden + r;
    Ad acc = b[static_cast<std::size_t>(row)];
    const std::size_t wrow = static_cast<std::size_t>(row) * static_cast<std::size_t>(in);
    for (int c = 0; c < in; ++c) acc += W[wrow + static_cast<std::size_t>(c)] * input[static_cast<std::size_t>(c)];
    const std::size_t urow = static_cast<std::size_t>(row) * static_cast<std::size_t>(hidden);
    for (int c = 0; c < hidden; ++c) acc += U[urow + static_cast<std::size_t>(c)] * state.h[static_cast<std::size_t>(c)];
    return acc;
  };

  LstmState next;
  next.h.resize(static_cast<std::size_t>(hidden));
  next.c.resize(static_cast<std::size_t>(hidden));
  for (int r = 0; r < hidden; ++r) {
    const Ad i_g = sigmoid(gate_preact(0, r));
    const Ad f_g = sigmoid(gate_preact(1, r));
    const Ad g_g = tanh(gate_preact(2, r));
    const Ad o_g = sigmoid(gate_preact(3, r));
    const Ad c_next = f_g * state.c[static_cast<std::size_t>(r)] + i_g * g_g;
    next.c[static_cast<std::size_t>(r)] = c_next;
    next.h[static_cast<std::size_t>(r)] = o_g * tanh(c_next);
  }
  return next;
}

void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    for (double v : g) {
      if (!std::isfinite(v)) throw NanGradient("non-finite gradient in tensor " + name);
    }
  }

  const auto t = static_cast<double>(store.adam_step_count + 1);
  const double corr1 = 1.0 - std::pow(cfg.beta1, t);
  const double corr2 = 1.0 - std::pow(cfg.beta2, t);

  for (auto& [name, tensor] : store.tensors) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    auto& m = store.adam_m[name];
    auto& v = store.adam_v[name];
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / corr1;
      const double vhat = v[i] / corr2;
      tensor.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
  ++store.adam_step_count;
}

}  // namespace stlcbf
