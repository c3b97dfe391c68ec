#pragma once

/**
 * @file
 * @brief Neural building blocks on the autodiff tape: dense nets with ReLU
 *        hidden layers, bound-enforcing output heads, an LSTM cell, and Adam.
 *
 * Parameters live in a ParamStore of named double tensors. At the start of a
 * rollout the store is projected onto the rollout's tape as leaf variables
 * (TapedParams); after the backward sweep the leaf adjoints are read back as
 * the gradient.
 */

#include "stlcbf/autodiff.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stlcbf {

/// Named parameter tensors plus Adam moment buffers.
struct ParamStore {
  struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;

    int size() const { return static_cast<int>(values.size()); }
  };

  std::map<std::string, Tensor> tensors;  // ordered: deterministic iteration
  std::map<std::string, std::vector<double>> adam_m;
  std::map<std::string, std::vector<double>> adam_v;
  std::int64_t adam_step_count = 0;

  Tensor& add(const std::string& name, std::vector<int> shape);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  std::size_t total_parameters() const;
  bool all_finite() const;
};

/// Flat gradient storage matching a ParamStore layout.
using GradMap = std::map<std::string, std::vector<double>>;

/// Per-rollout view of the parameters as tape leaves.
struct TapedParams {
  TapedParams(const ParamStore& store, Tape& tape);

  const std::vector<Ad>& at(const std::string& name) const;

  /// Reads leaf adjoints after Tape::backward, scaled and accumulated.
  void accumulate_gradients(const Tape& tape, double scale, GradMap& out) const;

private:
  std::map<std::string, std::vector<Ad>> leaves_;
};

/// Layer sizes of a fully connected net; hidden layers use ReLU, the output
/// layer is linear (heads apply their own squashing).
struct MlpSpec {
  int input = 0;
  std::vector<int> hidden;
  int output = 0;
};

/// Registers weight/bias tensors "<name>.W<k>" / "<name>.b<k>" with
/// fan-in-scaled uniform initialization.
void init_mlp(ParamStore& store, const std::string& name, const MlpSpec& spec, std::mt19937_64& rng);

std::vector<Ad> mlp_forward(const TapedParams& params, const std::string& name,
                            const MlpSpec& spec, std::span<const Ad> input);

/// One-sided or two-sided bound, possibly depending on tape values.
struct HeadBound {
  std::optional<Ad> lo;
  std::optional<Ad> hi;

  static HeadBound interval(Ad lo, Ad hi) { return {lo, hi}; }
  static HeadBound at_least(Ad lo) { return {lo, std::nullopt}; }
  static HeadBound at_most(Ad hi) { return {std::nullopt, hi}; }
  static HeadBound free() { return {std::nullopt, std::nullopt}; }
};

/// Squashes a raw activation strictly inside its bound: sigmoid for a
/// two-sided interval, softplus offsets for one-sided bounds.
Ad bounded_head(const Ad& raw, const HeadBound& bound);

/// Scalar-generic form of the same squash, for code that runs on plain
/// doubles as well as tape values.
template <typename S>
S bounded_head_t(const S& raw, const std::optional<S>& lo, const std::optional<S>& hi) {
  if (lo && hi) {
    if (!(value_of(*lo) < value_of(*hi))) {
      throw std::invalid_argument("bounded_head: empty interval");
    }
    // the min/max guard absorbs the one-ulp overshoot at sigmoid saturation
    return min(max(*lo + (*hi - *lo) * sigmoid(raw), *lo), *hi);
  }
  if (lo) return *lo + softplus(raw);
  if (hi) return *hi - softplus(raw);
  return raw;
}

/// Single LSTM layer parameters: "<name>.W" (4H x in), "<name>.U" (4H x H),
/// "<name>.b" (4H), gate order [input, forget, cell, output].
void init_lstm(ParamStore& store, const std::string& name, int input, int hidden,
               std::mt19937_64& rng);

struct LstmState {
  std::vector<Ad> h;
  std::vector<Ad> c;
};

/// Standard gated update; returns the new hidden/cell state. The hidden
/// vector doubles as the cell output.
LstmState lstm_step(const TapedParams& params, const std::string& name, int hidden,
                    const LstmState& state, std::span<const Ad> input);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct NanGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bias-corrected Adam update (a minimization step along `grads`). Throws
/// NanGradient before touching any parameter when a gradient is not finite.
void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg);

}  // namespace stlcbf
