#pragma once

/**
 * @file
 * @brief Versioned checkpoint files: named tensors, optimizer state, and the
 *        config hash, with bit-exact round-trip (doubles stored as hex bit
 *        patterns).
 */

#include "stlcbf/nn.hpp"

#include <string>

namespace stlcbf {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  int version = 1;
  std::string scenario_name;
  std::string config_hash;
  std::string ablation;
  bool memory = false;
  ParamStore params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stlcbf
