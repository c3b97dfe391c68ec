#include "stlcbf/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace stlcbf {

namespace {

std::string encode_doubles(const std::vector<double>& values) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(values.size() * 16);
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int shift = 60; shift >= 0; shift -= 4) out.push_back(digits[(bits >> shift) & 0xF]);
  }
  return out;
}

std::vector<double> decode_doubles(const std::string& hex) {
  if (hex.size() % 16 != 0) throw CheckpointError("corrupt tensor data");
  std::vector<double> out(hex.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 16; ++k) {
      const char c = hex[i * 16 + static_cast<std::size_t>(k)];
      std::uint64_t nibble;
      if (c >= '0' && c <= '9') {
        nibble = static_cast<std::uint64_t>(c - '0');
      } else if (c >= 'a' && c <= 'f') {
        nibble = static_cast<std::uint64_t>(c - 'a' + 10);
      } else {
        throw CheckpointError("corrupt tensor data");
      }
      bits = (bits << 4) | nibble;
    }
    std::memcpy(&out[i], &bits, sizeof(double));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = "stlcbf-checkpoint";
  j["version"] = ckpt.version;
  j["scenario_name"] = ckpt.scenario_name;
  j["config_hash"] = ckpt.config_hash;
  j["ablation"] = ckpt.ablation;
  j["memory"] = ckpt.memory;
  j["adam_step_count"] = ckpt.params.adam_step_count;

  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : ckpt.params.tensors) {
    tensors[name] = {{"shape", t.shape}, {"data", encode_doubles(t.values)}};
  }
  j["tensors"] = std::move(tensors);

  nlohmann::json adam = nlohmann::json::object();
  for (const auto& [name, m] : ckpt.params.adam_m) {
    adam[name] = {{"m", encode_doubles(m)}, {"v", encode_doubles(ckpt.params.adam_v.at(name))}};
  }
  j["adam"] = std::move(adam);

  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out << j.dump(1);
  out << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint parse error: ") + e.what());
  }
  if (j.value("format", "") != "stlcbf-checkpoint") {
    throw CheckpointError("not a checkpoint file: " + path);
  }

  Checkpoint ckpt;
  try {
    ckpt.version = j.at("version").get<int>();
    ckpt.scenario_name = j.at("scenario_name").get<std::string>();
    ckpt.config_hash = j.at("config_hash").get<std::string>();
    ckpt.ablation = j.at("ablation").get<std::string>();
    ckpt.memory = j.at("memory").get<bool>();
    ckpt.params.adam_step_count = j.at("adam_step_count").get<std::int64_t>();
    for (const auto& [name, tj] : j.at("tensors").items()) {
      ParamStore::Tensor t;
      t.shape = tj.at("shape").get<std::vector<int>>();
      t.values = decode_doubles(tj.at("data").get<std::string>());
      ckpt.params.tensors.emplace(name, std::move(t));
    }
    for (const auto& [name, aj] : j.at("adam").items()) {
      ckpt.params.adam_m[name] = decode_doubles(aj.at("m").get<std::string>());
      ckpt.params.adam_v[name] = decode_doubles(aj.at("v").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint schema error: ") + e.what());
  }
  return ckpt;
}

}  // namespace stlcbf
