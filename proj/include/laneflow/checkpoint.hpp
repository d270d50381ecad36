#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "laneflow/temporal_model.hpp"

namespace laneflow::model {

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint document: format version, the model configuration, and every
/// parameter as hierarchical name -> { shape, values }.
inline nlohmann::json checkpoint_to_json(const ParamStore& store, const ModelConfig& config) {
  nlohmann::json j;
  j["format"] = "laneflow-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = model_config_to_json(config);
  auto& params = j["params"] = nlohmann::json::object();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.tensor(i);
    params[store.name(i)] = {{"shape", t.shape()}, {"values", t.values()}};
  }
  return j;
}

inline void save_checkpoint(const ParamStore& store, const ModelConfig& config,
                            const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "checkpoint: cannot open ", path, " for writing");
  out << checkpoint_to_json(store, config).dump() << "\n";
}

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

/// Loads and validates a checkpoint: the parameter set and every shape must
/// match what the embedded configuration defines.
inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "checkpoint: cannot open ", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("checkpoint: ", path, " is corrupt or truncated (", e.what(), ")");
  }
  require(j.value("format", "") == "laneflow-checkpoint", "checkpoint: ", path,
          " is not a checkpoint file");
  require(j.at("version").get<int>() == kCheckpointVersion,
          "checkpoint: unsupported version ", j.at("version").get<int>(), ", expected ",
          kCheckpointVersion);

  Checkpoint out{model_config_from_json(j.at("config")), ParamStore{}};
  out.params = build_model_params(out.config, 0);
  const auto& params = j.at("params");
  require(params.size() == out.params.size(), "checkpoint: expected ", out.params.size(),
          " parameters, file has ", params.size());
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    const std::string& name = out.params.name(i);
    require(params.contains(name), "checkpoint: missing parameter ", name);
    const auto& entry = params.at(name);
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    Tensor& dst = out.params.tensor(i);
    require(shape == dst.shape(), "checkpoint: shape mismatch for ", name, ": file has ",
            Tensor::shape_string(shape), ", config defines ",
            Tensor::shape_string(dst.shape()));
    auto values = entry.at("values").get<std::vector<double>>();
    require(values.size() == dst.numel(), "checkpoint: value count mismatch for ", name);
    dst.values() = std::move(values);
  }
  return out;
}

}  // namespace laneflow::model
