#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reatt/backbone.hpp"
#include "reatt/data.hpp"
#include "reatt/reward.hpp"
#include "reatt/trainer.hpp"

namespace reatt {

struct PlotConfig {
  bool attention = true;
  bool q_r = true;
};

struct ExperimentConfig {
  NetworkConfig network;
  TrainConfig train;
  RewardConfig reward;
  DatasetSpec dataset;
  std::string output_dir = "runs/out";
  PlotConfig plots;

  // Cross-checks the sub-configs and the dataset/network shape agreement.
  void validate() const;
};

// Parses and validates; unknown keys anywhere in the tree are errors. When
// the network omits input shape or class count, both default to the dataset's.
ExperimentConfig config_from_json(const nlohmann::json& j);

nlohmann::json network_to_json(const NetworkConfig& net);
nlohmann::json to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::string& path);  // IoError / ConfigError

// Applies one "dotted.path=value" assignment to a raw config tree. Values
// parse as JSON when possible, otherwise as strings.
void apply_override(nlohmann::json& tree, const std::string& assignment);

ExperimentConfig load_config_with_overrides(const std::string& path,
                                            const std::vector<std::string>& overrides);

}  // namespace reatt
