#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "hagcn/network.hpp"
#include "hagcn/training.hpp"

namespace hagcn {

// Everything a run needs, as one JSON document:
//   {"model": {...}, "train": {...}, "synthetic": {...},
//    "data": {"train": path, "val": path}, "seed": n}
// Unknown keys anywhere are rejected. A top-level seed sets the model,
// training and synthetic seeds alike.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synthetic;
  std::string train_data;
  std::string val_data;

  void set_seed(std::uint64_t seed);
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Writes <dir>/config.json, creating the directory when needed.
void echo_run_config(const RunConfig& cfg, const std::string& dir);

}  // namespace hagcn
