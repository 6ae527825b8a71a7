#include "hagcn/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "hagcn/errors.hpp"

namespace hagcn {

void RunConfig::set_seed(std::uint64_t seed) {
  model.seed = seed;
  train.seed = seed;
  synthetic.seed = seed;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {{"model", model_config_to_json(cfg.model)},
          {"train", train_config_to_json(cfg.train)},
          {"synthetic", synthetic_spec_to_json(cfg.synthetic)},
          {"data", {{"train", cfg.train_data}, {"val", cfg.val_data}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> known = {"model", "train", "synthetic", "data", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
  if (j.contains("train")) cfg.train = train_config_from_json(j["train"]);
  if (j.contains("synthetic")) cfg.synthetic = synthetic_spec_from_json(j["synthetic"]);
  if (j.contains("data")) {
    const auto& d = j["data"];
    if (!d.is_object()) throw ConfigError("data section must be an object");
    for (const auto& [key, value] : d.items()) {
      if (key != "train" && key != "val") throw ConfigError("unknown data key '" + key + "'");
      if (!value.is_string()) throw ConfigError("data." + key + " must be a path string");
    }
    cfg.train_data = d.value("train", "");
    cfg.val_data = d.value("val", "");
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    cfg.set_seed(j["seed"].get<std::uint64_t>());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void echo_run_config(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / "config.json";
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << run_config_to_json(cfg).dump(2) << '\n';
}

}  // namespace hagcn
