#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hagcn/attention.hpp"
#include "hagcn/graph.hpp"
#include "hagcn/temporal.hpp"

namespace hagcn {

struct ModelConfig {
  // "ntu", "kinetics" or "custom" (custom_joints / custom_edges / custom_hubs).
  std::string graph = "ntu";
  bool extra_links = true;
  std::size_t custom_joints = 0;
  std::vector<Edge> custom_edges;
  std::vector<std::size_t> custom_hubs;

  std::size_t in_channels = 3;
  std::size_t num_classes = 60;
  std::size_t num_persons = 2;
  std::vector<std::size_t> channels = {64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
  std::vector<std::size_t> strides = {1, 1, 1, 1, 2, 1, 1, 2, 1, 1};
  double dropout = 0.5;
  TemporalMode temporal = TemporalMode::multiscale;
  AttentionOptions attention;
  std::uint64_t seed = 1;

  // Ten-block network on the NTU graph, 60 classes.
  static ModelConfig ntu();
  // Two narrow blocks on a 5-joint chain, 3 classes; used for gradient checks.
  static ModelConfig tiny();

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
// Rejects unknown keys; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

GraphSpec make_graph(const ModelConfig& cfg);

enum class Mode { train, eval };

// Spatial attention -> BN -> temporal convolution, plus a residual, then ReLU.
class Block {
 public:
  Block() = default;
  Block(std::size_t c_in, std::size_t c_out, std::size_t stride, const GraphSpec& graph, const ModelConfig& cfg,
        std::mt19937_64& rng);

  Var forward(const Var& x, bool training, DisableBranch disable = DisableBranch::none,
              MaskCapture* capture = nullptr);

  HybridAttention& spatial() { return spatial_; }
  BatchNormLayer& spatial_norm() { return spatial_norm_; }
  TemporalConv& temporal() { return temporal_; }
  bool has_residual_conv() const { return residual_conv_.has_value(); }
  std::optional<ConvLayer>& residual_conv() { return residual_conv_; }
  std::optional<BatchNormLayer>& residual_norm() { return residual_norm_; }

  void collect(const std::string& prefix, ParamList& out);

 private:
  HybridAttention spatial_;
  BatchNormLayer spatial_norm_;
  TemporalConv temporal_;
  std::optional<ConvLayer> residual_conv_;
  std::optional<BatchNormLayer> residual_norm_;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // x is (N, M, C, T, V). Train mode returns logits (with dropout), eval mode
  // softmax probabilities. Masks of block `capture_layer` are recorded for
  // the first sample's first person when `capture` is given.
  Var forward(const Var& x, Mode mode, DisableBranch disable = DisableBranch::none, MaskCapture* capture = nullptr,
              std::size_t capture_layer = 0);
  Var forward(const Tensor& x, Mode mode, DisableBranch disable = DisableBranch::none);

  // Eval-mode logits without the final softmax.
  Var logits(const Var& x, Mode mode, DisableBranch disable = DisableBranch::none);

  const ModelConfig& config() const { return cfg_; }
  const GraphSpec& graph() const { return graph_; }
  std::vector<Block>& blocks() { return blocks_; }
  BatchNormLayer& input_norm() { return input_norm_; }

  ParamList parameters();
  std::size_t param_count();
  std::mt19937_64& dropout_rng() { return dropout_rng_; }

 private:
  Var run(const Var& x, Mode mode, DisableBranch disable, MaskCapture* capture, std::size_t capture_layer);

  ModelConfig cfg_;
  GraphSpec graph_;
  BatchNormLayer input_norm_;
  std::vector<Block> blocks_;
  Var fc_weight_;
  Var fc_bias_;
  std::mt19937_64 dropout_rng_;
};

std::size_t param_count(Model& model);

struct TrainingState {
  std::size_t epoch = 0;
  std::map<std::string, Tensor> momentum;
};

// "HAGC", the config as canonical JSON text, then named parameters, buffers
// and optimizer state, each tensor in the HAGT layout.
void save_checkpoint(Model& model, const std::string& path, const TrainingState* state = nullptr);
struct LoadedCheckpoint {
  Model model;
  TrainingState state;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace hagcn
