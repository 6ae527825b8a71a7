#include "hagcn/network.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include "hagcn/errors.hpp"

namespace hagcn {

ModelConfig ModelConfig::ntu() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.graph = "custom";
  cfg.custom_joints = 5;
  cfg.custom_edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  cfg.custom_hubs = {0, 2, 4};
  cfg.extra_links = true;
  cfg.in_channels = 3;
  cfg.num_classes = 3;
  cfg.num_persons = 2;
  cfg.channels = {8, 8};
  cfg.strides = {1, 2};
  cfg.dropout = 0.5;
  return cfg;
}

void ModelConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_persons == 0) throw ConfigError("num_persons must be positive");
  if (channels.empty()) throw ConfigError("at least one block is required");
  if (channels.size() != strides.size()) throw ConfigError("channels and strides must have the same length");
  for (auto c : channels)
    if (c == 0) throw ConfigError("block channels must be positive");
  for (auto s : strides)
    if (s != 1 && s != 2) throw ConfigError("block strides must be 1 or 2");
  if (temporal == TemporalMode::multiscale) {
    for (auto c : channels)
      if (c % 4 != 0) throw ConfigError("multi-scale temporal blocks need channels divisible by 4");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (graph == "custom" && custom_joints == 0) throw ConfigError("custom graph needs custom_joints");
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : cfg.custom_edges) edges.push_back({e.parent, e.child});
  return {
      {"graph", cfg.graph},
      {"extra_links", cfg.extra_links},
      {"custom_joints", cfg.custom_joints},
      {"custom_edges", edges},
      {"custom_hubs", cfg.custom_hubs},
      {"in_channels", cfg.in_channels},
      {"num_classes", cfg.num_classes},
      {"num_persons", cfg.num_persons},
      {"channels", cfg.channels},
      {"strides", cfg.strides},
      {"dropout", cfg.dropout},
      {"temporal", temporal_mode_name(cfg.temporal)},
      {"attention", branches_name(cfg.attention.branches)},
      {"extension_conv", cfg.attention.extension_conv},
      {"inter_channels", cfg.attention.inter},
      {"seed", cfg.seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  static const std::set<std::string> known = {"graph",       "extra_links", "custom_joints", "custom_edges",
                                              "custom_hubs", "in_channels", "num_classes",   "num_persons",
                                              "channels",    "strides",     "dropout",       "temporal",
                                              "attention",   "extension_conv", "inter_channels", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  ModelConfig cfg;
  try {
    if (j.contains("graph")) cfg.graph = j["graph"].get<std::string>();
    if (j.contains("extra_links")) cfg.extra_links = j["extra_links"].get<bool>();
    if (j.contains("custom_joints")) cfg.custom_joints = j["custom_joints"].get<std::size_t>();
    if (j.contains("custom_edges")) {
      cfg.custom_edges.clear();
      for (const auto& e : j["custom_edges"]) {
        if (!e.is_array() || e.size() != 2) throw ConfigError("custom_edges entries must be [parent, child]");
        cfg.custom_edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
      }
    }
    if (j.contains("custom_hubs")) cfg.custom_hubs = j["custom_hubs"].get<std::vector<std::size_t>>();
    if (j.contains("in_channels")) cfg.in_channels = j["in_channels"].get<std::size_t>();
    if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<std::size_t>();
    if (j.contains("num_persons")) cfg.num_persons = j["num_persons"].get<std::size_t>();
    if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<std::size_t>>();
    if (j.contains("strides")) cfg.strides = j["strides"].get<std::vector<std::size_t>>();
    if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
    if (j.contains("temporal")) cfg.temporal = parse_temporal_mode(j["temporal"].get<std::string>());
    if (j.contains("attention")) cfg.attention.branches = parse_branches(j["attention"].get<std::string>());
    if (j.contains("extension_conv")) cfg.attention.extension_conv = j["extension_conv"].get<bool>();
    if (j.contains("inter_channels")) cfg.attention.inter = j["inter_channels"].get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

GraphSpec make_graph(const ModelConfig& cfg) {
  if (cfg.graph == "custom") {
    return GraphSpec("custom", cfg.custom_joints, cfg.custom_edges, cfg.custom_hubs, cfg.extra_links);
  }
  return build_named_graph(cfg.graph, cfg.extra_links);
}

Block::Block(std::size_t c_in, std::size_t c_out, std::size_t stride, const GraphSpec& graph, const ModelConfig& cfg,
             std::mt19937_64& rng)
    : spatial_(c_in, c_out, graph, cfg.attention, rng),
      spatial_norm_(c_out),
      temporal_(c_out, stride, cfg.temporal, rng) {
  if (c_in != c_out || stride != 1) {
    residual_conv_ = ConvLayer(c_out, c_in, 1, {stride, 1, 0}, rng);
    residual_norm_ = BatchNormLayer(c_out);
  }
}

Var Block::forward(const Var& x, bool training, DisableBranch disable, MaskCapture* capture) {
  Var y = temporal_.forward(spatial_norm_(spatial_.forward(x, disable, capture), training), training);
  Var res = residual_conv_ ? (*residual_norm_)((*residual_conv_)(x), training) : x;
  return relu(add(y, res));
}

void Block::collect(const std::string& prefix, ParamList& out) {
  spatial_.collect(prefix + ".spatial", out);
  spatial_norm_.collect(prefix + ".spatial_norm", out);
  temporal_.collect(prefix + ".temporal", out);
  if (residual_conv_) {
    residual_conv_->collect(prefix + ".residual", out);
    residual_norm_->collect(prefix + ".residual_norm", out);
  }
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  graph_ = make_graph(cfg_);
  std::mt19937_64 rng(cfg_.seed);
  input_norm_ = BatchNormLayer(cfg_.in_channels * graph_.num_joints(), /*per_vertex=*/true);
  std::size_t c_in = cfg_.in_channels;
  for (std::size_t b = 0; b < cfg_.channels.size(); ++b) {
    blocks_.emplace_back(c_in, cfg_.channels[b], cfg_.strides[b], graph_, cfg_, rng);
    c_in = cfg_.channels[b];
  }
  Tensor w({cfg_.num_classes, c_in});
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(cfg_.num_classes)));
  for (auto& v : w.data()) v = dist(rng);
  fc_weight_ = Var(std::move(w), true);
  fc_bias_ = Var(Tensor::zeros({cfg_.num_classes}), true);
  dropout_rng_.seed(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
}

Var Model::run(const Var& x, Mode mode, DisableBranch disable, MaskCapture* capture, std::size_t capture_layer) {
  const auto& s = x.shape();
  if (s.size() != 5 || s[1] != cfg_.num_persons || s[2] != cfg_.in_channels || s[4] != graph_.num_joints()) {
    throw ShapeError("model expects (N, " + std::to_string(cfg_.num_persons) + ", " + std::to_string(cfg_.in_channels) +
                     ", T, " + std::to_string(graph_.num_joints()) + ") input, got " + shape_str(s));
  }
  if (capture && capture_layer >= blocks_.size()) {
    throw ConfigError("layer index " + std::to_string(capture_layer) + " out of range for " +
                      std::to_string(blocks_.size()) + " blocks");
  }
  const bool training = mode == Mode::train;
  const std::size_t n = s[0], m = s[1];
  Var h = reshape(x, {n * m, s[2], s[3], s[4]});
  h = input_norm_(h, training);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    MaskCapture* cap = (capture && b == capture_layer) ? capture : nullptr;
    h = blocks_[b].forward(h, training, disable, cap);
  }
  const std::size_t c = h.dim(1);
  h = mean_axis(reshape(h, {n * m, c, h.dim(2) * h.dim(3)}), 2);
  h = mean_axis(reshape(h, {n, m, c}), 1);
  h = dropout(h, cfg_.dropout, dropout_rng_, training);
  return linear(h, fc_weight_, fc_bias_);
}

Var Model::forward(const Var& x, Mode mode, DisableBranch disable, MaskCapture* capture, std::size_t capture_layer) {
  Var z = run(x, mode, disable, capture, capture_layer);
  return mode == Mode::eval ? softmax(z, 1) : z;
}

Var Model::forward(const Tensor& x, Mode mode, DisableBranch disable) { return forward(Var(x), mode, disable); }

Var Model::logits(const Var& x, Mode mode, DisableBranch disable) { return run(x, mode, disable, nullptr, 0); }

ParamList Model::parameters() {
  ParamList out;
  input_norm_.collect("input_norm", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect("block" + std::to_string(b), out);
  out.params.push_back({"fc.weight", fc_weight_, ParamKind::weight});
  out.params.push_back({"fc.bias", fc_bias_, ParamKind::bias});
  return out;
}

std::size_t Model::param_count() { return count_scalars(parameters().params); }

std::size_t param_count(Model& model) { return model.param_count(); }

namespace {
constexpr std::array<char, 4> kCheckpointMagic = {'H', 'A', 'G', 'C'};
}

void save_checkpoint(Model& model, const std::string& path, const TrainingState* state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  write_string(out, model_config_to_json(model.config()).dump());
  auto list = model.parameters();
  write_u64(out, list.params.size());
  for (const auto& p : list.params) {
    write_string(out, p.path);
    write_tensor(out, p.var.value());
  }
  write_u64(out, list.buffers.size());
  for (const auto& b : list.buffers) {
    write_string(out, b.path);
    write_tensor(out, *b.tensor);
  }
  write_u64(out, state ? state->epoch : 0);
  write_u64(out, state ? state->momentum.size() : 0);
  if (state) {
    for (const auto& [name, t] : state->momentum) {
      write_string(out, name);
      write_tensor(out, t);
    }
  }
  if (!out) throw FormatError("failed writing checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw FormatError("bad checkpoint magic in " + path);
  }
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(read_string(in, 1u << 20));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(cfg_json);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config rejected: ") + e.what());
  }
  LoadedCheckpoint ck{Model(cfg), {}};
  auto list = ck.model.parameters();

  auto load_named = [&](auto& targets, auto assign) {
    const auto count = read_u64(in);
    if (count != targets.size()) {
      throw FormatError("checkpoint holds " + std::to_string(count) + " entries, model expects " +
                        std::to_string(targets.size()));
    }
    for (auto& target : targets) {
      const std::string name = read_string(in, 4096);
      if (name != target.path) throw FormatError("checkpoint entry '" + name + "' where '" + target.path + "' expected");
      Tensor t = read_tensor(in);
      assign(target, std::move(t));
    }
  };
  load_named(list.params, [](ParamRef& p, Tensor t) {
    if (t.shape() != p.var.shape()) throw FormatError("checkpoint tensor '" + p.path + "' has wrong shape");
    p.var.mutable_value() = std::move(t);
  });
  load_named(list.buffers, [](BufferRef& b, Tensor t) {
    if (t.shape() != b.tensor->shape()) throw FormatError("checkpoint buffer '" + b.path + "' has wrong shape");
    *b.tensor = std::move(t);
  });
  ck.state.epoch = read_u64(in);
  const auto moments = read_u64(in);
  if (moments > list.params.size()) throw FormatError("checkpoint optimizer state too large");
  for (std::uint64_t i = 0; i < moments; ++i) {
    std::string name = read_string(in, 4096);
    ck.state.momentum[name] = read_tensor(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint " + path);
  return ck;
}

}  // namespace hagcn
