#include "hagcn/training.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "hagcn/errors.hpp"

namespace hagcn {

void TrainConfig::validate() const {
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) throw ConfigError("decay epochs must be strictly increasing");
  }
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (train_batch == 0 || eval_batch == 0) throw ConfigError("batch sizes must be positive");
  if (max_frames == 0) throw ConfigError("max_frames must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {
      {"base_lr", cfg.base_lr},
      {"lr_decay", cfg.lr_decay},
      {"decay_epochs", cfg.decay_epochs},
      {"epochs", cfg.epochs},
      {"momentum", cfg.momentum},
      {"nesterov", cfg.nesterov},
      {"weight_decay", cfg.weight_decay},
      {"train_batch", cfg.train_batch},
      {"eval_batch", cfg.eval_batch},
      {"seed", cfg.seed},
      {"stream", stream_name(cfg.stream)},
      {"max_frames", cfg.max_frames},
      {"augment", cfg.augment == Augment::kinetics ? "kinetics" : "none"},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  static const std::set<std::string> known = {"base_lr",     "lr_decay",   "decay_epochs", "epochs", "momentum",
                                              "nesterov",    "weight_decay", "train_batch", "eval_batch", "seed",
                                              "stream",      "max_frames", "augment"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown train config key '" + key + "'");
  }
  TrainConfig cfg;
  try {
    if (j.contains("base_lr")) cfg.base_lr = j["base_lr"].get<double>();
    if (j.contains("lr_decay")) cfg.lr_decay = j["lr_decay"].get<double>();
    if (j.contains("decay_epochs")) cfg.decay_epochs = j["decay_epochs"].get<std::vector<std::size_t>>();
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("momentum")) cfg.momentum = j["momentum"].get<double>();
    if (j.contains("nesterov")) cfg.nesterov = j["nesterov"].get<bool>();
    if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("train_batch")) cfg.train_batch = j["train_batch"].get<std::size_t>();
    if (j.contains("eval_batch")) cfg.eval_batch = j["eval_batch"].get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("stream")) cfg.stream = parse_stream(j["stream"].get<std::string>());
    if (j.contains("max_frames")) cfg.max_frames = j["max_frames"].get<std::size_t>();
    if (j.contains("augment")) {
      const auto a = j["augment"].get<std::string>();
      if (a == "none") {
        cfg.augment = Augment::none;
      } else if (a == "kinetics") {
        cfg.augment = Augment::kinetics;
      } else {
        throw ConfigError("augment must be none or kinetics, got '" + a + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.base_lr;
  for (auto e : cfg.decay_epochs) {
    if (epoch >= e) lr *= cfg.lr_decay;
  }
  return lr;
}

void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay,
                bool nesterov) {
  if (grad.shape() != param.shape()) throw ShapeError("gradient shape " + shape_str(grad.shape()) +
                                                      " does not match parameter " + shape_str(param.shape()));
  if (velocity.empty()) velocity = Tensor::zeros(param.shape());
  auto p = param.data();
  const auto g = grad.data();
  auto v = velocity.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i] + weight_decay * p[i];
    v[i] = momentum * v[i] + gi;
    p[i] -= lr * (nesterov ? gi + momentum * v[i] : v[i]);
  }
}

void Sgd::step(const std::vector<ParamRef>& params, double lr) {
  for (const auto& ref : params) {
    if (!ref.var.has_grad()) continue;
    const bool decay = ref.kind == ParamKind::weight || ref.kind == ParamKind::bias;
    Var v = ref.var;
    sgd_update(v.mutable_value(), ref.var.grad(), velocity_[ref.path], lr, momentum_, decay ? weight_decay_ : 0.0,
               nesterov_);
  }
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& ref : params) {
    Var v = ref.var;
    v.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Synthetic motions

void SyntheticSpec::validate() const {
  if (num_classes == 0 || num_classes > kSyntheticMotions) {
    throw ConfigError("synthetic num_classes must lie in [1, " + std::to_string(kSyntheticMotions) + "]");
  }
  if (samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
  if (frames < 2) throw ConfigError("synthetic sequences need at least 2 frames");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
}

const char* synthetic_motion_name(std::size_t cls) {
  static constexpr std::array<const char*, kSyntheticMotions> names = {
      "hand-to-head", "arms-raise", "leg-swing", "torso-lean", "hand-wave", "squat", "reach-forward", "stationary"};
  if (cls >= names.size()) throw ConfigError("no synthetic motion for class " + std::to_string(cls));
  return names[cls];
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
  return {{"num_classes", spec.num_classes},
          {"samples_per_class", spec.samples_per_class},
          {"frames", spec.frames},
          {"noise", spec.noise},
          {"seed", spec.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synthetic config must be an object");
  static const std::set<std::string> known = {"num_classes", "samples_per_class", "frames", "noise", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown synthetic config key '" + key + "'");
  }
  SyntheticSpec spec;
  try {
    if (j.contains("num_classes")) spec.num_classes = j["num_classes"].get<std::size_t>();
    if (j.contains("samples_per_class")) spec.samples_per_class = j["samples_per_class"].get<std::size_t>();
    if (j.contains("frames")) spec.frames = j["frames"].get<std::size_t>();
    if (j.contains("noise")) spec.noise = j["noise"].get<double>();
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  spec.validate();
  return spec;
}

namespace {

using Vec3 = Eigen::Vector3d;
using Pose = std::array<Vec3, 25>;

// Standing pose facing the camera (y up, camera towards -z), 0-based NTU order.
Pose rest_pose() {
  Pose p;
  p[0] = {0.0, 0.0, 3.0};     // spine base
  p[1] = {0.0, 0.25, 3.0};    // spine mid
  p[2] = {0.0, 0.58, 3.0};    // neck
  p[3] = {0.0, 0.72, 3.0};    // head
  p[4] = {-0.18, 0.48, 3.0};  // left shoulder
  p[5] = {-0.22, 0.22, 3.0};
  p[6] = {-0.24, 0.0, 3.0};
  p[7] = {-0.25, -0.06, 3.0};
  p[8] = {0.18, 0.48, 3.0};  // right shoulder
  p[9] = {0.22, 0.22, 3.0};
  p[10] = {0.24, 0.0, 3.0};
  p[11] = {0.25, -0.06, 3.0};
  p[12] = {-0.1, -0.02, 3.0};  // left hip
  p[13] = {-0.11, -0.42, 3.0};
  p[14] = {-0.11, -0.8, 3.0};
  p[15] = {-0.11, -0.85, 2.9};
  p[16] = {0.1, -0.02, 3.0};  // right hip
  p[17] = {0.11, -0.42, 3.0};
  p[18] = {0.11, -0.8, 3.0};
  p[19] = {0.11, -0.85, 2.9};
  p[20] = {0.0, 0.5, 3.0};  // spine shoulder
  p[21] = {-0.26, -0.12, 3.0};
  p[22] = {-0.22, -0.06, 2.97};
  p[23] = {0.26, -0.12, 3.0};
  p[24] = {0.22, -0.06, 2.97};
  return p;
}

constexpr std::array<std::size_t, 5> kLeftArm = {5, 6, 7, 21, 22};
constexpr std::array<std::size_t, 5> kRightArm = {9, 10, 11, 23, 24};
constexpr std::array<std::size_t, 4> kRightForearm = {10, 11, 23, 24};
constexpr std::array<std::size_t, 3> kRightLeg = {17, 18, 19};
constexpr std::array<std::size_t, 16> kUpperBody = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 20, 21, 22, 23, 24};

template <std::size_t K>
void rotate(Pose& p, const std::array<std::size_t, K>& joints, std::size_t pivot, const Vec3& axis, double angle) {
  const Eigen::AngleAxisd r(angle, axis);
  const Vec3 c = p[pivot];
  for (auto j : joints) p[j] = c + r * (p[j] - c);
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

// Pose of motion `cls` at normalized time s in [0, 1] with amplitude factor a.
Pose motion_pose(std::size_t cls, double s, double a) {
  const double pi = std::numbers::pi;
  const Vec3 x_axis = Vec3::UnitX(), z_axis = Vec3::UnitZ();
  Pose p = rest_pose();
  switch (cls) {
    case 0: {  // right hand arcs up to the head
      const double w = a * std::pow(std::sin(pi * s), 2);
      const Vec3 shift = (p[3] + Vec3(0.08, 0.0, -0.06) - p[11]) * w;
      for (auto j : kRightForearm) p[j] += shift;
      p[9] += shift * 0.5 + Vec3(0.05, 0.0, -0.1) * w;
      break;
    }
    case 1: {  // both arms raised sideways
      const double ang = a * deg(140.0) * std::sin(pi * s);
      rotate(p, kLeftArm, 4, z_axis, -ang);
      rotate(p, kRightArm, 8, z_axis, ang);
      break;
    }
    case 2:  // right leg swings back and forth
      rotate(p, kRightLeg, 16, x_axis, a * deg(35.0) * std::sin(2.0 * pi * s));
      break;
    case 3:  // torso leans towards the camera and back
      rotate(p, kUpperBody, 0, x_axis, -a * deg(30.0) * std::sin(pi * s));
      break;
    case 4: {  // right arm lifted, forearm waving
      rotate(p, kRightArm, 8, z_axis, deg(90.0));
      rotate(p, kRightForearm, 9, z_axis, deg(80.0) + a * deg(25.0) * std::sin(6.0 * pi * s));
      break;
    }
    case 5: {  // squat
      const double d = a * 0.25 * std::pow(std::sin(pi * s), 2);
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (j == 14 || j == 15 || j == 18 || j == 19) continue;
        if (j == 13 || j == 17) {
          p[j] += Vec3(0.0, -0.5 * d, -0.5 * d);
        } else {
          p[j].y() -= d;
        }
      }
      break;
    }
    case 6:  // right arm reaches towards the camera
      rotate(p, kRightArm, 8, x_axis, a * deg(85.0) * std::sin(pi * s));
      break;
    case 7:  // standing with a slight sway
      for (auto& j : p) j.x() += a * 0.01 * std::sin(2.0 * pi * s);
      break;
    default:
      throw ConfigError("no synthetic motion for class " + std::to_string(cls));
  }
  return p;
}

}  // namespace

std::vector<SkeletonSequence> make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = spec.noise;
  const std::size_t t_len = spec.frames;

  std::vector<SkeletonSequence> out;
  out.reserve(spec.num_classes * spec.samples_per_class);
  for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const double amplitude = 1.0 + 3.0 * sigma * gauss(rng);
      const double speed = 1.0 + 2.0 * sigma * gauss(rng);
      const double offset = 2.0 * sigma * gauss(rng);
      const Vec3 shift(5.0 * sigma * gauss(rng), 2.0 * sigma * gauss(rng), 5.0 * sigma * gauss(rng));
      const double yaw = 5.0 * sigma * gauss(rng);
      const Eigen::AngleAxisd turn(yaw, Vec3::UnitY());
      const Vec3 centre = rest_pose()[0];

      SkeletonSequence seq(1, t_len, 25, 3);
      for (std::size_t t = 0; t < t_len; ++t) {
        const double s = std::clamp(static_cast<double>(t) / static_cast<double>(t_len - 1) * speed + offset, 0.0, 1.0);
        const Pose pose = motion_pose(cls, s, amplitude);
        for (std::size_t v = 0; v < 25; ++v) {
          const Vec3 q = centre + turn * (pose[v] - centre) + shift;
          for (std::size_t c = 0; c < 3; ++c) seq.at(0, t, v, c) = q[c] + sigma * gauss(rng);
        }
      }
      seq.label = static_cast<std::int64_t>(cls);
      seq.valid_frames = t_len;
      seq.source_id = std::string(synthetic_motion_name(cls)) + "/" + std::to_string(i);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loop

std::vector<std::size_t> sample_labels(const std::vector<SkeletonSequence>& samples, std::size_t num_classes) {
  std::vector<std::size_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw ConfigError("sample '" + s.source_id + "' has label " + std::to_string(s.label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
    labels.push_back(static_cast<std::size_t>(s.label));
  }
  return labels;
}

namespace {

BatchOptions batch_options(const Model& model, std::size_t max_frames, Augment augment) {
  BatchOptions opt;
  opt.max_frames = max_frames;
  opt.max_persons = model.config().num_persons;
  opt.augment = augment;
  return opt;
}

}  // namespace

Tensor predict_scores(Model& model, const std::vector<SkeletonSequence>& samples, StreamKind stream,
                      std::size_t batch_size, std::size_t max_frames, DisableBranch disable) {
  if (samples.empty()) throw ConfigError("cannot score an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  NoGradGuard no_grad;
  const std::size_t k = model.config().num_classes;
  Tensor scores({samples.size(), k});
  const auto opt = batch_options(model, max_frames, Augment::none);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const SkeletonSequence*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const Tensor x = assemble_batch(batch, stream, model.graph(), opt);
    const Var probs = model.forward(Var(x), Mode::eval, disable);
    std::copy(probs.value().data().begin(), probs.value().data().end(), scores.data().begin() + start * k);
  }
  return scores;
}

namespace {

double top1_of(const Tensor& scores, const std::vector<std::size_t>& labels) {
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = scores.data().data() + i * k;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

TrainResult train(Model& model, const std::vector<SkeletonSequence>& train_set,
                  const std::vector<SkeletonSequence>* val_set, const TrainConfig& cfg, const TrainCallbacks& callbacks,
                  const TrainingState* resume) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  const std::size_t k = model.config().num_classes;
  const auto labels = sample_labels(train_set, k);
  std::vector<std::size_t> val_labels;
  if (val_set) val_labels = sample_labels(*val_set, k);

  auto params = model.parameters().params;
  Sgd sgd(cfg.momentum, cfg.weight_decay, cfg.nesterov);
  TrainResult result;
  std::size_t first_epoch = 0;
  if (resume) {
    first_epoch = resume->epoch;
    sgd.velocities() = resume->momentum;
  }
  const auto opt = batch_options(model, cfg.max_frames, cfg.augment);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 epoch_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + epoch);
    std::shuffle(order.begin(), order.end(), epoch_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.train_batch) {
      const std::size_t end = std::min(order.size(), start + cfg.train_batch);
      std::vector<const SkeletonSequence*> batch;
      std::vector<std::size_t> batch_labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&train_set[order[i]]);
        batch_labels.push_back(labels[order[i]]);
      }
      const Tensor x = assemble_batch(batch, cfg.stream, model.graph(), opt, &epoch_rng);
      zero_grads(params);
      const Var logits = model.forward(Var(x), Mode::train);
      const Var loss = cross_entropy(logits, batch_labels);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(start / cfg.train_batch));
      }
      backward(loss);
      sgd.step(params, lr);

      loss_sum += value * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double* row = logits.value().data().data() + i * k;
        if (static_cast<std::size_t>(std::max_element(row, row + k) - row) == batch_labels[i]) ++correct;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_top1 = static_cast<double>(correct) / static_cast<double>(order.size());
    rec.val_top1 = std::numeric_limits<double>::quiet_NaN();
    if (val_set && !val_set->empty()) {
      rec.val_top1 = top1_of(predict_scores(model, *val_set, cfg.stream, cfg.eval_batch, cfg.max_frames), val_labels);
    }
    result.history.push_back(rec);
    result.state.epoch = epoch + 1;
    result.state.momentum = sgd.velocities();
    if (callbacks.on_epoch) callbacks.on_epoch(rec, model);
  }
  if (result.history.empty() && resume) result.state = *resume;
  return result;
}

double model_grad_check(ModelConfig cfg, std::uint64_t seed, std::size_t batch, std::size_t frames,
                        std::size_t max_per_param) {
  cfg.dropout = 0.0;
  cfg.seed = seed;
  Model model(cfg);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.num_classes - 1);

  Tensor x({batch, cfg.num_persons, cfg.in_channels, frames, model.graph().num_joints()});
  for (auto& v : x.data()) v = gauss(rng);
  std::vector<std::size_t> labels(batch);
  for (auto& l : labels) l = pick(rng);

  auto list = model.parameters();
  std::vector<Var> params;
  for (auto& p : list.params) {
    if (p.kind == ParamKind::alpha) p.var.mutable_value()[0] = 0.5 * gauss(rng);
    params.push_back(p.var);
  }
  const Var input(x);
  auto loss = [&] { return cross_entropy(model.forward(input, Mode::train), labels); };
  return grad_check_params(loss, params, 1e-5, max_per_param);
}

namespace {

void write_row(std::ostream& out, const EpochRecord& r) {
  out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.train_top1 << ',';
  if (std::isnan(r.val_top1)) {
    out << "nan";
  } else {
    out << r.val_top1;
  }
  out << '\n';
}

constexpr const char* kHistoryHeader = "epoch,lr,train_loss,train_top1,val_top1\n";

}  // namespace

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write history " + path);
  out.precision(17);
  out << kHistoryHeader;
  for (const auto& r : history) write_row(out, r);
}

void append_history_row(const std::string& path, const EpochRecord& rec) {
  const bool fresh = !std::ifstream(path).good();
  std::ofstream out(path, std::ios::app);
  if (!out) throw FormatError("cannot append to history " + path);
  out.precision(17);
  if (fresh) out << kHistoryHeader;
  write_row(out, rec);
}

}  // namespace hagcn
