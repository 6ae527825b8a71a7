#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "hagcn/ingest.hpp"
#include "hagcn/network.hpp"

namespace hagcn {

struct TrainConfig {
  double base_lr = 0.1;
  double lr_decay = 0.1;
  std::vector<std::size_t> decay_epochs = {60, 90};
  std::size_t epochs = 120;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  std::size_t train_batch = 16;
  std::size_t eval_batch = 128;
  std::uint64_t seed = 1;
  StreamKind stream = StreamKind::joint;
  std::size_t max_frames = 300;
  Augment augment = Augment::none;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

double lr_at(const TrainConfig& cfg, std::size_t epoch);

// One SGD step on a single tensor. Weight decay enters as wd * p added to the
// gradient; with Nesterov: v <- mu v + g, p <- p - lr (g + mu v), otherwise
// p <- p - lr v.
void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay,
                bool nesterov = true);

class Sgd {
 public:
  Sgd(double momentum, double weight_decay, bool nesterov = true)
      : momentum_(momentum), weight_decay_(weight_decay), nesterov_(nesterov) {}

  // Parameters without a gradient are skipped. Norm parameters and attention
  // weights alpha get no weight decay.
  void step(const std::vector<ParamRef>& params, double lr);

  std::map<std::string, Tensor>& velocities() { return velocity_; }
  const std::map<std::string, Tensor>& velocities() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  bool nesterov_;
  std::map<std::string, Tensor> velocity_;
};

void zero_grads(const std::vector<ParamRef>& params);

// Parametric motions on the NTU 25-joint skeleton, one per class, with
// per-sample amplitude, timing and placement jitter plus coordinate noise.
// Every random perturbation scales with `noise`.
struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 50;
  std::size_t frames = 64;
  double noise = 0.02;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

inline constexpr std::size_t kSyntheticMotions = 8;
const char* synthetic_motion_name(std::size_t cls);

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// Samples are ordered by class, then by index within the class.
std::vector<SkeletonSequence> make_synthetic(const SyntheticSpec& spec);

// Softmax scores (N, K) for every sample, batched, without recording a graph.
Tensor predict_scores(Model& model, const std::vector<SkeletonSequence>& samples, StreamKind stream,
                      std::size_t batch_size, std::size_t max_frames, DisableBranch disable = DisableBranch::none);

std::vector<std::size_t> sample_labels(const std::vector<SkeletonSequence>& samples, std::size_t num_classes);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double val_top1 = 0.0;  // NaN without a validation set
};

struct TrainCallbacks {
  std::function<void(const EpochRecord&, Model&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  TrainingState state;
};

// Sequential reference loop: per-epoch shuffle from the seed, SGD with the
// configured schedule. Throws NumericError when the loss turns non-finite.
// `resume` continues from a saved epoch and optimizer state.
TrainResult train(Model& model, const std::vector<SkeletonSequence>& train_set,
                  const std::vector<SkeletonSequence>* val_set, const TrainConfig& cfg,
                  const TrainCallbacks& callbacks = {}, const TrainingState* resume = nullptr);

// Finite-difference check of the whole model: random (batch, M, C, frames, V)
// input and labels from `seed`, dropout off, attention weights alpha set to
// nonzero values so every branch carries gradient. Returns the max relative
// error over all parameter entries (at most `max_per_param` each when nonzero).
double model_grad_check(ModelConfig cfg, std::uint64_t seed, std::size_t batch = 2, std::size_t frames = 6,
                        std::size_t max_per_param = 0);

// Header "epoch,lr,train_loss,train_top1,val_top1" then one row per epoch.
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);
void append_history_row(const std::string& path, const EpochRecord& rec);

}  // namespace hagcn
