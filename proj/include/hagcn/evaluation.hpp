#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hagcn/training.hpp"

namespace hagcn {

// Fraction of rows whose label is among the k highest scores. Equal scores
// rank the lower class index first.
double topk_accuracy(const Tensor& scores, const std::vector<std::size_t>& labels, std::size_t k);

// Index of the highest score per row, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

// (acc_j - base_j) / (acc_b - base_b); throws NumericError on a zero denominator.
double improvement_ratio(double acc_j, double base_j, double acc_b, double base_b);

// Weighted sum of per-stream score matrices; weights default to 1.
Tensor fuse_streams(const std::vector<Tensor>& scores, const std::vector<double>& weights = {});

struct AblationResult {
  DisableBranch disable = DisableBranch::none;
  double top1 = 0.0;
  double top5 = 0.0;
  std::size_t changed = 0;  // predictions differing from disable=none
};

struct EvalReport {
  std::size_t samples = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::map<std::string, double> stream_top1;
  std::vector<AblationResult> ablations;
  std::map<std::string, double> ratios;
};

nlohmann::json eval_report_to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
void write_eval_report(const std::string& path, const EvalReport& r);

struct EvalOptions {
  StreamKind stream = StreamKind::joint;
  std::size_t batch_size = 128;
  std::size_t max_frames = 300;
};

// Plain evaluation with disable=none.
EvalReport evaluate(Model& model, const std::vector<SkeletonSequence>& samples, const EvalOptions& opt);

// Same parameters evaluated with disable = none, ra and rd.
EvalReport ablation_eval(Model& model, const std::vector<SkeletonSequence>& samples, const EvalOptions& opt);

// Score matrices as text: "rows cols" then one row of reals per line.
void write_scores(const std::string& path, const Tensor& scores, const std::vector<std::size_t>& labels);
struct ScoreFile {
  Tensor scores;
  std::vector<std::size_t> labels;
};
ScoreFile read_scores(const std::string& path);

// Channel-mean V x V view of a captured (N, C, V, V) mask, sample 0.
Tensor channel_mean_mask(const Tensor& mask);

struct ExportedMask {
  std::string subset;
  std::string kind;  // rd, ra, hybrid, final
  Tensor matrix;     // V x V
  std::string csv_path;
  std::string pgm_path;
};

// Runs one (1, M, C, T, V) sample through the model and writes the masks of
// block `layer` as CSV and binary PGM files named <stem>_<subset>_<kind>.
// Masks of absent branches are skipped. `subset` limits the export to one subset.
std::vector<ExportedMask> export_masks(Model& model, const Tensor& sample, std::size_t layer,
                                       const std::string& out_dir, const std::string& stem = "mask",
                                       std::optional<Subset> subset = std::nullopt);

void write_matrix_csv(const std::string& path, const Tensor& m);
Tensor read_matrix_csv(const std::string& path);
// 8-bit grayscale, min-max scaled; a constant matrix maps to 0.
void write_pgm(const std::string& path, const Tensor& m);

}  // namespace hagcn
