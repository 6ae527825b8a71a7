#include "hagcn/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hagcn/errors.hpp"

namespace hagcn {

namespace {

void check_scores(const Tensor& scores, std::size_t n_labels) {
  if (scores.rank() != 2) throw ShapeError("scores must be (N, K), got " + shape_str(scores.shape()));
  if (scores.dim(0) != n_labels) {
    throw ShapeError("scores have " + std::to_string(scores.dim(0)) + " rows for " + std::to_string(n_labels) +
                     " labels");
  }
}

std::string format_real(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_real(std::string_view s, const std::string& what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(what + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

double topk_accuracy(const Tensor& scores, const std::vector<std::size_t>& labels, std::size_t k) {
  check_scores(scores, labels.size());
  if (labels.empty()) throw ConfigError("top-k accuracy of an empty set");
  const std::size_t n = scores.dim(0), classes = scores.dim(1);
  if (k == 0) throw ConfigError("k must be positive");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) throw ConfigError("label " + std::to_string(labels[i]) + " out of range");
    const double* row = scores.ptr() + i * classes;
    const double target = row[labels[i]];
    // Rank of the label: classes scoring higher, or equal with a lower index.
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (row[c] > target || (row[c] == target && c < labels[i])) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw ShapeError("scores must be (N, K), got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = scores.ptr() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

double improvement_ratio(double acc_j, double base_j, double acc_b, double base_b) {
  const double den = acc_b - base_b;
  if (den == 0.0) throw NumericError("improvement ratio undefined: bone-stream accuracy did not change");
  return (acc_j - base_j) / den;
}

Tensor fuse_streams(const std::vector<Tensor>& scores, const std::vector<double>& weights) {
  if (scores.empty()) throw ConfigError("no score sets to fuse");
  if (!weights.empty() && weights.size() != scores.size()) {
    throw ConfigError(std::to_string(weights.size()) + " fusion weights for " + std::to_string(scores.size()) +
                      " streams");
  }
  Tensor out = Tensor::zeros(scores[0].shape());
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (scores[s].shape() != out.shape()) {
      throw ShapeError("stream " + std::to_string(s) + " scores " + shape_str(scores[s].shape()) + " differ from " +
                       shape_str(out.shape()));
    }
    const double w = weights.empty() ? 1.0 : weights[s];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += w * scores[s][i];
  }
  return out;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json abl = nlohmann::json::array();
  for (const auto& a : r.ablations) {
    abl.push_back({{"disable", disable_name(a.disable)}, {"top1", a.top1}, {"top5", a.top5}, {"changed", a.changed}});
  }
  return {{"samples", r.samples}, {"top1", r.top1},     {"top5", r.top5},
          {"streams", r.stream_top1}, {"ablations", abl}, {"ratios", r.ratios}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.samples = j.at("samples").get<std::size_t>();
    r.top1 = j.at("top1").get<double>();
    r.top5 = j.at("top5").get<double>();
    r.stream_top1 = j.at("streams").get<std::map<std::string, double>>();
    r.ratios = j.at("ratios").get<std::map<std::string, double>>();
    for (const auto& a : j.at("ablations")) {
      r.ablations.push_back({parse_disable(a.at("disable").get<std::string>()), a.at("top1").get<double>(),
                             a.at("top5").get<double>(), a.at("changed").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
  return r;
}

void write_eval_report(const std::string& path, const EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write report " + path);
  out << eval_report_to_json(r).dump(2) << '\n';
}

EvalReport evaluate(Model& model, const std::vector<SkeletonSequence>& samples, const EvalOptions& opt) {
  const auto labels = sample_labels(samples, model.config().num_classes);
  const Tensor scores = predict_scores(model, samples, opt.stream, opt.batch_size, opt.max_frames);
  EvalReport r;
  r.samples = samples.size();
  r.top1 = topk_accuracy(scores, labels, 1);
  r.top5 = topk_accuracy(scores, labels, std::min<std::size_t>(5, scores.dim(1)));
  r.stream_top1[stream_name(opt.stream)] = r.top1;
  return r;
}

EvalReport ablation_eval(Model& model, const std::vector<SkeletonSequence>& samples, const EvalOptions& opt) {
  const auto labels = sample_labels(samples, model.config().num_classes);
  const std::size_t k5 = std::min<std::size_t>(5, model.config().num_classes);
  EvalReport r;
  r.samples = samples.size();
  std::vector<std::size_t> reference;
  for (auto d : {DisableBranch::none, DisableBranch::ra, DisableBranch::rd}) {
    const Tensor scores = predict_scores(model, samples, opt.stream, opt.batch_size, opt.max_frames, d);
    const auto pred = argmax_rows(scores);
    AblationResult a;
    a.disable = d;
    a.top1 = topk_accuracy(scores, labels, 1);
    a.top5 = topk_accuracy(scores, labels, k5);
    if (d == DisableBranch::none) {
      reference = pred;
      r.top1 = a.top1;
      r.top5 = a.top5;
    } else {
      for (std::size_t i = 0; i < pred.size(); ++i) a.changed += pred[i] != reference[i];
    }
    r.ablations.push_back(a);
  }
  r.stream_top1[stream_name(opt.stream)] = r.top1;
  return r;
}

void write_scores(const std::string& path, const Tensor& scores, const std::vector<std::size_t>& labels) {
  check_scores(scores, labels.size());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write scores " + path);
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  out << n << ' ' << k << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << labels[i];
    for (std::size_t c = 0; c < k; ++c) out << ' ' << format_real(scores[i * k + c]);
    out << '\n';
  }
}

ScoreFile read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scores " + path);
  std::size_t n = 0, k = 0;
  if (!(in >> n >> k) || n == 0 || k == 0) throw FormatError(path + ": bad score header");
  ScoreFile f{Tensor({n, k}), std::vector<std::size_t>(n)};
  std::string tok;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> f.labels[i])) throw FormatError(path + ": missing label on row " + std::to_string(i));
    for (std::size_t c = 0; c < k; ++c) {
      if (!(in >> tok)) throw FormatError(path + ": truncated row " + std::to_string(i));
      f.scores[i * k + c] = parse_real(tok, path);
    }
  }
  if (in >> tok) throw FormatError(path + ": trailing data");
  return f;
}

Tensor channel_mean_mask(const Tensor& mask) {
  if (mask.rank() != 4 || mask.dim(2) != mask.dim(3)) {
    throw ShapeError("expected an (N, C, V, V) mask, got " + shape_str(mask.shape()));
  }
  const std::size_t c = mask.dim(1), v = mask.dim(2);
  Tensor out({v, v});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t i = 0; i < v * v; ++i) out[i] += mask[ci * v * v + i];
  }
  for (auto& x : out.data()) x /= static_cast<double>(c);
  return out;
}

void write_matrix_csv(const std::string& path, const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("CSV export needs a matrix, got " + shape_str(m.shape()));
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) {
      if (j) out << ',';
      out << format_real(m[i * m.dim(1) + j]);
    }
    out << '\n';
  }
}

Tensor read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t count = 0;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      values.push_back(parse_real(rest.substr(0, comma), path));
      ++count;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (rows == 0) cols = count;
    if (count != cols) throw FormatError(path + ": ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0) throw FormatError(path + ": empty matrix");
  return Tensor({rows, cols}, std::move(values));
}

void write_pgm(const std::string& path, const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("PGM export needs a matrix, got " + shape_str(m.shape()));
  const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
  const double min = *lo, range = *hi - *lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "P5\n" << m.dim(1) << ' ' << m.dim(0) << "\n255\n";
  for (double x : m.data()) {
    const double level = range > 0.0 ? std::round((x - min) / range * 255.0) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(level)));
  }
}

std::vector<ExportedMask> export_masks(Model& model, const Tensor& sample, std::size_t layer,
                                       const std::string& out_dir, const std::string& stem,
                                       std::optional<Subset> subset) {
  if (layer >= model.blocks().size()) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range; model has " +
                      std::to_string(model.blocks().size()) + " blocks");
  }
  if (sample.rank() != 5 || sample.dim(0) != 1) {
    throw ShapeError("mask export expects one (1, M, C, T, V) sample, got " + shape_str(sample.shape()));
  }
  MaskCapture capture;
  {
    NoGradGuard no_grad;
    model.forward(Var(sample), Mode::eval, DisableBranch::none, &capture, layer);
  }
  std::filesystem::create_directories(out_dir);
  std::vector<ExportedMask> out;
  for (auto s : kSubsets) {
    if (subset && *subset != s) continue;
    const auto& set = capture[static_cast<std::size_t>(s)];
    const std::pair<const char*, const Tensor*> kinds[] = {
        {"rd", &set.rd}, {"ra", &set.ra}, {"hybrid", &set.hybrid}, {"final", &set.final}};
    for (const auto& [kind, mask] : kinds) {
      if (mask->empty()) continue;
      ExportedMask e;
      e.subset = subset_name(s);
      e.kind = kind;
      // The captured masks cover the folded persons; person 0 is sample 0.
      e.matrix = channel_mean_mask(*mask);
      const auto base = (std::filesystem::path(out_dir) / (stem + "_" + e.subset + "_" + e.kind)).string();
      e.csv_path = base + ".csv";
      e.pgm_path = base + ".pgm";
      write_matrix_csv(e.csv_path, e.matrix);
      write_pgm(e.pgm_path, e.matrix);
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace hagcn
