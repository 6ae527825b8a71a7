// hagcn: dataset preparation, training, evaluation and inspection of
// hybrid-attention skeleton models.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hagcn/errors.hpp"
#include "hagcn/evaluation.hpp"
#include "hagcn/ingest.hpp"
#include "hagcn/network.hpp"
#include "hagcn/parallel.hpp"
#include "hagcn/run_config.hpp"
#include "hagcn/training.hpp"

namespace fs = std::filesystem;
using namespace hagcn;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string stream;
  std::string out = ".";
};

// flags > file > defaults
RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  if (!c.stream.empty()) cfg.train.stream = parse_stream(c.stream);
  return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool with_stream = true) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Seed for model, training and synthetic data");
  if (with_stream) cmd->add_option("--stream", c.stream, "joint, bone, joint-motion or bone-motion");
  cmd->add_option("--out", c.out, "Output directory");
}

std::string out_file(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

void print_report(const EvalReport& r) {
  std::printf("samples %zu top1 %.4f top5 %.4f\n", r.samples, r.top1, r.top5);
  for (const auto& a : r.ablations) {
    std::printf("disable=%s top1 %.4f top5 %.4f changed %zu\n", disable_name(a.disable).c_str(), a.top1, a.top5,
                a.changed);
  }
}

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"Hybrid-attention graph convolution for skeleton action recognition"};
  app.require_subcommand(1);

  // prepare
  Common prep;
  std::string manifest;
  std::string prep_name = "dataset.hagd";
  auto* prepare = app.add_subcommand("prepare", "Parse raw skeleton files listed in a manifest into a dataset cache");
  add_common(prepare, prep, false);
  prepare->add_option("--manifest", manifest, "Lines of '<file> <label>'")->required();
  prepare->add_option("--name", prep_name, "Cache file name inside --out");

  // synth
  Common syn;
  std::size_t val_per_class = 20;
  auto* synth = app.add_subcommand("synth", "Write synthetic train/val dataset caches");
  add_common(synth, syn, false);
  synth->add_option("--val-per-class", val_per_class, "Validation samples per class (0 to skip)");

  // train
  Common tr;
  std::string train_data, val_data, resume_path;
  std::optional<std::size_t> epochs;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes config.json, history.csv and checkpoints");
  add_common(train_cmd, tr);
  train_cmd->add_option("--train", train_data, "Training dataset cache (default: config data.train)");
  train_cmd->add_option("--val", val_data, "Validation dataset cache (default: config data.val)");
  train_cmd->add_option("--epochs", epochs, "Override the epoch count");
  train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint");

  // eval / ablate
  Common ev, ab;
  std::string ev_ckpt, ev_data, ab_ckpt, ab_data, ev_disable;
  std::size_t ev_frames = 300, ab_frames = 300;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.json and scores.txt");
  add_common(eval_cmd, ev);
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
  eval_cmd->add_option("--data", ev_data)->required();
  eval_cmd->add_option("--disable", ev_disable, "Switch off the ra or rd branch");
  eval_cmd->add_option("--max-frames", ev_frames);
  auto* ablate = app.add_subcommand("ablate", "Evaluate with each attention branch switched off; writes report.json");
  add_common(ablate, ab);
  ablate->add_option("--checkpoint", ab_ckpt)->required();
  ablate->add_option("--data", ab_data)->required();
  ablate->add_option("--max-frames", ab_frames);

  // fuse
  Common fu;
  std::vector<std::string> score_files;
  std::vector<double> weights;
  auto* fuse = app.add_subcommand("fuse", "Combine saved per-stream score files; writes fused.txt and report.json");
  add_common(fuse, fu, false);
  fuse->add_option("--scores", score_files, "Score files from eval")->required();
  fuse->add_option("--weights", weights, "One weight per score file (default 1)");

  // gradcheck
  Common gc;
  std::string gc_preset = "tiny";
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the model gradients");
  add_common(gradcheck, gc, false);
  gradcheck->add_option("--preset", gc_preset, "tiny or ntu (ignored with --config)");
  gradcheck->add_option("--tolerance", gc_tol);

  // params
  Common pa;
  std::string pa_preset = "ntu";
  auto* params = app.add_subcommand("params", "Print the learnable scalar count");
  add_common(params, pa, false);
  params->add_option("--preset", pa_preset, "ntu or tiny (ignored with --config)");

  // export-mask
  Common em;
  std::string em_ckpt, em_data, em_subset;
  std::size_t em_layer = 0, em_index = 0, em_frames = 300;
  auto* export_mask = app.add_subcommand("export-mask", "Write attention masks of one layer as CSV and PGM");
  add_common(export_mask, em);
  export_mask->add_option("--checkpoint", em_ckpt)->required();
  export_mask->add_option("--data", em_data)->required();
  export_mask->add_option("--layer", em_layer, "Block index, 0-based");
  export_mask->add_option("--index", em_index, "Sample index in the dataset");
  export_mask->add_option("--subset", em_subset, "identity, inward or outward (default all)");
  export_mask->add_option("--max-frames", em_frames);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*prepare) {
      std::vector<SkeletonSequence> samples;
      for (const auto& entry : read_manifest(manifest)) {
        auto seq = load_skeleton_file(entry.path);
        seq.label = entry.label;
        seq.source_id = entry.path;
        samples.push_back(std::move(seq));
      }
      const auto path = out_file(prep, prep_name);
      write_dataset(path, samples);
      std::printf("wrote %zu samples to %s\n", samples.size(), path.c_str());
    } else if (*synth) {
      RunConfig cfg = resolve(syn);
      echo_run_config(cfg, syn.out);
      const auto train_set = make_synthetic(cfg.synthetic);
      write_dataset(out_file(syn, "train.hagd"), train_set);
      std::size_t n_val = 0;
      if (val_per_class > 0) {
        SyntheticSpec vs = cfg.synthetic;
        vs.samples_per_class = val_per_class;
        vs.seed = cfg.synthetic.seed + 1;
        const auto val_set = make_synthetic(vs);
        write_dataset(out_file(syn, "val.hagd"), val_set);
        n_val = val_set.size();
      }
      std::printf("wrote %zu train and %zu val samples to %s\n", train_set.size(), n_val, syn.out.c_str());
    } else if (*train_cmd) {
      RunConfig cfg = resolve(tr);
      if (!train_data.empty()) cfg.train_data = train_data;
      if (!val_data.empty()) cfg.val_data = val_data;
      if (epochs) cfg.train.epochs = *epochs;
      cfg.train.validate();
      if (cfg.train_data.empty()) throw ConfigError("no training data: pass --train or set data.train");
      echo_run_config(cfg, tr.out);

      const auto train_set = read_dataset(cfg.train_data);
      std::vector<SkeletonSequence> val_set;
      if (!cfg.val_data.empty()) val_set = read_dataset(cfg.val_data);

      std::optional<LoadedCheckpoint> resumed;
      if (!resume_path.empty()) {
        resumed.emplace(load_checkpoint(resume_path));
        if (!(resumed->model.config() == cfg.model)) throw ConfigError("checkpoint model differs from the config");
      }
      Model fresh(resumed ? resumed->model.config() : cfg.model);
      Model& model = resumed ? resumed->model : fresh;

      const auto history_path = out_file(tr, "history.csv");
      if (!resumed) fs::remove(history_path);
      const auto last_path = out_file(tr, "last.hagc");
      TrainCallbacks cb;
      cb.on_epoch = [&](const EpochRecord& rec, Model&) {
        append_history_row(history_path, rec);
        std::printf("epoch %zu lr %g loss %.5f train %.4f val %.4f\n", rec.epoch, rec.lr, rec.train_loss,
                    rec.train_top1, rec.val_top1);
        std::fflush(stdout);
      };
      auto result = train(model, train_set, val_set.empty() ? nullptr : &val_set, cfg.train, cb,
                          resumed ? &resumed->state : nullptr);
      save_checkpoint(model, last_path, &result.state);
      save_checkpoint(model, out_file(tr, "model.hagc"));
      std::printf("wrote %s\n", last_path.c_str());
    } else if (*eval_cmd || *ablate) {
      const bool is_ablate = static_cast<bool>(*ablate);
      Common& c = is_ablate ? ab : ev;
      RunConfig cfg = resolve(c);
      auto ck = load_checkpoint(is_ablate ? ab_ckpt : ev_ckpt);
      const auto samples = read_dataset(is_ablate ? ab_data : ev_data);
      EvalOptions opt;
      opt.stream = cfg.train.stream;
      opt.batch_size = cfg.train.eval_batch;
      opt.max_frames = is_ablate ? ab_frames : ev_frames;
      EvalReport report;
      if (is_ablate) {
        report = ablation_eval(ck.model, samples, opt);
      } else {
        const auto disable = parse_disable(ev_disable);
        const auto labels = sample_labels(samples, ck.model.config().num_classes);
        const Tensor scores = predict_scores(ck.model, samples, opt.stream, opt.batch_size, opt.max_frames, disable);
        report.samples = samples.size();
        report.top1 = topk_accuracy(scores, labels, 1);
        report.top5 = topk_accuracy(scores, labels, std::min<std::size_t>(5, scores.dim(1)));
        report.stream_top1[stream_name(opt.stream)] = report.top1;
        write_scores(out_file(c, "scores.txt"), scores, labels);
      }
      write_eval_report(out_file(c, "report.json"), report);
      print_report(report);
    } else if (*fuse) {
      std::vector<Tensor> sets;
      std::vector<std::size_t> labels;
      for (const auto& f : score_files) {
        auto s = read_scores(f);
        if (!labels.empty() && s.labels != labels) throw ConfigError("score files disagree on labels: " + f);
        labels = s.labels;
        sets.push_back(std::move(s.scores));
      }
      const Tensor fused = fuse_streams(sets, weights);
      EvalReport report;
      report.samples = labels.size();
      report.top1 = topk_accuracy(fused, labels, 1);
      report.top5 = topk_accuracy(fused, labels, std::min<std::size_t>(5, fused.dim(1)));
      for (std::size_t i = 0; i < sets.size(); ++i) {
        report.stream_top1[fs::path(score_files[i]).string()] = topk_accuracy(sets[i], labels, 1);
      }
      write_scores(out_file(fu, "fused.txt"), fused, labels);
      write_eval_report(out_file(fu, "report.json"), report);
      print_report(report);
    } else if (*gradcheck) {
      ModelConfig mc = gc.config.empty() ? (gc_preset == "ntu" ? ModelConfig::ntu() : ModelConfig::tiny())
                                         : resolve(gc).model;
      if (gc.config.empty() && gc_preset != "ntu" && gc_preset != "tiny") {
        throw ConfigError("unknown preset '" + gc_preset + "'");
      }
      const std::uint64_t seed = gc.seed.value_or(mc.seed);
      const double err = model_grad_check(mc, seed, 2, 6, gc.config.empty() && gc_preset == "tiny" ? 0 : 4);
      std::printf("max relative error %.3e\n", err);
      if (!(err <= gc_tol)) {
        std::cerr << "error: gradcheck: max relative error " << err << " exceeds " << gc_tol << '\n';
        return kExitRuntime;
      }
    } else if (*params) {
      ModelConfig mc;
      if (!pa.config.empty()) {
        mc = resolve(pa).model;
      } else if (pa_preset == "ntu") {
        mc = ModelConfig::ntu();
      } else if (pa_preset == "tiny") {
        mc = ModelConfig::tiny();
      } else {
        throw ConfigError("unknown preset '" + pa_preset + "'");
      }
      Model model(mc);
      std::printf("%zu\n", model.param_count());
    } else if (*export_mask) {
      RunConfig cfg = resolve(em);
      auto ck = load_checkpoint(em_ckpt);
      const auto samples = read_dataset(em_data);
      if (em_index >= samples.size()) {
        throw ConfigError("sample index " + std::to_string(em_index) + " out of range for " +
                          std::to_string(samples.size()) + " samples");
      }
      std::optional<Subset> subset;
      if (!em_subset.empty()) {
        bool found = false;
        for (auto s : kSubsets) {
          if (em_subset == subset_name(s)) {
            subset = s;
            found = true;
          }
        }
        if (!found) throw ConfigError("unknown subset '" + em_subset + "'");
      }
      BatchOptions bo;
      bo.max_frames = em_frames;
      bo.max_persons = ck.model.config().num_persons;
      const Tensor x = assemble_batch({&samples[em_index]}, cfg.train.stream, ck.model.graph(), bo);
      const auto files = export_masks(ck.model, x, em_layer, em.out, "layer" + std::to_string(em_layer), subset);
      for (const auto& f : files) std::printf("%s\n%s\n", f.csv_path.c_str(), f.pgm_path.c_str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
