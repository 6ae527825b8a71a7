#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "hagcn/errors.hpp"
#include "hagcn/training.hpp"
#include "support.hpp"

using namespace hagcn;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.num_classes = 4;
  cfg.num_persons = 1;
  cfg.channels = {8, 8};
  cfg.strides = {1, 2};
  cfg.dropout = 0.0;
  return cfg;
}

SyntheticSpec small_data(std::uint64_t seed = 7) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.samples_per_class = 4;
  s.frames = 12;
  s.seed = seed;
  return s;
}

TrainConfig short_run(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.base_lr = 0.05;
  t.decay_epochs = {};
  t.train_batch = 4;
  t.max_frames = 12;
  return t;
}

std::vector<Tensor> snapshot(Model& m) {
  std::vector<Tensor> out;
  for (const auto& p : m.parameters().params) out.push_back(p.var.value());
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hagcn_training_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  CHECK(lr_at(cfg, 0) == 0.1);
  CHECK(lr_at(cfg, 59) == 0.1);
  CHECK(lr_at(cfg, 60) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_at(cfg, 89) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_at(cfg, 90) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at(cfg, 119) == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("SGD follows the momentum recurrences") {
  std::mt19937_64 rng(81);
  const double lr = 0.1, mu = 0.9, wd = 0.01;
  for (bool nesterov : {true, false}) {
    Tensor p = testing::random_tensor({5}, rng);
    Tensor v;
    std::vector<double> ref_p(p.data().begin(), p.data().end()), ref_v(5, 0.0);
    for (int step = 0; step < 4; ++step) {
      const Tensor g = testing::random_tensor({5}, rng);
      sgd_update(p, g, v, lr, mu, wd, nesterov);
      for (std::size_t i = 0; i < 5; ++i) {
        const double gi = g[i] + wd * ref_p[i];
        ref_v[i] = mu * ref_v[i] + gi;
        ref_p[i] -= nesterov ? lr * (gi + mu * ref_v[i]) : lr * ref_v[i];
      }
    }
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(p[i] == doctest::Approx(ref_p[i]).epsilon(1e-14));
      CHECK(v[i] == doctest::Approx(ref_v[i]).epsilon(1e-14));
    }
  }
  // Hand-computed first step: p = 1, g = 0.5.
  Tensor p({1}, 1.0), v;
  sgd_update(p, Tensor({1}, 0.5), v, lr, mu, wd);
  CHECK(v[0] == doctest::Approx(0.51));
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * (0.51 + 0.9 * 0.51)));
  Tensor q({2});
  CHECK_THROWS_AS(sgd_update(q, Tensor({3}), v, lr, mu, wd), ShapeError);
}

TEST_CASE("weight decay skips norm and attention-weight parameters") {
  std::vector<ParamRef> params;
  for (auto kind : {ParamKind::weight, ParamKind::bias, ParamKind::norm, ParamKind::alpha}) {
    params.push_back({"p" + std::to_string(params.size()), Var(Tensor({2}, 1.0), true), kind});
  }
  Var total;
  for (auto& p : params) {
    Var z = sum(mul(p.var, Var(Tensor::zeros({2}))));
    total = total.defined() ? add(total, z) : z;
  }
  backward(total);
  Sgd sgd(0.0, 0.5, false);
  sgd.step(params, 1.0);
  CHECK(params[0].var.value()[0] == 0.5);
  CHECK(params[1].var.value()[0] == 0.5);
  CHECK(params[2].var.value()[0] == 1.0);
  CHECK(params[3].var.value()[0] == 1.0);
  CHECK(sgd.velocities().size() == 4);
  zero_grads(params);
  for (auto& p : params) CHECK(p.var.grad() == Tensor::zeros({2}));
}

TEST_CASE("a zero classifier starts at ln K") {
  Model m(small_model());
  auto list = m.parameters();
  for (auto& p : list.params)
    if (p.path.starts_with("fc.")) p.var.mutable_value().fill(0.0);
  const auto data = make_synthetic(small_data());
  const Tensor x = assemble_batch(data, StreamKind::joint, m.graph(), {12, 1});
  const double loss = cross_entropy(m.forward(Var(x), Mode::train), sample_labels(data, 4)).value().item();
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("synthetic motions") {
  const auto a = make_synthetic(small_data());
  const auto b = make_synthetic(small_data());
  REQUIRE(a.size() == 16);
  CHECK(a == b);
  CHECK(!(make_synthetic(small_data(8)) == a));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == static_cast<std::int64_t>(i / 4));
    CHECK(a[i].persons == 1);
    CHECK(a[i].frames == 12);
    CHECK(a[i].joints == 25);
    for (double v : a[i].coords) CHECK(std::isfinite(v));
  }
  SyntheticSpec clean = small_data();
  clean.noise = 0.0;
  clean.num_classes = kSyntheticMotions;
  const auto c = make_synthetic(clean);
  std::set<std::vector<double>> distinct;
  for (std::size_t cls = 0; cls < kSyntheticMotions; ++cls) {
    for (std::size_t i = 1; i < 4; ++i) CHECK(c[cls * 4 + i].coords == c[cls * 4].coords);
    distinct.insert(c[cls * 4].coords);
  }
  CHECK(distinct.size() == kSyntheticMotions);

  SyntheticSpec bad = small_data();
  bad.num_classes = kSyntheticMotions + 1;
  CHECK_THROWS_AS(make_synthetic(bad), ConfigError);
  CHECK(synthetic_spec_from_json(synthetic_spec_to_json(clean)) == clean);
}

TEST_CASE("repeated steps on one batch lower its loss") {
  auto cfg = ModelConfig::tiny();
  cfg.dropout = 0.0;
  Model m(cfg);
  std::mt19937_64 rng(82);
  const Var x(testing::random_tensor({4, 2, 3, 8, 5}, rng));
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  auto params = m.parameters().params;
  Sgd sgd(0.9, 1e-4);
  std::vector<double> losses;
  for (int step = 0; step <= 20; ++step) {
    zero_grads(params);
    const Var loss = cross_entropy(m.forward(x, Mode::train), labels);
    losses.push_back(loss.value().item());
    backward(loss);
    sgd.step(params, 0.01);
  }
  int rises = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) rises += losses[i] > losses[i - 1];
  CHECK(rises <= 2);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("one epoch on a single batch lowers that batch's loss") {
  Model m(small_model());
  const auto data = make_synthetic(small_data());
  const Tensor x = assemble_batch(data, StreamKind::joint, m.graph(), {12, 1});
  const auto labels = sample_labels(data, 4);
  auto loss_now = [&] { return cross_entropy(m.forward(Var(x), Mode::train), labels).value().item(); };
  const double before = loss_now();
  auto cfg = short_run(1);
  cfg.train_batch = data.size();
  train(m, data, nullptr, cfg);
  CHECK(loss_now() < before);
}

TEST_CASE("a zero learning rate leaves every parameter in place") {
  Model m(small_model());
  const auto before = snapshot(m);
  auto cfg = short_run(1);
  cfg.base_lr = 0.0;
  train(m, make_synthetic(small_data()), nullptr, cfg);
  CHECK(snapshot(m) == before);
}

TEST_CASE("training reduces the loss and records history") {
  Model m(small_model());
  const auto data = make_synthetic(small_data());
  const auto val = make_synthetic(small_data(9));
  std::vector<std::size_t> seen;
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochRecord& r, Model&) { seen.push_back(r.epoch); };
  const auto res = train(m, data, &val, short_run(6), cb);
  REQUIRE(res.history.size() == 6);
  CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
  for (const auto& r : res.history) {
    CHECK(r.lr == 0.05);
    CHECK(r.val_top1 >= 0.0);
    CHECK(r.val_top1 <= 1.0);
  }
  CHECK(res.state.epoch == 6);

  const auto path = scratch("history.csv");
  write_history_csv(path.string(), res.history);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,lr,train_loss,train_top1,val_top1");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("training is reproducible and resumable") {
  const auto data = make_synthetic(small_data());
  Model a(small_model()), b(small_model());
  const auto ra = train(a, data, nullptr, short_run(4));
  const auto rb = train(b, data, nullptr, short_run(4));
  CHECK(snapshot(a) == snapshot(b));
  for (std::size_t i = 0; i < 4; ++i) CHECK(ra.history[i].train_loss == rb.history[i].train_loss);

  // Two epochs, a checkpoint, then two more from the restored state.
  Model c(small_model());
  const auto first = train(c, data, nullptr, short_run(2));
  const auto path = scratch("half.hagc").string();
  save_checkpoint(c, path, &first.state);
  auto restored = load_checkpoint(path);
  const auto second = train(restored.model, data, nullptr, short_run(4), {}, &restored.state);
  CHECK(second.history.size() == 2);
  CHECK(second.history.front().epoch == 3);
  CHECK(snapshot(restored.model) == snapshot(a));
}

TEST_CASE("a non-finite loss stops training") {
  auto data = make_synthetic(small_data());
  data[3].coords[10] = std::numeric_limits<double>::quiet_NaN();
  Model m(small_model());
  CHECK_THROWS_AS(train(m, data, nullptr, short_run(1)), NumericError);
}

TEST_CASE("config validation and JSON") {
  TrainConfig cfg;
  cfg.decay_epochs = {5, 9};
  cfg.stream = StreamKind::bone;
  cfg.nesterov = false;
  CHECK(train_config_from_json(train_config_to_json(cfg)) == cfg);
  auto j = train_config_to_json(cfg);
  j["warmup"] = 5;
  CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
  TrainConfig bad;
  bad.train_batch = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.base_lr = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  auto data = make_synthetic(small_data());
  data[0].label = 9;
  Model m(small_model());
  CHECK_THROWS_AS(train(m, data, nullptr, short_run(1)), ConfigError);
}
