#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ecgxai/error.hpp"
#include "ecgxai/synth.hpp"
#include "ecgxai/trainer.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace ecgxai;
using namespace ecgxai::train;

namespace {

signal::LabeledDataset toy(int per_class = 12) {
  synth::GeneratorConfig g;
  g.class_count = 3;
  g.samples_per_class = per_class;
  g.steps = 40;
  g.leads = 3;
  g.noise_std = 0.0;
  g.jitter = 0;
  g.templates = {{6, 3, 0.3, 10, 4, 1.0}, {14, 3, 0.3, 18, 4, 1.0}, {22, 3, 0.3, 26, 4, 1.0}};
  return synth::generate_dataset(g);
}

fcn::FcnModel small_model(const signal::LabeledDataset& ds, std::uint64_t seed = 3) {
  const std::vector<fcn::LayerSpec> layers{{8, 5, 1}, {8, 5, 1}, {8, 3, 1}};
  return fcn::build_model(fcn::Variant::MultiChannel1D, layers, ds.class_count, ds.steps, ds.leads, seed);
}

std::vector<float> flat(const fcn::FcnModel& m) {
  std::vector<float> out;
  for (const auto& b : m.blocks) {
    for (const auto* v : {&b.weight, &b.bias, &b.gamma, &b.beta, &b.running_mean, &b.running_var}) {
      out.insert(out.end(), v->begin(), v->end());
    }
  }
  out.insert(out.end(), m.dense_weight.begin(), m.dense_weight.end());
  out.insert(out.end(), m.dense_bias.begin(), m.dense_bias.end());
  return out;
}

std::vector<float> conv_part(const fcn::FcnModel& m) {
  auto all = flat(m);
  all.resize(all.size() - m.dense_weight.size() - m.dense_bias.size());
  return all;
}

}  // namespace

TEST_CASE("cce loss examples") {
  const std::vector<double> onehot{0, 1, 0};
  CHECK(cce_loss(onehot, onehot, 3) == 0.0);
  std::vector<double> uniform(24, 1.0 / 24), y(24, 0.0);
  y[5] = 1.0;
  CHECK(cce_loss(uniform, y, 24) == doctest::Approx(std::log(24.0)).epsilon(1e-12));
  const std::vector<double> half{0.5, 0.5}, first{1, 0};
  CHECK(cce_loss(half, first, 2) == doctest::Approx(0.6931471805599453));
  const std::vector<double> zero{0, 1}, target{1, 0};
  CHECK(cce_loss(zero, target, 2) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(cce_loss(half, onehot, 2), ValidationError);

  const std::vector<float> probs{0.5f, 0.5f, 0.25f, 0.75f};
  const std::vector<int> labels{0, 1};
  CHECK(cce_loss<float>(probs, labels, 2) == doctest::Approx((std::log(2.0) - std::log(0.75)) / 2).epsilon(1e-6));
}

TEST_CASE("the toy set is 1-NN separable") {
  const auto ds = toy();
  const auto split = signal::stratified_split(ds, {}, 1);
  CHECK(oracle::one_nn_accuracy(ds, split.train, split.train) == 100.0);
  CHECK(oracle::one_nn_accuracy(ds, split.train, split.val) == 100.0);
}

TEST_CASE("fit reaches full train accuracy on the noiseless toy set") {
  const auto ds = toy();
  const auto split = signal::stratified_split(ds, {}, 1);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  cfg.patience = 20;
  const auto r = fit(small_model(ds), ds, split, cfg);
  CHECK(r.history.epochs.size() == 20);
  CHECK(r.history.best_epoch >= 1);
  const auto m = evaluate(r.model, ds, split.train);
  CHECK(m.accuracy == 100.0);

  // bit-reproducible per seed
  const auto again = fit(small_model(ds), ds, split, cfg);
  CHECK(flat(again.model) == flat(r.model));
  CHECK(again.history.epochs.back().train_loss == r.history.epochs.back().train_loss);
}

TEST_CASE("zero learning rate leaves every parameter unchanged") {
  const auto ds = toy(8);
  const auto split = signal::stratified_split(ds, {}, 2);
  const auto model = small_model(ds);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.0;
  const auto r = fit(model, ds, split, cfg);
  CHECK(flat(r.model) == flat(model));
  CHECK(r.history.epochs.size() == 3);
  cfg.optimizer = Optimizer::Sgd;
  cfg.sgd_momentum = 0.9;
  CHECK(flat(fit(model, ds, split, cfg).model) == flat(model));
}

TEST_CASE("early stopping bounds the history length") {
  const auto ds = toy(8);
  const auto split = signal::stratified_split(ds, {}, 2);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.0;  // validation loss never improves
  cfg.patience = 2;
  const auto r = fit(small_model(ds), ds, split, cfg);
  CHECK(r.history.epochs.size() == 3);
  CHECK(r.history.best_epoch <= 1);
  for (std::size_t i = 0; i < r.history.epochs.size(); ++i) CHECK(r.history.epochs[i].epoch == static_cast<int>(i) + 1);
}

TEST_CASE("fine-tuning freezes the convolutional blocks") {
  const auto ds = toy();
  const auto split = signal::stratified_split(ds, {}, 1);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.01;
  const auto base = fit(small_model(ds), ds, split, cfg).model;

  TrainConfig ft = cfg;
  ft.epochs = 10;
  ft.learning_rate = 0.005;
  const auto tuned = fine_tune(base, ds, split, ft);
  CHECK(conv_part(tuned.model) == conv_part(base));
  CHECK(tuned.model.dense_weight != base.dense_weight);

  auto val_loss = [&](const fcn::FcnModel& m) {
    const auto batch = fcn::make_batch<float>(ds, split.val, signal::Layout::MultiChannel);
    const auto cache = fcn::forward(m, batch, fcn::Mode::Inference);
    std::vector<int> labels;
    for (auto i : split.val) labels.push_back(ds.labels[i]);
    return cce_loss<float>(cache.probs, labels, ds.class_count);
  };
  CHECK(val_loss(tuned.model) <= val_loss(base) + 1e-6);

  ft.learning_rate = 0.0;
  const auto frozen = fine_tune(base, ds, split, ft);
  CHECK(flat(frozen.model) == flat(base));
}

TEST_CASE("divergence is reported with the epoch") {
  const auto ds = toy(8);
  const auto split = signal::stratified_split(ds, {}, 2);
  auto model = small_model(ds);
  for (auto& w : model.dense_weight) w = 3e38f;
  for (auto& b : model.blocks) {
    for (auto& g : b.gamma) g = 3e38f;
  }
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  try {
    (void)fit(model, ds, split, cfg);
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(parse_optimizer("sgd") == Optimizer::Sgd);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ValidationError);
}

TEST_CASE("metrics examples") {
  const auto m = metrics_from_confusion({{2, 1, 0}, {0, 3, 0}, {1, 0, 2}});
  CHECK(m.per_class[0].tp == 2);
  CHECK(m.per_class[0].fn == 1);
  CHECK(m.per_class[0].fp == 1);
  CHECK(m.per_class[0].tn == 5);
  CHECK(m.per_class[0].sensitivity == doctest::Approx(66.6667).epsilon(1e-4));
  CHECK(m.per_class[0].specificity == doctest::Approx(83.3333).epsilon(1e-4));
  CHECK(m.accuracy == doctest::Approx(700.0 / 9.0));
  long tp = 0, support = 0;
  for (const auto& c : m.per_class) {
    tp += c.tp;
    support += c.tp + c.fn;
  }
  CHECK(tp == 7);
  CHECK(support == 9);

  const std::vector<int> truth{0, 0, 1, 1}, all_zero{0, 0, 0, 0};
  const auto b = metrics_from_predictions(truth, all_zero, 2);
  CHECK(b.per_class[1].sensitivity == 0.0);
  CHECK(b.per_class[1].specificity == 100.0);

  const auto perfect = metrics_from_predictions(truth, truth, 2);
  CHECK(perfect.accuracy == 100.0);
  for (const auto& c : perfect.per_class) {
    CHECK(c.sensitivity == 100.0);
    CHECK(c.specificity == 100.0);
  }

  const std::vector<int> only0{0, 0};
  const auto absent = metrics_from_predictions(only0, only0, 2);
  CHECK(std::isnan(absent.per_class[1].sensitivity));
  CHECK(std::isnan(absent.per_class[0].specificity));
}

TEST_CASE("grouped metrics") {
  // 3 <-> 5 confusions only
  std::vector<int> truth, pred;
  for (int c = 0; c < 12; ++c) {
    for (int i = 0; i < 3; ++i) {
      truth.push_back(c);
      pred.push_back(c == 3 ? 5 : c == 5 ? 3 : c);
    }
  }
  const auto m = metrics_from_predictions(truth, pred, 12);
  CHECK(m.per_class[3].sensitivity == 0.0);
  const auto g = grouped_metrics(m, {{3, 5, 9, 11}});
  CHECK(g[0].counts.sensitivity == 100.0);
  CHECK(g[0].counts.specificity == 100.0);

  std::vector<int> everything(12);
  std::iota(everything.begin(), everything.end(), 0);
  CHECK(grouped_metrics(m, {everything})[0].counts.sensitivity == 100.0);

  const auto noisy = metrics_from_confusion({{2, 1, 0}, {0, 3, 0}, {1, 0, 2}});
  const auto singles = grouped_metrics(noisy, {{0}, {1}, {2}});
  for (int c = 0; c < 3; ++c) {
    CHECK(singles[c].counts.tp == noisy.per_class[c].tp);
    CHECK(singles[c].counts.fp == noisy.per_class[c].fp);
    CHECK(singles[c].counts.sensitivity == doctest::Approx(noisy.per_class[c].sensitivity));
    CHECK(singles[c].counts.specificity == doctest::Approx(noisy.per_class[c].specificity));
  }

  CHECK_THROWS_AS(grouped_metrics(noisy, {{0, 1}, {1, 2}}), ValidationError);
  CHECK_THROWS_AS(grouped_metrics(noisy, {{3}}), ValidationError);
}

TEST_CASE("history and metrics csv") {
  TempDir dir("hist");
  History h;
  h.epochs.push_back({1, 1.5, 1.25, 40.0, 50.0});
  write_history_csv(h, dir / "h.csv");
  std::ifstream in(dir / "h.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,train_loss,val_loss,train_acc,val_acc");
  CHECK(row.rfind("1,1.5", 0) == 0);

  write_metrics_csv(metrics_from_confusion({{1, 0}, {0, 1}}), dir / "m.csv");
  std::ifstream mi(dir / "m.csv");
  std::getline(mi, header);
  CHECK(header == "class,cardinality,tp,fn,fp,tn,sensitivity,specificity");
}
