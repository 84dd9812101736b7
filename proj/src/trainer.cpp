#include "ecgxai/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "ecgxai/error.hpp"
#include "ecgxai/rng.hpp"

namespace ecgxai::train {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr std::size_t kInferenceChunk = 64;

class OptimizerState {
 public:
  explicit OptimizerState(const TrainConfig& config) : config_(config) {}

  void step(const std::vector<std::span<float>>& params, const std::vector<std::vector<float>>& grads) {
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(config_.optimizer == Optimizer::Adam ? p.size() : 0, 0.0);
      }
    }
    ++t_;
    const double lr = config_.learning_rate;
    if (config_.optimizer == Optimizer::Adam) {
      const double b1 = config_.adam_beta1;
      const double b2 = config_.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = first_[k];
        auto& v = second_[k];
        for (std::size_t i = 0; i < params[k].size(); ++i) {
          const double g = grads[k][i];
          m[i] = b1 * m[i] + (1.0 - b1) * g;
          v[i] = b2 * v[i] + (1.0 - b2) * g * g;
          const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
          params[k][i] = static_cast<float>(params[k][i] - update);
        }
      }
    } else {
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& vel = first_[k];
        for (std::size_t i = 0; i < params[k].size(); ++i) {
          vel[i] = config_.sgd_momentum * vel[i] + grads[k][i];
          params[k][i] = static_cast<float>(params[k][i] - lr * vel[i]);
        }
      }
    }
  }

 private:
  TrainConfig config_;
  long t_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// Consecutive slices of `order`; a trailing batch of one sample joins the
// previous batch because train-mode normalization needs two samples.
std::vector<std::span<const std::size_t>> make_batches(std::span<const std::size_t> order, int batch_size) {
  std::vector<std::span<const std::size_t>> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::size_t len = std::min(bs, order.size() - start);
    if (order.size() - (start + len) == 1) ++len;
    out.push_back(order.subspan(start, len));
    if (len > bs) break;
  }
  return out;
}

std::vector<int> labels_of(const signal::LabeledDataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (std::size_t i : idx) y.push_back(ds.labels[i]);
  return y;
}

int argmax(const float* p, int classes) {
  return static_cast<int>(std::max_element(p, p + classes) - p);
}

struct SetScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

SetScore score_set(const fcn::FcnModel& model, const signal::LabeledDataset& ds,
                   std::span<const std::size_t> indices) {
  SetScore s;
  if (indices.empty()) return s;
  const auto layout = fcn::layout_of(model.variant);
  double loss_sum = 0.0;
  long correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += kInferenceChunk) {
    auto chunk = indices.subspan(start, std::min(kInferenceChunk, indices.size() - start));
    const auto cache = fcn::forward(model, fcn::make_batch<float>(ds, chunk, layout), fcn::Mode::Inference);
    const auto y = labels_of(ds, chunk);
    loss_sum += cce_loss<float>(cache.probs, y, model.class_count) * static_cast<double>(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      if (argmax(cache.probs.data() + i * model.class_count, model.class_count) == y[i]) ++correct;
    }
  }
  s.loss = loss_sum / static_cast<double>(indices.size());
  s.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(indices.size());
  return s;
}

void check_compatible(const fcn::FcnModel& model, const signal::LabeledDataset& ds,
                      const signal::SplitIndices& split) {
  ds.validate();
  fcn::validate(model);
  if (model.steps != ds.steps || model.leads != ds.leads || model.class_count != ds.class_count) {
    throw ValidationError("model expects T=" + std::to_string(model.steps) + " L=" +
                          std::to_string(model.leads) + " C=" + std::to_string(model.class_count) +
                          " but dataset has T=" + std::to_string(ds.steps) + " L=" +
                          std::to_string(ds.leads) + " C=" + std::to_string(ds.class_count));
  }
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (std::size_t i : *part) {
      if (i >= ds.size()) throw ValidationError("split index " + std::to_string(i) + " out of range");
    }
  }
  if (split.train.size() < 2) throw ValidationError("training needs at least 2 samples");
}

void log_epoch(const EpochRecord& r, const char* tag) {
  std::cerr << tag << " epoch " << r.epoch << std::fixed << std::setprecision(4)
            << " train_loss=" << r.train_loss << " val_loss=" << r.val_loss
            << std::setprecision(2) << " train_acc=" << r.train_acc << " val_acc=" << r.val_acc << '\n';
  std::cerr.unsetf(std::ios::floatfield);
}

}  // namespace

std::string to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& text) {
  std::string t;
  for (char ch : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (t == "adam") return Optimizer::Adam;
  if (t == "sgd") return Optimizer::Sgd;
  throw ValidationError("unknown optimizer '" + text + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2 (batch normalization)");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be a finite non-negative number");
  }
  if (patience < 0) throw ValidationError("patience must be >= 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw ValidationError("Adam betas must lie in [0, 1)");
  }
}

std::string TrainConfig::optimizer_summary() const {
  std::ostringstream os;
  os << to_string(optimizer) << " lr=" << learning_rate;
  if (optimizer == Optimizer::Adam) {
    os << " beta1=" << adam_beta1 << " beta2=" << adam_beta2 << " eps=" << adam_epsilon;
  } else {
    os << " momentum=" << sgd_momentum;
  }
  return os.str();
}

double cce_loss(std::span<const double> probs, std::span<const double> onehot, int classes) {
  if (classes <= 0 || probs.size() != onehot.size() || probs.size() % static_cast<std::size_t>(classes) != 0) {
    throw ValidationError("cce_loss: probability and target shapes differ");
  }
  const std::size_t n = probs.size() / static_cast<std::size_t>(classes);
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (onehot[i] != 0.0) total -= onehot[i] * std::log(std::max(probs[i], kProbFloor));
  }
  return total / static_cast<double>(n);
}

template <class Real>
double cce_loss(std::span<const Real> probs, std::span<const int> labels, int classes) {
  if (classes <= 0 || probs.size() != labels.size() * static_cast<std::size_t>(classes)) {
    throw ValidationError("cce_loss: probability and label shapes differ");
  }
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw ValidationError("cce_loss: label out of range");
    total -= std::log(std::max(static_cast<double>(probs[i * classes + labels[i]]), kProbFloor));
  }
  return total / static_cast<double>(labels.size());
}

template double cce_loss<float>(std::span<const float>, std::span<const int>, int);
template double cce_loss<double>(std::span<const double>, std::span<const int>, int);

FitResult fit(const fcn::FcnModel& initial, const signal::LabeledDataset& ds,
              const signal::SplitIndices& split, const TrainConfig& config) {
  config.validate();
  check_compatible(initial, ds, split);

  FitResult result{initial, {}};
  result.history.optimizer = config.optimizer_summary();
  fcn::FcnModel& model = result.model;
  fcn::FcnModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const bool frozen = config.learning_rate == 0.0;
  const auto layout = fcn::layout_of(model.variant);

  OptimizerState optimizer(config);
  Rng rng(config.seed);
  std::vector<std::size_t> order = split.train;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    long correct = 0;
    for (auto batch : make_batches(order, config.batch_size)) {
      const auto y = labels_of(ds, batch);
      const auto cache = fcn::forward(model, fcn::make_batch<float>(ds, batch, layout), fcn::Mode::Train);
      const double loss = cce_loss<float>(cache.probs, y, model.class_count);
      if (!std::isfinite(loss)) {
        throw NumericalError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (argmax(cache.probs.data() + i * model.class_count, model.class_count) == y[i]) ++correct;
      }
      if (frozen) continue;
      fcn::BackwardOptions opts;
      opts.input_grad = false;
      const auto grads = fcn::backward(model, cache, y, opts);
      fcn::update_running_stats(model, cache);
      optimizer.step(fcn::trainable_parameters(model), grads.params);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(order.size());
    const SetScore val = score_set(model, ds, split.val);
    rec.val_loss = val.loss;
    rec.val_acc = val.accuracy;
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw NumericalError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
    result.history.epochs.push_back(rec);
    if (config.verbose) log_epoch(rec, "fit");

    const double selection = split.val.empty() ? rec.train_loss : rec.val_loss;
    if (selection < best_val) {
      best_val = selection;
      best = model;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model = std::move(best);
  return result;
}

FitResult fine_tune(const fcn::FcnModel& initial, const signal::LabeledDataset& ds,
                    const signal::SplitIndices& split, const TrainConfig& config) {
  config.validate();
  check_compatible(initial, ds, split);

  FitResult result{initial, {}};
  result.history.optimizer = config.optimizer_summary();
  fcn::FcnModel& model = result.model;
  const auto layout = fcn::layout_of(model.variant);
  const auto classes = static_cast<std::size_t>(model.class_count);
  const auto m = static_cast<std::size_t>(model.feature_channels());

  // The frozen backbone maps every sample to a fixed pooled feature vector.
  auto pooled_features = [&](std::span<const std::size_t> idx) {
    std::vector<float> out;
    out.reserve(idx.size() * m);
    for (std::size_t start = 0; start < idx.size(); start += kInferenceChunk) {
      auto chunk = idx.subspan(start, std::min(kInferenceChunk, idx.size() - start));
      const auto cache = fcn::forward(model, fcn::make_batch<float>(ds, chunk, layout), fcn::Mode::Inference);
      out.insert(out.end(), cache.pooled.begin(), cache.pooled.end());
    }
    return out;
  };
  const std::vector<float> train_v = pooled_features(split.train);
  const std::vector<float> val_v = pooled_features(split.val);
  const auto train_y = labels_of(ds, split.train);
  const auto val_y = labels_of(ds, split.val);

  auto head_probs = [&](const float* v, std::size_t rows, std::vector<double>& probs) {
    probs.assign(rows * classes, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double* z = probs.data() + r * classes;
      for (std::size_t c = 0; c < classes; ++c) z[c] = model.dense_bias[c];
      for (std::size_t j = 0; j < m; ++j) {
        const double x = v[r * m + j];
        const float* w = model.dense_weight.data() + j * classes;
        for (std::size_t c = 0; c < classes; ++c) z[c] += x * w[c];
      }
      const double zmax = *std::max_element(z, z + classes);
      double total = 0.0;
      for (std::size_t c = 0; c < classes; ++c) total += (z[c] = std::exp(z[c] - zmax));
      for (std::size_t c = 0; c < classes; ++c) z[c] /= total;
    }
  };
  auto score = [&](const std::vector<float>& v, const std::vector<int>& y) {
    SetScore s;
    if (y.empty()) return s;
    std::vector<double> probs;
    head_probs(v.data(), y.size(), probs);
    s.loss = cce_loss<double>(probs, y, model.class_count);
    long correct = 0;
    for (std::size_t r = 0; r < y.size(); ++r) {
      const double* p = probs.data() + r * classes;
      if (std::max_element(p, p + classes) - p == y[r]) ++correct;
    }
    s.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(y.size());
    return s;
  };

  const bool use_val = !val_y.empty();
  double best_val = use_val ? score(val_v, val_y).loss : score(train_v, train_y).loss;
  auto best_weight = model.dense_weight;
  auto best_bias = model.dense_bias;
  int since_best = 0;

  OptimizerState optimizer(config);
  Rng rng(config.seed);
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<float> batch_v;
  std::vector<double> probs;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    if (config.learning_rate > 0.0) {
      for (auto batch : make_batches(order, config.batch_size)) {
        const std::size_t rows = batch.size();
        batch_v.resize(rows * m);
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(train_v.data() + batch[r] * m, m, batch_v.data() + r * m);
        }
        head_probs(batch_v.data(), rows, probs);
        for (std::size_t r = 0; r < rows; ++r) probs[r * classes + train_y[batch[r]]] -= 1.0;
        std::vector<std::vector<float>> grads = {std::vector<float>(m * classes, 0.0f),
                                                 std::vector<float>(classes, 0.0f)};
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < classes; ++c) {
            const double g = probs[r * classes + c] / static_cast<double>(rows);
            grads[1][c] += static_cast<float>(g);
            for (std::size_t j = 0; j < m; ++j) grads[0][j * classes + c] += static_cast<float>(g * batch_v[r * m + j]);
          }
        }
        optimizer.step({std::span<float>(model.dense_weight), std::span<float>(model.dense_bias)}, grads);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    const SetScore tr = score(train_v, train_y);
    const SetScore va = score(val_v, val_y);
    rec.train_loss = tr.loss;
    rec.train_acc = tr.accuracy;
    rec.val_loss = va.loss;
    rec.val_acc = va.accuracy;
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw NumericalError("fine-tuning diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
    result.history.epochs.push_back(rec);
    if (config.verbose) log_epoch(rec, "fine-tune");
    const double selection = use_val ? rec.val_loss : rec.train_loss;
    if (selection < best_val) {
      best_val = selection;
      best_weight = model.dense_weight;
      best_bias = model.dense_bias;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.dense_weight = std::move(best_weight);
  model.dense_bias = std::move(best_bias);
  return result;
}

std::vector<int> predict(const fcn::FcnModel& model, const signal::LabeledDataset& ds,
                         std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  const auto layout = fcn::layout_of(model.variant);
  for (std::size_t start = 0; start < indices.size(); start += kInferenceChunk) {
    auto chunk = indices.subspan(start, std::min(kInferenceChunk, indices.size() - start));
    const auto cache = fcn::forward(model, fcn::make_batch<float>(ds, chunk, layout), fcn::Mode::Inference);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back(argmax(cache.probs.data() + i * model.class_count, model.class_count));
    }
  }
  return out;
}

namespace {

ClassCounts derive_rates(long tp, long fn, long fp, long tn) {
  ClassCounts c{tp, fn, fp, tn, 0.0, 0.0};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  c.sensitivity = (tp + fn) > 0 ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : nan;
  c.specificity = (tn + fp) > 0 ? 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp) : nan;
  return c;
}

}  // namespace

ClassMetrics metrics_from_confusion(std::vector<std::vector<long>> confusion) {
  const std::size_t classes = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != classes) throw ValidationError("confusion matrix must be square");
  }
  ClassMetrics m;
  m.confusion = std::move(confusion);
  long correct = 0;
  std::vector<long> row_sum(classes, 0), col_sum(classes, 0);
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) {
      row_sum[i] += m.confusion[i][j];
      col_sum[j] += m.confusion[i][j];
      m.total += m.confusion[i][j];
    }
    correct += m.confusion[i][i];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    const long tp = m.confusion[c][c];
    const long fn = row_sum[c] - tp;
    const long fp = col_sum[c] - tp;
    m.per_class.push_back(derive_rates(tp, fn, fp, m.total - tp - fn - fp));
  }
  m.accuracy = m.total > 0 ? 100.0 * static_cast<double>(correct) / static_cast<double>(m.total)
                           : std::numeric_limits<double>::quiet_NaN();
  return m;
}

ClassMetrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                      int classes) {
  if (truth.size() != predicted.size()) throw ValidationError("truth and prediction counts differ");
  std::vector<std::vector<long>> confusion(static_cast<std::size_t>(classes),
                                           std::vector<long>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes) {
      throw ValidationError("class index out of range in metrics");
    }
    ++confusion[truth[i]][predicted[i]];
  }
  return metrics_from_confusion(std::move(confusion));
}

ClassMetrics evaluate(const fcn::FcnModel& model, const signal::LabeledDataset& ds,
                      std::span<const std::size_t> indices) {
  const auto predicted = predict(model, ds, indices);
  return metrics_from_predictions(labels_of(ds, indices), predicted, model.class_count);
}

std::vector<GroupMetrics> grouped_metrics(const ClassMetrics& metrics,
                                          const std::vector<std::vector<int>>& groups) {
  const auto classes = static_cast<int>(metrics.confusion.size());
  std::set<int> seen;
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("empty class group");
    for (int c : g) {
      if (c < 0 || c >= classes) throw ValidationError("group member " + std::to_string(c) + " is not a class");
      if (!seen.insert(c).second) {
        throw ValidationError("class " + std::to_string(c) + " appears in more than one group");
      }
    }
  }
  std::vector<GroupMetrics> out;
  for (const auto& g : groups) {
    std::vector<bool> in(static_cast<std::size_t>(classes), false);
    for (int c : g) in[c] = true;
    long tp = 0, fn = 0, fp = 0, tn = 0;
    for (int i = 0; i < classes; ++i) {
      for (int j = 0; j < classes; ++j) {
        const long n = metrics.confusion[i][j];
        if (in[i] && in[j]) tp += n;
        else if (in[i]) fn += n;
        else if (in[j]) fp += n;
        else tn += n;
      }
    }
    std::vector<int> sorted = g;
    std::sort(sorted.begin(), sorted.end());
    out.push_back({sorted, derive_rates(tp, fn, fp, tn)});
  }
  return out;
}

void write_history_csv(const History& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,train_acc,val_acc\n" << std::setprecision(9);
  for (const auto& r : history.epochs) {
    out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.train_acc << ',' << r.val_acc << '\n';
  }
}

void write_metrics_csv(const ClassMetrics& metrics, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "class,cardinality,tp,fn,fp,tn,sensitivity,specificity\n" << std::fixed << std::setprecision(2);
  for (std::size_t c = 0; c < metrics.per_class.size(); ++c) {
    const auto& k = metrics.per_class[c];
    out << c << ',' << (k.tp + k.fn) << ',' << k.tp << ',' << k.fn << ',' << k.fp << ',' << k.tn << ','
        << k.sensitivity << ',' << k.specificity << '\n';
  }
  out << "overall," << metrics.total << ",,,,,accuracy," << metrics.accuracy << '\n';
}

}  // namespace ecgxai::train
