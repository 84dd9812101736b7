#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/fcn.hpp"
#include "ecgxai/signal.hpp"

namespace ecgxai::train {

enum class Optimizer : std::uint8_t { Sgd, Adam };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& text);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double sgd_momentum = 0.0;
  int patience = 15;  // epochs without validation-loss improvement before stopping
  std::uint64_t seed = 1;
  bool verbose = false;

  void validate() const;
  std::string optimizer_summary() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;  // percent
  double val_acc = 0.0;    // percent
};

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 means the starting parameters were kept
  std::string optimizer;
};

struct FitResult {
  fcn::FcnModel model;
  History history;
};

// Mean over the batch of -sum_c y_c log(max(p_c, 1e-12)); rows are classes wide.
double cce_loss(std::span<const double> probs, std::span<const double> onehot, int classes);
template <class Real>
double cce_loss(std::span<const Real> probs, std::span<const int> labels, int classes);

// Minibatch training on split.train with per-epoch validation; the parameters
// with the lowest validation loss are restored at the end. A learning rate of
// zero is a dry run: neither parameters nor running statistics move.
FitResult fit(const fcn::FcnModel& model, const signal::LabeledDataset& dataset,
              const signal::SplitIndices& split, const TrainConfig& config);

// Trains only the dense head on frozen (inference-mode) convolutional features.
// The starting head competes in best-validation selection.
FitResult fine_tune(const fcn::FcnModel& model, const signal::LabeledDataset& dataset,
                    const signal::SplitIndices& split, const TrainConfig& config);

// Argmax of the softmax output, ties toward the smaller class index.
std::vector<int> predict(const fcn::FcnModel& model, const signal::LabeledDataset& dataset,
                         std::span<const std::size_t> indices);

struct ClassCounts {
  long tp = 0;
  long fn = 0;
  long fp = 0;
  long tn = 0;
  double sensitivity = 0.0;  // percent; NaN when the class has no samples
  double specificity = 0.0;  // percent; NaN when every sample belongs to the class
};

struct ClassMetrics {
  std::vector<std::vector<long>> confusion;  // [true][predicted]
  std::vector<ClassCounts> per_class;
  double accuracy = 0.0;  // percent
  long total = 0;
};

ClassMetrics metrics_from_confusion(std::vector<std::vector<long>> confusion);
ClassMetrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                      int classes);
ClassMetrics evaluate(const fcn::FcnModel& model, const signal::LabeledDataset& dataset,
                      std::span<const std::size_t> indices);

struct GroupMetrics {
  std::vector<int> classes;
  ClassCounts counts;
};

// A sample is a group true positive when both its true and predicted classes
// lie in the group. Groups must be disjoint.
std::vector<GroupMetrics> grouped_metrics(const ClassMetrics& metrics,
                                          const std::vector<std::vector<int>>& groups);

void write_history_csv(const History& history, const std::filesystem::path& path);
void write_metrics_csv(const ClassMetrics& metrics, const std::filesystem::path& path);

}  // namespace ecgxai::train
