#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "occattn/model.hpp"
#include "occattn/shapegen.hpp"

namespace occattn {

enum class LrSchedule { constant, cosine };
std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& text);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t steps = 5000;
  std::size_t val_interval = 250;
  std::size_t batch_size = 8;
  std::size_t points_per_object = 1024;
  std::size_t val_points = 2048;
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::constant;

  void validate() const;
  /// Learning rate for update `step` (1-based); cosine decays toward zero over `steps`.
  double learning_rate_at(std::size_t step) const;
};

/// Per-parameter moments; t counts completed updates.
struct AdamState {
  std::vector<Tensor> m, v;
  std::size_t t = 0;
};

/// Bias-corrected Adam with weight decay folded into the gradient (g + wd * theta).
void adam_step(const std::vector<Var*>& params, AdamState& state, const TrainConfig& config);

/// Mean binary cross-entropy of logits against {0,1} labels.
Var bce_loss(const Var& logits, const Tensor& labels);

struct TrainingObject {
  std::string id;
  std::string category;
  std::vector<Tensor> images;  // [C,H,W] per view
  OccupancySamples samples;
};

struct TrainingData {
  std::vector<TrainingObject> train;
  std::vector<TrainingObject> val;
};

/// Loads images and sample pools for the train and val splits, optionally for one category.
TrainingData load_training_data(const DatasetManifest& manifest, const std::string& category = "");

struct HistoryRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  OccupancyModel best;
  std::size_t best_step = 0;
  double best_val_loss = 0.0;
  bool val_from_train = false;  // no val split: held-out points of the training objects
};

/// Runs `config.steps` Adam updates. Row k holds the loss of the batch that produced
/// update k; validation runs after every val_interval-th update and after the last one.
TrainResult train(OccupancyModel& model, const TrainingData& data, const TrainConfig& config,
                  const std::function<void(const HistoryRow&)>& on_row = {});

/// Eval-mode mean loss over fixed validation points of every object.
double validation_loss(const OccupancyModel& model, const std::vector<TrainingObject>& objects,
                       const TrainConfig& config);

std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace occattn
