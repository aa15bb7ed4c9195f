#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rupp/checkpoint.hpp"
#include "rupp/data.hpp"
#include "rupp/losses.hpp"
#include "rupp/model.hpp"
#include "rupp/optimizer.hpp"

namespace rupp {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 8;
  OptimizerKind optimizer = OptimizerKind::nadam;
  double initial_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t early_stop_patience = 10;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;

  // Step decay; cycle length 0 means max(1, epochs / 10).
  double decay_factor = 0.5;
  std::size_t cycle_length_epochs = 0;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.1;
  double min_lr = 1e-6;

  // Empty paths disable writing that checkpoint.
  std::filesystem::path checkpoint_path;
  std::filesystem::path last_checkpoint_path;
  // Off by default so the history file is reproducible byte for byte.
  bool log_wall_time = false;

  LossConfig loss;

  void validate() const;
  LRSchedule schedule() const;
  OptimizerState<float> fresh_optimizer() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_iou = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  // Header `epoch,train_loss,val_loss,val_iou,lr,seconds`, values printed with %.9g.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  TrainHistory history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

// Optimizer moments and loop bookkeeping from a "last" checkpoint.
struct ResumeState {
  OptimizerState<float> optimizer;
  TrainerState trainer;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epoch loop: shuffle from (seed, epoch), train-mode steps over mini-batches
/// (last partial batch kept), an eval-mode validation pass, best-checkpoint
/// tracking with early stopping, step decay times plateau reduction. The model
/// ends holding the best weights. An empty validation split falls back to
/// validating on the training samples. Throws ValidationError for an empty
/// training split and TrainingAborted on a non-finite loss.
TrainResult train(ResUnetPP<float>& model, const DatasetSplit& split, const TrainConfig& cfg,
                  const std::optional<ResumeState>& resume = std::nullopt, const EpochCallback& on_epoch = {});

struct SampleMetrics {
  std::string id;
  double loss = 0.0;
  double iou = 0.0;
  double dice = 0.0;
  double accuracy = 0.0;
};

struct EvalResult {
  // Jaccard loss over the whole set with the configured aggregation; this is
  // the quantity early stopping monitors.
  double set_loss = 0.0;
  // Arithmetic means of the per-sample rows.
  double mean_loss = 0.0;
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  double mean_accuracy = 0.0;
  std::vector<SampleMetrics> samples;

  std::string to_csv() const;
};

// Eval-mode metrics; binarization uses loss.binarize_threshold. Throws ValidationError if empty.
EvalResult evaluate(const ResUnetPP<float>& model, const std::vector<Sample>& samples, const LossConfig& loss = {},
                    std::size_t batch_size = 8);

// Eval-mode probabilities for a set of samples, stacked as (N,1,H,W).
Tensor<float> predict_samples(const ResUnetPP<float>& model, const std::vector<Sample>& samples,
                              std::size_t batch_size = 8);

}  // namespace rupp
