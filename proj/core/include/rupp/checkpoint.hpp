#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rupp/model.hpp"
#include "rupp/optimizer.hpp"

namespace rupp {

// Binary layout, all integers little-endian:
//   "RUPP" | u32 version | u32 tensor count |
//   per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims[rank] | f32 data[numel]
inline constexpr char kCheckpointMagic[4] = {'R', 'U', 'P', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
// Throws FormatError on bad magic/version or truncation (naming the tensor).
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

/// Training-loop bookkeeping persisted alongside the weights so a run can resume.
struct TrainerState {
  std::size_t next_epoch = 0;
  float best_val_loss = 0.0f;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improve = 0;
  float plateau_scale = 1.0f;
  // Per completed epoch: epoch, train_loss, val_loss, val_iou, lr, seconds.
  std::vector<std::array<float, 6>> history;
};

/// Model tensors ("model/<param>" then "model/<buffer>"), optimizer tensors
/// ("opt/m/<param>", "opt/v/<param>", "opt/t"), optional trainer state
/// ("train/..."), and the architecture ("meta/model_config").
void checkpoint_save(const std::filesystem::path& path, ResUnetPP<float>& model,
                     const OptimizerState<float>* optimizer = nullptr, const TrainerState* trainer = nullptr);

struct LoadedCheckpoint {
  ResUnetPP<float> model;
  std::optional<OptimizerState<float>> optimizer;  // absent for model-only files
  std::optional<TrainerState> trainer;
};

/// Rebuilds the model from `config`, or from the stored architecture when
/// `config` is empty. Throws FormatError listing missing/extra tensor names if
/// the file does not match the architecture. Optimizer hyperparameters come
/// from `optimizer_template`; only m, v and t are read from the file.
LoadedCheckpoint checkpoint_load(const std::filesystem::path& path,
                                 const std::optional<ResUnetPPConfig>& config = std::nullopt,
                                 const OptimizerState<float>& optimizer_template = {});

// Architecture stored in a checkpoint's meta tensor.
ResUnetPPConfig read_model_config(const std::filesystem::path& path);

}  // namespace rupp
