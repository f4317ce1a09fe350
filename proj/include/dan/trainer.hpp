#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dan/checkpoint.hpp"
#include "dan/data.hpp"
#include "dan/model.hpp"

namespace dan {

enum class PhaseMode { kTwoPhase, kFull };

struct TrainerConfig {
  int batch_size = 32;
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double dropout_rate = 0.5;
  double lr_drop_factor = 10.0;
  int plateau_patience = 3;
  double plateau_min_delta = 1e-4;
  int max_epochs = 38;
  // Training stops once lr < base_lr / lr_drop_factor^min_lr_drops.
  int min_lr_drops = 4;
  PhaseMode phase_mode = PhaseMode::kTwoPhase;
  std::uint64_t seed = 1;

  // Preprocessing of train/val images.
  bool crop_train = true;
  double crop_margin = 0.10;
  int canonical_size = 72;
  int crop_size = 64;

  void Validate() const;
};

struct HistoryRow {
  int epoch = 0;
  Phase phase = Phase::kPhase1;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool operator==(const HistoryRow&) const = default;
};

// Resized (canonical x canonical), mean-subtracted images plus mapped
// training targets for one split.
struct PreparedSplit {
  std::vector<TensorF> images;
  std::vector<std::vector<double>> targets;
  int crop_fallbacks = 0;  // records without a bbox evaluated whole

  std::size_t size() const { return images.size(); }
};

struct PrepareOptions {
  bool crop_to_bbox = true;
  double margin = 0.10;
  int canonical_size = 72;
  std::array<double, 3> mean_rgb{};
};

// Crops to bbox (when requested and present) and preprocesses each record.
PreparedSplit PrepareSplit(const std::vector<const DatasetRecord*>& records, const AttributeSchema& schema,
                           const PrepareOptions& options);

// Images the training mean is computed over: cropped when crop_to_bbox.
std::vector<Image> TrainingImages(const std::vector<const DatasetRecord*>& records, bool crop_to_bbox,
                                  double margin);

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Layers frozen in config are skipped; non-finite gradients abort before
// any parameter changes.
void SgdStep(const ModelConfig& config, ParameterSet<float>& params, const ParameterSet<float>& grads,
             TrainState& state, const TrainerConfig& trainer);

enum class EpochMode { kTrain, kValidate };

// Returns the mean per-sample loss over the split. Train mode shuffles,
// augments, and steps; validate mode runs ordered center crops and leaves
// params untouched.
double RunEpoch(const ModelConfig& config, ParameterSet<float>& params, const PreparedSplit& split,
                const TrainerConfig& trainer, TrainState& state, EpochMode mode, Rng& rng);

struct TrainResult {
  Checkpoint best;  // lowest validation loss
  std::vector<HistoryRow> history;
  int phase_switch_epoch = -1;
};

// Called after each epoch with its history row and the parameters it ended with.
using EpochCallback = std::function<void(const HistoryRow&, const ParameterSet<float>&)>;

// Schedule loop over prepared splits. base supplies the checkpoint metadata
// (schema, mean RGB, sizes); its params/state are replaced.
TrainResult TrainTwoPhase(ModelConfig config, ParameterSet<float> params, const PreparedSplit& train,
                          const PreparedSplit& val, const TrainerConfig& trainer, Checkpoint base,
                          const EpochCallback& on_epoch = nullptr);

// Two-phase (or full) training with a plateau-driven phase switch and
// learning-rate drops. warm_start supplies initial parameters.
TrainResult TrainModel(const Dataset& dataset, const TrainerConfig& trainer,
                       const std::optional<Checkpoint>& warm_start = std::nullopt,
                       const EpochCallback& on_epoch = nullptr);

std::string HistoryToCsv(const std::vector<HistoryRow>& history);

}  // namespace dan
