#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>

#include "dan/model.hpp"
#include "dan/schema.hpp"

namespace dan {

struct TrainState {
  int epoch = 0;
  double base_lr = 0.001;
  double lr = 0.001;
  int lr_drops = 0;  // lr == base_lr / 10^lr_drops
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  Phase phase = Phase::kPhase1;
  int phase_switch_epoch = -1;
  ParameterSet<float> momentum;  // same keys and shapes as the parameters

  bool operator==(const TrainState&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t version = kFormatVersion;
  ModelConfig config;
  ParameterSet<float> params;
  TrainState state;
  std::array<double, 3> mean_rgb{};
  std::string rng_state;
  AttributeSchema schema;
  int canonical_size = 72;
  int crop_size = 64;

  bool operator==(const Checkpoint&) const = default;
};

// "ATRN", u32 version, u64 header length, JSON header, then little-endian
// float32 payloads at the offsets listed in the header's tensor directory.
std::string SerializeCheckpoint(const Checkpoint& checkpoint);
Checkpoint DeserializeCheckpoint(const std::string& bytes);

void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint);
// kIo when unreadable, kCorruptFile for damaged content, kVersionMismatch,
// kConfigMismatch when tensors disagree with the embedded config.
Checkpoint LoadCheckpoint(const std::string& path);

// kConfigMismatch unless checkpoint's network can stand in for config.
void RequireCompatible(const Checkpoint& checkpoint, const ModelConfig& config);

}  // namespace dan
