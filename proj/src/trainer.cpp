#include "dan/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "dan/graph.hpp"
#include "dan/loss.hpp"

namespace dan {

void TrainerConfig::Validate() const {
  Require(batch_size >= 1, ErrorKind::kConfig, "batch size must be >= 1");
  Require(base_lr > 0.0, ErrorKind::kConfig, "base learning rate must be positive");
  Require(momentum >= 0.0 && momentum < 1.0, ErrorKind::kConfig, "momentum must be in [0,1)");
  Require(weight_decay >= 0.0, ErrorKind::kConfig, "weight decay must be >= 0");
  Require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::kConfig, "dropout rate must be in [0,1)");
  Require(lr_drop_factor > 1.0, ErrorKind::kConfig, "lr drop factor must be > 1");
  Require(plateau_patience >= 1, ErrorKind::kConfig, "plateau patience must be >= 1");
  Require(max_epochs >= 1, ErrorKind::kConfig, "max epochs must be >= 1");
  Require(min_lr_drops >= 0, ErrorKind::kConfig, "min_lr_drops must be >= 0");
  Require(canonical_size > 0 && crop_size > 0 && crop_size <= canonical_size, ErrorKind::kConfig,
          "crop size must be in (0, canonical size]");
  Require(crop_margin >= 0.0, ErrorKind::kConfig, "crop margin must be >= 0");
}

std::vector<Image> TrainingImages(const std::vector<const DatasetRecord*>& records, bool crop_to_bbox,
                                  double margin) {
  std::vector<Image> out;
  out.reserve(records.size());
  for (const auto* r : records) {
    out.push_back(crop_to_bbox && r->bbox ? CropBboxMargin(*r, margin) : r->image);
  }
  return out;
}

PreparedSplit PrepareSplit(const std::vector<const DatasetRecord*>& records, const AttributeSchema& schema,
                           const PrepareOptions& options) {
  PreparedSplit split;
  split.images.reserve(records.size());
  split.targets.reserve(records.size());
  for (const auto* r : records) {
    Require(r->labels.size() == schema.size(), ErrorKind::kMalformedInput,
            "record '" + r->image_id + "' has " + std::to_string(r->labels.size()) + " labels, schema has " +
                std::to_string(schema.size()));
    if (options.crop_to_bbox && r->bbox) {
      split.images.push_back(Preprocess(CropBboxMargin(*r, options.margin), options.canonical_size, options.mean_rgb));
    } else {
      if (options.crop_to_bbox) ++split.crop_fallbacks;
      split.images.push_back(Preprocess(r->image, options.canonical_size, options.mean_rgb));
    }
    split.targets.push_back(MapLabels(r->labels, schema.label_scheme));
  }
  return split;
}

void SgdStep(const ModelConfig& config, ParameterSet<float>& params, const ParameterSet<float>& grads,
             TrainState& state, const TrainerConfig& trainer) {
  for (const auto& [name, g] : grads) {
    Require(g.weight.all_finite() && g.bias.all_finite(), ErrorKind::kNumeric,
            "non-finite gradient for layer '" + name + "'");
  }
  const auto lr = static_cast<float>(state.lr);
  const auto mu = static_cast<float>(trainer.momentum);
  const auto decay = static_cast<float>(trainer.weight_decay);
  for (const auto& layer : config.layers) {
    if (!layer.has_params() || layer.frozen) continue;
    auto g = grads.find(layer.name);
    if (g == grads.end()) continue;
    auto& p = params.at(layer.name);
    auto& v = state.momentum[layer.name];
    if (v.weight.empty()) v = {TensorF(p.weight.shape()), TensorF(p.bias.shape())};
    auto update = [&](TensorF& param, const TensorF& grad, TensorF& velocity) {
      Require(grad.shape() == param.shape(), ErrorKind::kDimension, "gradient shape mismatch for '" + layer.name + "'");
      for (std::size_t i = 0; i < param.numel(); ++i) {
        velocity[i] = mu * velocity[i] + grad[i] + decay * param[i];
        param[i] -= lr * velocity[i];
      }
    };
    update(p.weight, g->second.weight, v.weight);
    update(p.bias, g->second.bias, v.bias);
  }
}

namespace {

void ApplyDropoutRate(ModelConfig& config, double rate) {
  for (auto& l : config.layers) {
    if (l.kind == LayerKind::kDropout) l.rate = rate;
  }
}

int CropSizeOf(const ModelConfig& config) { return config.input.height; }

}  // namespace

double RunEpoch(const ModelConfig& config, ParameterSet<float>& params, const PreparedSplit& split,
                const TrainerConfig& trainer, TrainState& state, EpochMode mode, Rng& rng) {
  Require(split.size() > 0, ErrorKind::kPrecondition, "cannot run an epoch over an empty split");
  const int crop = CropSizeOf(config);
  const std::size_t n = split.size();
  const std::size_t classes = split.targets.front().size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const bool training = mode == EpochMode::kTrain;
  if (training) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  double total = 0.0;
  const std::size_t batch_size = static_cast<std::size_t>(trainer.batch_size);
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < n; start += batch_size, ++batch_index) {
    const std::size_t count = std::min(batch_size, n - start);
    TensorF batch({static_cast<std::int64_t>(count), config.input.channels, crop, crop});
    TensorD labels({static_cast<std::int64_t>(count), static_cast<std::int64_t>(classes)});
    const std::size_t sample_size = static_cast<std::size_t>(config.input.channels) * crop * crop;
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t idx = order[start + b];
      const TensorF view =
          Augment(split.images[idx], crop, training ? AugmentMode::kTrain : AugmentMode::kEval, rng);
      std::copy(view.data().begin(), view.data().end(), batch.raw() + b * sample_size);
      const auto& t = split.targets[idx];
      std::copy(t.begin(), t.end(), labels.raw() + b * classes);
    }
    try {
      const auto weights = BatchClassWeights(labels);
      Graph<float> graph;
      const auto trace = BuildForward(graph, config, params, batch, training, rng, training);
      const NodeId loss = graph.WeightedBce(trace.logits, labels, weights);
      const double value = graph.value(loss)[0];
      Require(std::isfinite(value), ErrorKind::kNumeric, "non-finite loss");
      total += value * static_cast<double>(count);
      if (training) {
        graph.Backward(loss);
        ParameterSet<float> grads;
        for (const auto& [name, nodes] : trace.param_nodes) {
          const auto* gw = graph.grad(nodes.first);
          const auto* gb = graph.grad(nodes.second);
          if (gw && gb) grads[name] = {*gw, *gb};
        }
        SgdStep(config, params, grads, state, trainer);
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNumeric) {
        Fail(ErrorKind::kNumeric, std::string(e.what()) + " (batch " + std::to_string(batch_index) + ")");
      }
      throw;
    }
  }
  return total / static_cast<double>(n);
}

TrainResult TrainTwoPhase(ModelConfig config, ParameterSet<float> params, const PreparedSplit& train,
                          const PreparedSplit& val, const TrainerConfig& trainer, Checkpoint base,
                          const EpochCallback& on_epoch) {
  trainer.Validate();
  Require(train.size() > 0, ErrorKind::kPrecondition, "training split is empty");
  Require(val.size() > 0, ErrorKind::kPrecondition, "validation split is empty");
  ApplyDropoutRate(config, trainer.dropout_rate);
  ValidateConfig(config);
  CheckParameters(config, params);

  Rng rng(trainer.seed);
  TrainState state;
  state.base_lr = trainer.base_lr;
  state.lr = trainer.base_lr;
  state.phase = trainer.phase_mode == PhaseMode::kTwoPhase ? Phase::kPhase1 : Phase::kFull;
  for (const auto& [name, p] : params) state.momentum[name] = {TensorF(p.weight.shape()), TensorF(p.bias.shape())};
  SetTrainable(config, state.phase);

  TrainResult result;
  // Reference for the plateau rule; separate from the best-checkpoint minimum.
  double plateau_reference = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= trainer.max_epochs; ++epoch) {
    HistoryRow row;
    row.epoch = epoch;
    row.phase = state.phase;
    row.lr = state.lr;
    row.train_loss = RunEpoch(config, params, train, trainer, state, EpochMode::kTrain, rng);
    row.val_loss = RunEpoch(config, params, val, trainer, state, EpochMode::kValidate, rng);
    state.epoch = epoch;
    result.history.push_back(row);

    if (row.val_loss < plateau_reference - trainer.plateau_min_delta) {
      plateau_reference = row.val_loss;
      state.epochs_since_improvement = 0;
    } else {
      ++state.epochs_since_improvement;
    }
    if (row.val_loss < state.best_val_loss) {
      state.best_val_loss = row.val_loss;
      result.best = base;
      result.best.config = config;
      result.best.params = params;
      result.best.state = state;
      result.best.rng_state = rng.state();
    }
    if (on_epoch) on_epoch(row, params);

    if (state.epochs_since_improvement >= trainer.plateau_patience) {
      state.epochs_since_improvement = 0;
      if (state.phase == Phase::kPhase1) {
        state.phase = Phase::kPhase2;
        state.phase_switch_epoch = epoch;
        result.phase_switch_epoch = epoch;
        SetTrainable(config, Phase::kPhase2);
      } else {
        ++state.lr_drops;
        state.lr = trainer.base_lr / std::pow(trainer.lr_drop_factor, state.lr_drops);
        if (state.lr_drops > trainer.min_lr_drops) break;
      }
    }
  }
  // The returned checkpoint records the switch even if it happened later.
  result.best.state.phase_switch_epoch = result.phase_switch_epoch;
  return result;
}

TrainResult TrainModel(const Dataset& dataset, const TrainerConfig& trainer,
                       const std::optional<Checkpoint>& warm_start, const EpochCallback& on_epoch) {
  trainer.Validate();
  const auto train_records = dataset.split(Split::kTrain);
  const auto val_records = dataset.split(Split::kVal);
  Require(!train_records.empty(), ErrorKind::kPrecondition, "dataset has no training records");
  Require(!val_records.empty(), ErrorKind::kPrecondition, "dataset has no validation records");
  Require(trainer.crop_size % 16 == 0, ErrorKind::kConfig, "crop size must be divisible by 16");

  ModelConfig config = BuildTinyDan(static_cast<int>(dataset.schema.size()),
                                    {3, trainer.crop_size, trainer.crop_size});
  ParameterSet<float> params;
  if (warm_start) {
    RequireCompatible(*warm_start, config);
    params = warm_start->params;
  } else {
    Rng init_rng(trainer.seed ^ 0x5eed5eed5eedULL);
    params = InitializeParameters(config, init_rng);
  }

  Checkpoint base;
  base.schema = dataset.schema;
  base.canonical_size = trainer.canonical_size;
  base.crop_size = trainer.crop_size;
  const auto images = TrainingImages(train_records, trainer.crop_train, trainer.crop_margin);
  base.mean_rgb = ComputeMeanRgb(images);

  PrepareOptions prep{trainer.crop_train, trainer.crop_margin, trainer.canonical_size, base.mean_rgb};
  const PreparedSplit train = PrepareSplit(train_records, dataset.schema, prep);
  const PreparedSplit val = PrepareSplit(val_records, dataset.schema, prep);
  return TrainTwoPhase(std::move(config), std::move(params), train, val, trainer, std::move(base), on_epoch);
}

std::string HistoryToCsv(const std::vector<HistoryRow>& history) {
  std::string out = "epoch,phase,lr,train_loss,val_loss\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof(line), "%d,%s,%.10g,%.10g,%.10g\n", r.epoch, PhaseName(r.phase), r.lr, r.train_loss,
                  r.val_loss);
    out += line;
  }
  return out;
}

}  // namespace dan
