#pragma once

#include <map>
#include <string>
#include <vector>

#include "dan/graph.hpp"
#include "dan/rng.hpp"
#include "dan/tensor.hpp"

namespace dan {

enum class LayerKind { kConv, kPool, kAffine, kRelu, kSigmoid, kDropout, kFlatten };

const char* LayerKindName(LayerKind kind);
LayerKind ParseLayerKind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  // conv
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  // affine
  int in_features = 0;
  int out_features = 0;
  // dropout
  double rate = 0.0;

  bool frozen = false;
  int block_id = 0;

  bool has_params() const { return kind == LayerKind::kConv || kind == LayerKind::kAffine; }
  bool operator==(const LayerSpec&) const = default;
};

struct InputSize {
  int channels = 3;
  int height = 64;
  int width = 64;
  bool operator==(const InputSize&) const = default;
};

struct ModelConfig {
  std::vector<LayerSpec> layers;
  InputSize input;
  int num_classes = 0;
  std::string finetune_boundary;

  const LayerSpec& layer(const std::string& name) const;
  int layer_index(const std::string& name) const;  // -1 when absent
  bool operator==(const ModelConfig&) const = default;
};

// Checks name uniqueness, shape composition, the sigmoid head and the
// finetune boundary. Returns per-layer output shapes without the batch axis.
std::vector<Shape> ValidateConfig(const ModelConfig& config);

// VGG-style 4-block network with fc6/fcA/fcB head and sigmoid output.
// Conv widths 16/32/64/64, fc widths 256/128/num_classes.
ModelConfig BuildTinyDan(int num_classes, InputSize input = {});

enum class Phase { kPhase1, kPhase2, kFull };

const char* PhaseName(Phase phase);

// Phase1: affine layers only. Phase2: additionally the block holding the
// finetune boundary and everything after it. Full: all layers.
void SetTrainable(ModelConfig& config, Phase phase);

template <typename T>
struct LayerParams {
  Tensor<T> weight;
  Tensor<T> bias;
  bool operator==(const LayerParams&) const = default;
};

// Keyed by layer name.
template <typename T>
using ParameterSet = std::map<std::string, LayerParams<T>>;

// fc layers: N(0, 0.005) weights, bias 0.1. conv layers: N(0, sqrt(2/fan_in)),
// bias 0.
ParameterSet<float> InitializeParameters(const ModelConfig& config, Rng& rng);

// Fails with kConfigMismatch when a tensor is missing or mis-shaped.
template <typename T>
void CheckParameters(const ModelConfig& config, const ParameterSet<T>& params);

template <typename To, typename From>
ParameterSet<To> CastParameters(const ParameterSet<From>& params) {
  ParameterSet<To> out;
  for (const auto& [name, p] : params) out[name] = {p.weight.template cast<To>(), p.bias.template cast<To>()};
  return out;
}

template <typename T>
struct ForwardTrace {
  NodeId input = 0;
  std::vector<NodeId> layer_outputs;  // one per layer, in config order
  NodeId logits = 0;
  NodeId scores = 0;
  std::map<std::string, std::pair<NodeId, NodeId>> param_nodes;  // weight, bias
};

// Records the forward pass on graph. Parameters of non-frozen layers are
// marked requires_grad when track_grads is set.
template <typename T>
ForwardTrace<T> BuildForward(Graph<T>& graph, const ModelConfig& config, const ParameterSet<T>& params,
                             const Tensor<T>& batch, bool training, Rng& rng, bool track_grads);

template <typename T>
struct ModelOutput {
  Tensor<T> scores;  // [B,N] sigmoid(logits)
  Tensor<T> logits;  // [B,N]
};

template <typename T>
ModelOutput<T> Forward(const ModelConfig& config, const ParameterSet<T>& params, const Tensor<T>& batch,
                       bool training, Rng& rng);

}  // namespace dan
