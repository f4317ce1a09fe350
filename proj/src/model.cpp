#include "dan/model.hpp"

#include <cmath>
#include <set>

namespace dan {

const char* LayerKindName(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kPool: return "pool";
    case LayerKind::kAffine: return "affine";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kFlatten: return "flatten";
  }
  return "?";
}

LayerKind ParseLayerKind(const std::string& name) {
  for (auto kind : {LayerKind::kConv, LayerKind::kPool, LayerKind::kAffine, LayerKind::kRelu,
                    LayerKind::kSigmoid, LayerKind::kDropout, LayerKind::kFlatten}) {
    if (name == LayerKindName(kind)) return kind;
  }
  Fail(ErrorKind::kConfig, "unknown layer kind '" + name + "'");
}

const char* PhaseName(Phase phase) {
  switch (phase) {
    case Phase::kPhase1: return "1";
    case Phase::kPhase2: return "2";
    case Phase::kFull: return "full";
  }
  return "?";
}

int ModelConfig::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const LayerSpec& ModelConfig::layer(const std::string& name) const {
  const int i = layer_index(name);
  Require(i >= 0, ErrorKind::kConfig, "no layer named '" + name + "'");
  return layers[static_cast<std::size_t>(i)];
}

std::vector<Shape> ValidateConfig(const ModelConfig& config) {
  Require(config.num_classes >= 1, ErrorKind::kConfig, "num_classes must be >= 1");
  Require(config.input.channels > 0 && config.input.height > 0 && config.input.width > 0,
          ErrorKind::kConfig, "input size must be positive");
  Require(!config.layers.empty(), ErrorKind::kConfig, "model has no layers");
  std::set<std::string> names;
  std::vector<Shape> shapes;
  Shape shape{config.input.channels, config.input.height, config.input.width};
  for (const auto& l : config.layers) {
    Require(!l.name.empty(), ErrorKind::kConfig, "layer without a name");
    Require(names.insert(l.name).second, ErrorKind::kConfig, "duplicate layer name '" + l.name + "'");
    const std::string where = "layer '" + l.name + "': ";
    switch (l.kind) {
      case LayerKind::kConv: {
        Require(shape.size() == 3, ErrorKind::kConfig, where + "conv needs a [C,H,W] input");
        Require(l.in_channels == shape[0], ErrorKind::kConfig,
                where + "in_channels " + std::to_string(l.in_channels) + " != incoming " +
                    std::to_string(shape[0]));
        Require(l.out_channels > 0 && l.kernel > 0 && l.stride >= 1 && l.padding >= 0, ErrorKind::kConfig,
                where + "invalid conv sizes");
        Require(l.kernel <= shape[1] + 2 * l.padding && l.kernel <= shape[2] + 2 * l.padding,
                ErrorKind::kConfig, where + "kernel larger than padded input");
        shape = {l.out_channels, (shape[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                 (shape[2] + 2 * l.padding - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::kPool:
        Require(shape.size() == 3 && shape[1] % 2 == 0 && shape[2] % 2 == 0, ErrorKind::kConfig,
                where + "pool needs even spatial dims, got " + ShapeString(shape));
        shape = {shape[0], shape[1] / 2, shape[2] / 2};
        break;
      case LayerKind::kFlatten:
        shape = {static_cast<std::int64_t>(ShapeNumel(shape))};
        break;
      case LayerKind::kAffine:
        Require(shape.size() == 1, ErrorKind::kConfig, where + "affine needs a flat input");
        Require(l.in_features == shape[0], ErrorKind::kConfig,
                where + "in_features " + std::to_string(l.in_features) + " != incoming " +
                    std::to_string(shape[0]));
        Require(l.out_features > 0, ErrorKind::kConfig, where + "out_features must be positive");
        shape = {l.out_features};
        break;
      case LayerKind::kDropout:
        Require(l.rate >= 0.0 && l.rate < 1.0, ErrorKind::kConfig, where + "dropout rate must be in [0,1)");
        break;
      case LayerKind::kRelu:
      case LayerKind::kSigmoid:
        break;
    }
    shapes.push_back(shape);
  }
  const auto& last = config.layers.back();
  Require(last.kind == LayerKind::kSigmoid, ErrorKind::kConfig, "final layer must be a sigmoid");
  Require(shape.size() == 1 && shape[0] == config.num_classes, ErrorKind::kConfig,
          "sigmoid head has " + ShapeString(shape) + " units, expected " + std::to_string(config.num_classes));
  Require(config.layers.size() >= 2 && config.layers[config.layers.size() - 2].kind == LayerKind::kAffine,
          ErrorKind::kConfig, "sigmoid must follow an affine layer");
  const int boundary = config.layer_index(config.finetune_boundary);
  Require(boundary >= 0 && config.layers[static_cast<std::size_t>(boundary)].kind == LayerKind::kConv,
          ErrorKind::kConfig, "finetune boundary '" + config.finetune_boundary + "' is not a conv layer");
  return shapes;
}

ModelConfig BuildTinyDan(int num_classes, InputSize input) {
  Require(num_classes >= 1, ErrorKind::kConfig, "num_classes must be >= 1");
  Require(input.channels > 0, ErrorKind::kConfig, "input channels must be positive");
  Require(input.height > 0 && input.width > 0 && input.height % 16 == 0 && input.width % 16 == 0,
          ErrorKind::kConfig,
          "input size " + std::to_string(input.height) + "x" + std::to_string(input.width) +
              " must be divisible by 16");
  ModelConfig config;
  config.input = input;
  config.num_classes = num_classes;
  config.finetune_boundary = "conv4_1";

  const std::vector<std::pair<int, int>> blocks = {{16, 2}, {32, 2}, {64, 2}, {64, 1}};
  int channels = input.channels;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const int block = static_cast<int>(b) + 1;
    const auto [width, depth] = blocks[b];
    for (int i = 1; i <= depth; ++i) {
      const std::string suffix = std::to_string(block) + "_" + std::to_string(i);
      LayerSpec conv;
      conv.kind = LayerKind::kConv;
      conv.name = "conv" + suffix;
      conv.in_channels = channels;
      conv.out_channels = width;
      conv.kernel = 3;
      conv.padding = 1;
      conv.block_id = block;
      config.layers.push_back(conv);
      config.layers.push_back({.kind = LayerKind::kRelu, .name = "relu" + suffix, .block_id = block});
      channels = width;
    }
    config.layers.push_back({.kind = LayerKind::kPool, .name = "pool" + std::to_string(block), .block_id = block});
  }
  const int head = static_cast<int>(blocks.size()) + 1;
  const int flat = channels * (input.height / 16) * (input.width / 16);
  config.layers.push_back({.kind = LayerKind::kFlatten, .name = "flatten", .block_id = head});

  auto affine = [&](const std::string& name, int in, int out) {
    LayerSpec l;
    l.kind = LayerKind::kAffine;
    l.name = name;
    l.in_features = in;
    l.out_features = out;
    l.block_id = head;
    config.layers.push_back(l);
  };
  auto relu_dropout = [&](const std::string& tag) {
    config.layers.push_back({.kind = LayerKind::kRelu, .name = "relu" + tag, .block_id = head});
    config.layers.push_back({.kind = LayerKind::kDropout, .name = "drop" + tag, .rate = 0.5, .block_id = head});
  };
  affine("fc6", flat, 256);
  relu_dropout("6");
  affine("fcA", 256, 128);
  relu_dropout("A");
  affine("fcB", 128, num_classes);
  config.layers.push_back({.kind = LayerKind::kSigmoid, .name = "sigmoid", .block_id = head});
  ValidateConfig(config);
  return config;
}

void SetTrainable(ModelConfig& config, Phase phase) {
  const int boundary = config.layer_index(config.finetune_boundary);
  Require(boundary >= 0, ErrorKind::kConfig, "finetune boundary '" + config.finetune_boundary + "' missing");
  const int boundary_block = config.layers[static_cast<std::size_t>(boundary)].block_id;
  std::size_t first_unfrozen = config.layers.size();
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    if (config.layers[i].block_id == boundary_block) {
      first_unfrozen = i;
      break;
    }
  }
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    auto& l = config.layers[i];
    switch (phase) {
      case Phase::kPhase1: l.frozen = l.kind != LayerKind::kAffine; break;
      case Phase::kPhase2: l.frozen = l.kind != LayerKind::kAffine && i < first_unfrozen; break;
      case Phase::kFull: l.frozen = false; break;
    }
  }
}

ParameterSet<float> InitializeParameters(const ModelConfig& config, Rng& rng) {
  ValidateConfig(config);
  ParameterSet<float> params;
  for (const auto& l : config.layers) {
    if (l.kind == LayerKind::kConv) {
      const int fan_in = l.in_channels * l.kernel * l.kernel;
      const double stddev = std::sqrt(2.0 / fan_in);
      TensorF w({l.out_channels, l.in_channels, l.kernel, l.kernel});
      for (auto& v : w.data()) v = static_cast<float>(rng.normal(0.0, stddev));
      params[l.name] = {std::move(w), TensorF({l.out_channels}, 0.0f)};
    } else if (l.kind == LayerKind::kAffine) {
      TensorF w({l.out_features, l.in_features});
      for (auto& v : w.data()) v = static_cast<float>(rng.normal(0.0, 0.005));
      params[l.name] = {std::move(w), TensorF({l.out_features}, 0.1f)};
    }
  }
  return params;
}

template <typename T>
void CheckParameters(const ModelConfig& config, const ParameterSet<T>& params) {
  std::size_t expected = 0;
  for (const auto& l : config.layers) {
    if (!l.has_params()) continue;
    ++expected;
    auto it = params.find(l.name);
    Require(it != params.end(), ErrorKind::kConfigMismatch, "missing parameters for layer '" + l.name + "'");
    const Shape w = l.kind == LayerKind::kConv ? Shape{l.out_channels, l.in_channels, l.kernel, l.kernel}
                                               : Shape{l.out_features, l.in_features};
    const Shape b = l.kind == LayerKind::kConv ? Shape{l.out_channels} : Shape{l.out_features};
    Require(it->second.weight.shape() == w && it->second.bias.shape() == b, ErrorKind::kConfigMismatch,
            "layer '" + l.name + "' parameters " + ShapeString(it->second.weight.shape()) + "/" +
                ShapeString(it->second.bias.shape()) + " do not match config " + ShapeString(w) + "/" +
                ShapeString(b));
  }
  Require(params.size() == expected, ErrorKind::kConfigMismatch, "parameter set has tensors for unknown layers");
}

template <typename T>
ForwardTrace<T> BuildForward(Graph<T>& graph, const ModelConfig& config, const ParameterSet<T>& params,
                             const Tensor<T>& batch, bool training, Rng& rng, bool track_grads) {
  Require(batch.rank() == 4 && batch.dim(1) == config.input.channels && batch.dim(2) == config.input.height &&
              batch.dim(3) == config.input.width,
          ErrorKind::kDimension,
          "batch shape " + ShapeString(batch.shape()) + " does not match model input [B," +
              std::to_string(config.input.channels) + "," + std::to_string(config.input.height) + "," +
              std::to_string(config.input.width) + "]");
  ForwardTrace<T> trace;
  trace.input = graph.Leaf(batch, false);
  NodeId x = trace.input;
  for (const auto& l : config.layers) {
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kAffine: {
        auto it = params.find(l.name);
        Require(it != params.end(), ErrorKind::kConfigMismatch, "missing parameters for layer '" + l.name + "'");
        const bool grad = track_grads && !l.frozen;
        const NodeId w = graph.Leaf(it->second.weight, grad);
        const NodeId b = graph.Leaf(it->second.bias, grad);
        trace.param_nodes[l.name] = {w, b};
        x = l.kind == LayerKind::kConv ? graph.Conv2d(x, w, b, l.stride, l.padding) : graph.Affine(x, w, b);
        if (l.kind == LayerKind::kAffine) trace.logits = x;
        break;
      }
      case LayerKind::kPool: x = graph.MaxPool2(x); break;
      case LayerKind::kRelu: x = graph.Relu(x); break;
      case LayerKind::kDropout: x = graph.Dropout(x, l.rate, training, rng); break;
      case LayerKind::kFlatten: x = graph.Flatten(x); break;
      case LayerKind::kSigmoid: x = graph.Sigmoid(x); break;
    }
    trace.layer_outputs.push_back(x);
  }
  trace.scores = x;
  return trace;
}

template <typename T>
ModelOutput<T> Forward(const ModelConfig& config, const ParameterSet<T>& params, const Tensor<T>& batch,
                       bool training, Rng& rng) {
  Graph<T> graph;
  auto trace = BuildForward(graph, config, params, batch, training, rng, false);
  return {graph.value(trace.scores), graph.value(trace.logits)};
}

#define DAN_INSTANTIATE_MODEL(T)                                                                        \
  template void CheckParameters(const ModelConfig&, const ParameterSet<T>&);                            \
  template ForwardTrace<T> BuildForward(Graph<T>&, const ModelConfig&, const ParameterSet<T>&,          \
                                        const Tensor<T>&, bool, Rng&, bool);                            \
  template ModelOutput<T> Forward(const ModelConfig&, const ParameterSet<T>&, const Tensor<T>&, bool, Rng&);

DAN_INSTANTIATE_MODEL(float)
DAN_INSTANTIATE_MODEL(double)

}  // namespace dan
