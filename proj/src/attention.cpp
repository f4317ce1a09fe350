#include "dan/attention.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "dan/data.hpp"
#include "dan/io.hpp"
#include "dan/ops.hpp"

namespace dan {

double AttentionMap::total() const {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum;
}

namespace {

TensorD Positive(const TensorD& t) {
  TensorD out = t;
  for (auto& v : out.data()) v = std::max(v, 0.0);
  return out;
}

// Redistributes mass over the layer input. shared by conv and affine: the
// normalizer is the layer applied to a+ with w+ and no bias, the child share
// is a+ times the transposed layer applied to mass / normalizer.
TensorD WinnerTakeAll(const LayerSpec& layer, const LayerParams<double>& p, const TensorD& activation,
                      const TensorD& mass, double* lost) {
  const TensorD a = Positive(activation);
  const TensorD w = Positive(p.weight);
  const TensorD zero_bias(p.bias.shape(), 0.0);
  const bool conv = layer.kind == LayerKind::kConv;
  const TensorD z = conv ? ops::Conv2d(a, w, zero_bias, layer.stride, layer.padding) : ops::Affine(a, w, zero_bias);
  TensorD ratio(z.shape(), 0.0);
  for (std::size_t i = 0; i < z.numel(); ++i) {
    if (mass[i] == 0.0) continue;
    if (z[i] > 0.0) {
      ratio[i] = mass[i] / z[i];
    } else {
      *lost += mass[i];
    }
  }
  TensorD back(a.shape(), 0.0);
  if (conv) {
    ops::Conv2dBackward(a, w, ratio, layer.stride, layer.padding, &back, static_cast<TensorD*>(nullptr), static_cast<TensorD*>(nullptr));
  } else {
    ops::AffineBackward(a, w, ratio, &back, static_cast<TensorD*>(nullptr), static_cast<TensorD*>(nullptr));
  }
  for (std::size_t i = 0; i < back.numel(); ++i) back[i] *= a[i];
  return back;
}

}  // namespace

AttentionMap ExcitationMap(const ModelConfig& config, const ParameterSet<float>& params, const TensorF& input,
                           int class_index, const std::string& target_layer) {
  Require(class_index >= 0 && class_index < config.num_classes, ErrorKind::kParameter,
          "class index " + std::to_string(class_index) + " outside [0, " + std::to_string(config.num_classes) + ")");
  Require(input.rank() == 3 && input.dim(0) == config.input.channels && input.dim(1) == config.input.height &&
              input.dim(2) == config.input.width,
          ErrorKind::kDimension, "attention input must be " + ShapeString({config.input.channels, config.input.height,
                                                                       config.input.width}) +
                                     ", got " + ShapeString(input.shape()));
  int target = -1;
  if (target_layer != "input") {
    target = config.layer_index(target_layer);
    Require(target >= 0 && config.layers[static_cast<std::size_t>(target)].kind == LayerKind::kConv,
            ErrorKind::kConfig, "attention layer '" + target_layer + "' is not a conv layer or 'input'");
  }
  int logits_layer = -1;
  for (int i = static_cast<int>(config.layers.size()) - 1; i >= 0; --i) {
    if (config.layers[static_cast<std::size_t>(i)].kind == LayerKind::kAffine) {
      logits_layer = i;
      break;
    }
  }
  Require(logits_layer > target, ErrorKind::kConfig, "model has no output layer above '" + target_layer + "'");

  const auto dparams = CastParameters<double>(params);
  Graph<double> graph;
  Rng rng(0);
  const TensorD batch = input.cast<double>().reshaped({1, input.dim(0), input.dim(1), input.dim(2)});
  const auto trace = BuildForward(graph, config, dparams, batch, false, rng, false);
  auto activation_into = [&](int i) -> const TensorD& {
    return i == 0 ? graph.value(trace.input) : graph.value(trace.layer_outputs[static_cast<std::size_t>(i - 1)]);
  };

  AttentionMap map;
  map.class_index = class_index;
  map.layer = target_layer;
  map.height = config.input.height;
  map.width = config.input.width;

  TensorD mass(graph.value(trace.layer_outputs[static_cast<std::size_t>(logits_layer)]).shape(), 0.0);
  mass[static_cast<std::size_t>(class_index)] = map.injected;
  for (int i = logits_layer; i > target; --i) {
    const LayerSpec& layer = config.layers[static_cast<std::size_t>(i)];
    const TensorD& below = activation_into(i);
    switch (layer.kind) {
      case LayerKind::kConv:
      case LayerKind::kAffine:
        mass = WinnerTakeAll(layer, dparams.at(layer.name), below, mass, &map.lost_mass);
        break;
      case LayerKind::kPool: {
        TensorD routed(below.shape(), 0.0);
        ops::MaxPool2Backward(graph.pool_argmax(trace.layer_outputs[static_cast<std::size_t>(i)]), mass,
                              below.shape(), &routed);
        mass = std::move(routed);
        break;
      }
      case LayerKind::kFlatten:
        mass = mass.reshaped(below.shape());
        break;
      case LayerKind::kRelu:
      case LayerKind::kDropout:
      case LayerKind::kSigmoid:
        break;
    }
  }

  Require(mass.rank() == 4, ErrorKind::kContract, "attention mass must be spatial at the target layer");
  const auto channels = mass.dim(1);
  const auto h = mass.dim(2);
  const auto w = mass.dim(3);
  Require(map.height % h == 0 && map.width % w == 0, ErrorKind::kDimension,
          "target layer resolution does not divide the input resolution");
  const auto fy = map.height / h;
  const auto fx = map.width / w;
  const double share = 1.0 / static_cast<double>(fy * fx);
  map.values.assign(static_cast<std::size_t>(map.height) * map.width, 0.0);
  for (std::int64_t y = 0; y < map.height; ++y) {
    for (std::int64_t x = 0; x < map.width; ++x) {
      double cell = 0.0;
      for (std::int64_t c = 0; c < channels; ++c) cell += mass[static_cast<std::size_t>((c * h + y / fy) * w + x / fx)];
      map.values[static_cast<std::size_t>(y * map.width + x)] = cell * share;
    }
  }
  const auto best = std::max_element(map.values.begin(), map.values.end());
  const auto offset = static_cast<int>(best - map.values.begin());
  map.max_x = offset % map.width;
  map.max_y = offset / map.width;
  return map;
}

EvalView MakeEvalView(const Checkpoint& checkpoint, const Image& image) {
  const int crop = checkpoint.config.input.height;
  const TensorF resized = ResizeBilinear(ImageToTensor(image), checkpoint.canonical_size, checkpoint.canonical_size);
  Rng rng(0);
  const TensorF view = Augment(resized, crop, AugmentMode::kEval, rng);
  EvalView out;
  out.base = Image(crop, crop);
  out.input = view;
  const std::size_t plane = static_cast<std::size_t>(crop) * crop;
  for (int c = 0; c < 3; ++c) {
    const auto mean = static_cast<float>(checkpoint.mean_rgb[c]);
    for (std::size_t i = 0; i < plane; ++i) {
      const float v = view[c * plane + i];
      out.base.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      out.input[c * plane + i] = v - mean;
    }
  }
  return out;
}

AttentionMap Attend(const Checkpoint& checkpoint, const EvalView& view, const std::string& class_name,
                    const std::string& target_layer) {
  const int index = checkpoint.schema.index_of(class_name);
  if (index < 0) {
    std::string names;
    for (const auto& n : checkpoint.schema.names()) names += (names.empty() ? "" : ", ") + n;
    Fail(ErrorKind::kConfig, "unknown class '" + class_name + "'; valid classes: " + names);
  }
  AttentionMap map = ExcitationMap(checkpoint.config, checkpoint.params, view.input, index, target_layer);
  map.class_name = class_name;
  return map;
}

Image RenderOverlay(const AttentionMap& map, const Image& base) {
  Require(base.width == map.width && base.height == map.height, ErrorKind::kDimension,
          "overlay base is " + std::to_string(base.width) + "x" + std::to_string(base.height) + ", map is " +
              std::to_string(map.width) + "x" + std::to_string(map.height));
  Image out = base;
  const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  if (peak <= 0.0) return out;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double heat = 0.75 * map.at(x, y) / peak;
      for (int c = 0; c < 3; ++c) {
        const double b = base.at(x, y, c);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(b + (255.0 - b) * heat));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> RenderGray(const AttentionMap& map) {
  std::vector<std::uint8_t> gray(map.values.size(), 0);
  const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  if (peak <= 0.0) return gray;
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(std::lround(255.0 * map.values[i] / peak));
  return gray;
}

std::string AttentionMetadataJson(const AttentionMap& map) {
  nlohmann::ordered_json j;
  j["class_index"] = map.class_index;
  j["class"] = map.class_name;
  j["layer"] = map.layer;
  j["width"] = map.width;
  j["height"] = map.height;
  j["injected_mass"] = map.injected;
  j["map_mass"] = map.total();
  j["lost_mass_fraction"] = map.lost_fraction();
  j["max_location"] = {{"x", map.max_x}, {"y", map.max_y}};
  return j.dump(2) + "\n";
}

HeatmapFiles ExportHeatmap(const AttentionMap& map, const Image& base, const std::string& path) {
  const Image overlay = RenderOverlay(map, base);
  const std::filesystem::path p(path);
  const std::filesystem::path stem = p.parent_path() / p.stem();
  HeatmapFiles files{path, stem.string() + "_map" + p.extension().string(), stem.string() + ".json"};
  WriteImage(files.overlay, overlay);
  WriteGrayImage(files.gray, map.width, map.height, RenderGray(map));
  WriteFileAtomic(files.metadata, AttentionMetadataJson(map));
  return files;
}

}  // namespace dan
