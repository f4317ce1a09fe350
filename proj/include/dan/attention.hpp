#pragma once

#include <string>
#include <vector>

#include "dan/checkpoint.hpp"
#include "dan/image.hpp"
#include "dan/model.hpp"

namespace dan {

// Excitation mass per input-resolution pixel for one class.
struct AttentionMap {
  int class_index = 0;
  std::string class_name;
  std::string layer;
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major H x W, all >= 0
  double injected = 1.0;
  double lost_mass = 0.0;  // dropped at units with no positive path
  int max_x = 0;
  int max_y = 0;

  double total() const;
  double lost_fraction() const { return injected > 0 ? lost_mass / injected : 0.0; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr const char* kDefaultAttentionLayer = "conv1_1";

// Non-contrastive excitation backprop. Unit mass 1 starts at the logit of
// class_index (the sigmoid is bypassed) and moves toward target_layer; a
// child receives parent_mass * a_child * w+ / sum(a_child' * w+). ReLU and
// dropout pass mass through, pooling routes it to the argmax. The result is
// summed over channels and spread over the input pixels each cell covers.
// target_layer is a conv layer name or "input".
AttentionMap ExcitationMap(const ModelConfig& config, const ParameterSet<float>& params, const TensorF& input,
                           int class_index, const std::string& target_layer = kDefaultAttentionLayer);

// Eval view of an arbitrary image: whole image resized to the canonical
// size and center-cropped, as the network sees it.
struct EvalView {
  TensorF input;  // mean-subtracted [C,H,W]
  Image base;     // the same pixels before mean subtraction
};

EvalView MakeEvalView(const Checkpoint& checkpoint, const Image& image);

AttentionMap Attend(const Checkpoint& checkpoint, const EvalView& view, const std::string& class_name,
                    const std::string& target_layer = kDefaultAttentionLayer);

struct HeatmapFiles {
  std::string overlay;
  std::string gray;
  std::string metadata;
};

// Overlay pixel = base + (255 - base) * 0.75 * m / max(m). The gray map is
// round(255 * m / max(m)) and goes to <stem>_map<ext>; metadata to <stem>.json.
HeatmapFiles ExportHeatmap(const AttentionMap& map, const Image& base, const std::string& path);

Image RenderOverlay(const AttentionMap& map, const Image& base);
std::vector<std::uint8_t> RenderGray(const AttentionMap& map);
std::string AttentionMetadataJson(const AttentionMap& map);

}  // namespace dan
