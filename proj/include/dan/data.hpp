#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dan/image.hpp"
#include "dan/rng.hpp"
#include "dan/schema.hpp"
#include "dan/tensor.hpp"

namespace dan {

// Half-open pixel box [x0,x1) x [y0,y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(const BBox& o) const { return x0 <= o.x0 && y0 <= o.y0 && x1 >= o.x1 && y1 >= o.y1; }
  bool operator==(const BBox&) const = default;
};

enum class Split { kTrain, kVal, kTest };

const char* SplitName(Split split);
Split ParseSplit(const std::string& name);

struct DatasetRecord {
  std::string image_id;
  Image image;
  std::optional<BBox> bbox;
  std::vector<int> labels;  // raw: {-1,0,+1} or {0,1}
  Split split = Split::kTrain;
  bool operator==(const DatasetRecord&) const = default;
};

struct Dataset {
  AttributeSchema schema;
  std::vector<DatasetRecord> records;

  std::vector<const DatasetRecord*> split(Split s) const;
  std::size_t count(Split s) const;
  // Records with raw label +1 for class k in split s.
  std::vector<int> positive_counts(Split s) const;
};

struct PaletteColor {
  std::string name;
  std::array<std::uint8_t, 3> rgb{};
};

struct SyntheticConfig {
  int train_count = 2000;
  int val_count = 300;
  int test_count = 500;
  int image_size = 80;
  std::vector<PaletteColor> palette = DefaultPalette();
  std::vector<std::string> shapes = {"round", "rectangular", "square", "long"};
  // "plain" draws no pattern and has no class of its own.
  std::vector<std::string> patterns = {"striped", "spotted", "plain"};
  double clutter = 0.3;
  std::uint64_t seed = 1;
  // Minimum pairwise RGB distance between palette entries.
  double min_palette_distance = 60.0;

  static std::vector<PaletteColor> DefaultPalette();
};

inline constexpr std::array<std::uint8_t, 3> kSyntheticBackground = {128, 128, 128};

// One figure per image with sampled color, shape and pattern; background
// clutter (pixel noise plus palette-colored distractor blobs away from the
// figure) scales with config.clutter. Fully determined by the seed: each
// record draws from a substream keyed by its image id.
Dataset GenerateSynthetic(const SyntheticConfig& config);

// CSV header: image_path,split,bbox_x0,bbox_y0,bbox_x1,bbox_y1,<classes...>.
// Reads schema.json next to the manifest when present.
Dataset LoadManifest(const std::string& path);

// Writes <dir>/images/<id>.ppm, <dir>/manifest.csv and <dir>/schema.json.
void WriteDataset(const Dataset& dataset, const std::string& dir);

// -1 -> 0, 0 -> 0.5, +1 -> 1 (ternary); {0,1} passes through (binary).
std::vector<double> MapLabels(std::span<const int> raw, LabelScheme scheme = LabelScheme::kTernary);

// bbox grown by margin * width left/right and margin * height top/bottom,
// rounded outward and clamped to the image.
BBox CropWindow(const BBox& bbox, int image_width, int image_height, double margin);

// kPrecondition when the record has no bbox.
Image CropBboxMargin(const DatasetRecord& record, double margin = 0.10);

Image CropImage(const Image& image, const BBox& window);

// Half-pixel-center bilinear resample of a [C,H,W] tensor.
TensorF ResizeBilinear(const TensorF& chw, int out_height, int out_width);

TensorF ImageToTensor(const Image& image);

// Bilinear resize to canonical x canonical, then subtract mean_rgb; no scaling.
TensorF Preprocess(const Image& image, int canonical, const std::array<double, 3>& mean_rgb);

enum class AugmentMode { kTrain, kEval };

// Train: uniform random crop offset and horizontal flip with probability
// 0.5. Eval: center crop, no flip.
TensorF Augment(const TensorF& chw, int crop, AugmentMode mode, Rng& rng);

TensorF FlipHorizontal(const TensorF& chw);

// Pixel-weighted per-channel mean.
std::array<double, 3> ComputeMeanRgb(std::span<const Image> images);

}  // namespace dan
