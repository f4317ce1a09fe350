#include "dan/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dan/io.hpp"

namespace dan {
namespace fs = std::filesystem;

const char* SplitName(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split ParseSplit(const std::string& name) {
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (name == SplitName(s)) return s;
  }
  Fail(ErrorKind::kConfig, "unknown split '" + name + "' (expected train, val or test)");
}

std::vector<const DatasetRecord*> Dataset::split(Split s) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

std::size_t Dataset::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [s](const auto& r) { return r.split == s; }));
}

std::vector<int> Dataset::positive_counts(Split s) const {
  std::vector<int> out(schema.size(), 0);
  for (const auto& r : records) {
    if (r.split != s) continue;
    for (std::size_t k = 0; k < r.labels.size() && k < out.size(); ++k) out[k] += r.labels[k] == 1 ? 1 : 0;
  }
  return out;
}

std::vector<PaletteColor> SyntheticConfig::DefaultPalette() {
  return {{"red", {220, 30, 30}},   {"green", {30, 180, 40}},   {"blue", {30, 60, 220}},
          {"yellow", {240, 220, 30}}, {"white", {250, 250, 250}}, {"black", {15, 15, 15}}};
}

namespace {

double ColorDistance(const std::array<std::uint8_t, 3>& a, const std::array<std::uint8_t, 3>& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double diff = static_cast<double>(a[c]) - b[c];
    d += diff * diff;
  }
  return std::sqrt(d);
}

std::uint8_t ClampByte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Lighter tint for dark colors, darker shade for light ones.
std::array<std::uint8_t, 3> PatternColor(const std::array<std::uint8_t, 3>& c) {
  const double luma = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
  std::array<std::uint8_t, 3> out{};
  for (int i = 0; i < 3; ++i) {
    out[i] = luma >= 128.0 ? ClampByte(c[i] * 0.35) : ClampByte(c[i] + (255.0 - c[i]) * 0.75);
  }
  return out;
}

struct Mask {
  int size;
  std::vector<std::uint8_t> on;
  explicit Mask(int s) : size(s), on(static_cast<std::size_t>(s) * s, 0) {}
  std::uint8_t& at(int x, int y) { return on[static_cast<std::size_t>(y) * size + x]; }
};

void DrawFigure(Mask& mask, const std::string& shape, double cx, double cy, double w, double h) {
  for (int y = 0; y < mask.size; ++y) {
    for (int x = 0; x < mask.size; ++x) {
      const double px = x + 0.5 - cx;
      const double py = y + 0.5 - cy;
      bool inside;
      if (shape == "round") {
        const double rx = w / 2, ry = h / 2;
        inside = (px * px) / (rx * rx) + (py * py) / (ry * ry) <= 1.0;
      } else {
        inside = std::abs(px) <= w / 2 && std::abs(py) <= h / 2;
      }
      if (inside) mask.at(x, y) = 1;
    }
  }
}

Dataset MakeSchema(const SyntheticConfig& config) {
  Dataset ds;
  for (const auto& c : config.palette) ds.schema.classes.push_back({c.name, AttributeGroup::kColor});
  for (const auto& s : config.shapes) ds.schema.classes.push_back({s, AttributeGroup::kShape});
  for (const auto& p : config.patterns) {
    if (p != "plain") ds.schema.classes.push_back({p, AttributeGroup::kPattern});
  }
  ds.schema.label_scheme = LabelScheme::kTernary;
  ds.schema.Validate();
  return ds;
}

DatasetRecord GenerateRecord(const SyntheticConfig& config, const AttributeSchema& schema, const std::string& id,
                             Split split) {
  const int size = config.image_size;
  Rng rng = Rng::Substream(config.seed, id);
  const auto& color = config.palette[rng.uniform_int(config.palette.size())];
  const std::string& shape = config.shapes[rng.uniform_int(config.shapes.size())];
  const std::string& pattern = config.patterns[rng.uniform_int(config.patterns.size())];

  // Figure geometry.
  const double base = rng.uniform(0.40, 0.65) * size;
  double w = base, h = base;
  if (shape == "rectangular") {
    w = base * 1.15;
    h = w / 1.8;
  } else if (shape == "long") {
    w = rng.uniform(0.70, 0.85) * size;
    h = w / 4.5;
  }
  if ((shape == "rectangular" || shape == "long") && rng.bernoulli(0.5)) std::swap(w, h);
  const double margin = 2.0;
  const double cx = rng.uniform(margin + w / 2, size - margin - w / 2);
  const double cy = rng.uniform(margin + h / 2, size - margin - h / 2);
  Mask figure(size);
  DrawFigure(figure, shape, cx, cy, w, h);
  BBox box{size, size, 0, 0};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!figure.at(x, y)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x + 1);
      box.y1 = std::max(box.y1, y + 1);
    }
  }

  // Background texture.
  Image image(size, size);
  const double noise = 48.0 * config.clutter;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = kSyntheticBackground[c] + (noise > 0 ? rng.uniform(-noise, noise) : 0.0);
        image.at(x, y, c) = ClampByte(v);
      }
    }
  }

  // Distractor blobs outside the (grown) figure box.
  const int distractors = static_cast<int>(std::lround(config.clutter * 6.0));
  const BBox keep_out = CropWindow(box, size, size, 0.15);
  for (int d = 0; d < distractors; ++d) {
    const auto& dc = config.palette[rng.uniform_int(config.palette.size())];
    const int dw = static_cast<int>(rng.uniform_int(std::max(3, size / 12), std::max(4, size / 6)));
    const int dh = static_cast<int>(rng.uniform_int(std::max(3, size / 12), std::max(4, size / 6)));
    const bool round = rng.bernoulli(0.5);
    for (int attempt = 0; attempt < 20; ++attempt) {
      const int x0 = static_cast<int>(rng.uniform_int(0, size - dw));
      const int y0 = static_cast<int>(rng.uniform_int(0, size - dh));
      const BBox blob{x0, y0, x0 + dw, y0 + dh};
      const bool overlaps = blob.x0 < keep_out.x1 && blob.x1 > keep_out.x0 && blob.y0 < keep_out.y1 &&
                            blob.y1 > keep_out.y0;
      if (overlaps) continue;
      Mask m(size);
      DrawFigure(m, round ? "round" : "square", x0 + dw / 2.0, y0 + dh / 2.0, dw, dh);
      for (int y = blob.y0; y < blob.y1; ++y) {
        for (int x = blob.x0; x < blob.x1; ++x) {
          if (m.at(x, y)) image.set(x, y, dc.rgb[0], dc.rgb[1], dc.rgb[2]);
        }
      }
      break;
    }
  }

  // Figure fill and pattern.
  const auto accent = PatternColor(color.rgb);
  std::array<std::uint8_t, 3> rim_rgb{};
  for (int c = 0; c < 3; ++c) rim_rgb[c] = ClampByte((color.rgb[c] + kSyntheticBackground[c]) / 2.0);
  const int period = std::max(4, size / 12);
  const int stripe = std::max(1, period / 3);
  const bool vertical = rng.bernoulli(0.5);
  const int phase_x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(period)));
  const int phase_y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(period)));
  const double dot_radius = period * 0.25;
  const double figure_noise = 16.0 * config.clutter;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!figure.at(x, y)) continue;
      // One-pixel rim, the fill blended halfway toward the background; its
      // thickness after resizing keeps the aspect ratio visible in cropped
      // views.
      const bool rim = x == 0 || y == 0 || x + 1 == size || y + 1 == size || !figure.at(x - 1, y) ||
                       !figure.at(x + 1, y) || !figure.at(x, y - 1) || !figure.at(x, y + 1);
      bool marked = false;
      if (!rim && pattern == "striped") {
        const int t = vertical ? x + phase_x : y + phase_y;
        marked = (t % period) < stripe;
      } else if (!rim && pattern == "spotted") {
        const double fx = std::fmod(x + 0.5 + phase_x, period) - period / 2.0;
        const double fy = std::fmod(y + 0.5 + phase_y, period) - period / 2.0;
        marked = fx * fx + fy * fy <= dot_radius * dot_radius;
      }
      const auto& rgb = rim ? rim_rgb : (marked ? accent : color.rgb);
      for (int c = 0; c < 3; ++c) {
        const double jitter = figure_noise > 0 ? rng.uniform(-figure_noise, figure_noise) : 0.0;
        image.at(x, y, c) = ClampByte(rgb[c] + jitter);
      }
    }
  }

  DatasetRecord record;
  record.image_id = id;
  record.image = std::move(image);
  record.bbox = box;
  record.split = split;
  record.labels.assign(schema.size(), -1);
  record.labels[static_cast<std::size_t>(schema.index_of(color.name))] = 1;
  record.labels[static_cast<std::size_t>(schema.index_of(shape))] = 1;
  if (pattern != "plain") record.labels[static_cast<std::size_t>(schema.index_of(pattern))] = 1;
  return record;
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

int ParseInt(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    Fail(ErrorKind::kMalformedInput, where + ": '" + s + "' is not an integer");
  }
  Require(used == s.size(), ErrorKind::kMalformedInput, where + ": '" + s + "' is not an integer");
  return v;
}

const std::vector<std::string> kManifestPrefix = {"image_path", "split",   "bbox_x0",
                                                  "bbox_y0",    "bbox_x1", "bbox_y1"};

}  // namespace

Dataset GenerateSynthetic(const SyntheticConfig& config) {
  Require(!config.palette.empty(), ErrorKind::kConfig, "synthetic palette is empty");
  Require(!config.shapes.empty(), ErrorKind::kConfig, "synthetic shape set is empty");
  Require(!config.patterns.empty(), ErrorKind::kConfig, "synthetic pattern set is empty");
  Require(config.train_count >= 0 && config.val_count >= 0 && config.test_count >= 0, ErrorKind::kConfig,
          "split counts must be >= 0");
  Require(config.image_size >= 16, ErrorKind::kConfig, "synthetic image size must be >= 16");
  Require(config.clutter >= 0.0 && config.clutter <= 1.0, ErrorKind::kConfig, "clutter must be in [0,1]");
  for (const auto& s : config.shapes) {
    Require(s == "round" || s == "rectangular" || s == "square" || s == "long", ErrorKind::kConfig,
            "unknown synthetic shape '" + s + "'");
  }
  for (const auto& p : config.patterns) {
    Require(p == "striped" || p == "spotted" || p == "plain", ErrorKind::kConfig,
            "unknown synthetic pattern '" + p + "'");
  }
  for (std::size_t i = 0; i < config.palette.size(); ++i) {
    for (std::size_t j = i + 1; j < config.palette.size(); ++j) {
      Require(ColorDistance(config.palette[i].rgb, config.palette[j].rgb) >= config.min_palette_distance,
              ErrorKind::kConfig,
              "palette colors '" + config.palette[i].name + "' and '" + config.palette[j].name +
                  "' are not distinguishable");
    }
  }
  Dataset ds = MakeSchema(config);
  const std::pair<Split, int> splits[] = {
      {Split::kTrain, config.train_count}, {Split::kVal, config.val_count}, {Split::kTest, config.test_count}};
  for (const auto& [split, count] : splits) {
    for (int i = 0; i < count; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%05d", SplitName(split), i);
      ds.records.push_back(GenerateRecord(config, ds.schema, id, split));
    }
  }
  return ds;
}

Dataset LoadManifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorKind::kIo, "cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)), ErrorKind::kMalformedInput, "manifest '" + path + "' has no header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = SplitCsvLine(line);
  Require(header.size() >= kManifestPrefix.size() &&
              std::equal(kManifestPrefix.begin(), kManifestPrefix.end(), header.begin()),
          ErrorKind::kMalformedInput,
          "manifest header must start with image_path,split,bbox_x0,bbox_y0,bbox_x1,bbox_y1");
  const std::vector<std::string> class_names(header.begin() + static_cast<long>(kManifestPrefix.size()), header.end());

  Dataset ds;
  const fs::path sidecar = base / "schema.json";
  const bool has_sidecar = fs::exists(sidecar);
  if (has_sidecar) {
    ds.schema = SchemaFromJson(ReadFileBytes(sidecar.string()));
    Require(ds.schema.names() == class_names, ErrorKind::kConfig,
            "schema sidecar classes do not match the manifest header");
  } else {
    for (const auto& name : class_names) ds.schema.classes.push_back({name, DefaultGroupFor(name)});
    ds.schema.label_scheme = LabelScheme::kBinary;
  }
  ds.schema.Validate();

  bool saw_negative_one = false;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "manifest row " + std::to_string(row);
    const auto cells = SplitCsvLine(line);
    Require(cells.size() == header.size(), ErrorKind::kMalformedInput,
            where + ": expected " + std::to_string(header.size()) + " cells (" + std::to_string(class_names.size()) +
                " labels), got " + std::to_string(cells.size()));
    DatasetRecord record;
    const fs::path image_path = fs::path(cells[0]).is_absolute() ? fs::path(cells[0]) : base / cells[0];
    record.image_id = fs::path(cells[0]).stem().string();
    try {
      record.split = ParseSplit(cells[1]);
    } catch (const Error& e) {
      Fail(ErrorKind::kMalformedInput, where + ": " + e.what());
    }
    const bool any_bbox = !(cells[2].empty() && cells[3].empty() && cells[4].empty() && cells[5].empty());
    if (any_bbox) {
      BBox b{ParseInt(cells[2], where), ParseInt(cells[3], where), ParseInt(cells[4], where), ParseInt(cells[5], where)};
      record.bbox = b;
    }
    for (std::size_t k = 0; k < class_names.size(); ++k) {
      const int v = ParseInt(cells[kManifestPrefix.size() + k], where);
      Require(v == -1 || v == 0 || v == 1, ErrorKind::kMalformedInput,
              where + ": label " + std::to_string(v) + " for '" + class_names[k] + "' outside {-1,0,1}");
      saw_negative_one |= v == -1;
      record.labels.push_back(v);
    }
    Require(fs::exists(image_path), ErrorKind::kIo, where + ": missing image '" + image_path.string() + "'");
    try {
      record.image = ReadImage(image_path.string());
    } catch (const Error& e) {
      Fail(e.kind(), where + ": " + e.what());
    }
    if (record.bbox) {
      const BBox& b = *record.bbox;
      Require(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= record.image.width && b.y1 <= record.image.height &&
                  b.width() > 0 && b.height() > 0,
              ErrorKind::kMalformedInput, where + ": bbox outside the image or empty");
    }
    ds.records.push_back(std::move(record));
  }
  if (saw_negative_one) {
    Require(!has_sidecar || ds.schema.label_scheme == LabelScheme::kTernary, ErrorKind::kMalformedInput,
            "manifest contains -1 labels but the schema declares binary labels");
    ds.schema.label_scheme = LabelScheme::kTernary;
  }
  return ds;
}

void WriteDataset(const Dataset& dataset, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  Require(!ec, ErrorKind::kIo, "cannot create '" + (root / "images").string() + "'");
  std::ostringstream csv;
  for (std::size_t i = 0; i < kManifestPrefix.size(); ++i) csv << (i ? "," : "") << kManifestPrefix[i];
  for (const auto& c : dataset.schema.classes) csv << "," << c.name;
  csv << "\n";
  for (const auto& r : dataset.records) {
    const std::string rel = "images/" + r.image_id + ".ppm";
    WriteImage((root / rel).string(), r.image);
    csv << rel << "," << SplitName(r.split);
    if (r.bbox) {
      csv << "," << r.bbox->x0 << "," << r.bbox->y0 << "," << r.bbox->x1 << "," << r.bbox->y1;
    } else {
      csv << ",,,,";
    }
    for (int v : r.labels) csv << "," << v;
    csv << "\n";
  }
  WriteFileAtomic((root / "manifest.csv").string(), csv.str());
  WriteFileAtomic((root / "schema.json").string(), SchemaToJson(dataset.schema));
}

std::vector<double> MapLabels(std::span<const int> raw, LabelScheme scheme) {
  std::vector<double> out;
  out.reserve(raw.size());
  for (int v : raw) {
    if (scheme == LabelScheme::kTernary) {
      Require(v == -1 || v == 0 || v == 1, ErrorKind::kParameter, "label " + std::to_string(v) + " outside {-1,0,+1}");
      out.push_back(v == -1 ? 0.0 : (v == 0 ? 0.5 : 1.0));
    } else {
      Require(v == 0 || v == 1, ErrorKind::kParameter, "label " + std::to_string(v) + " outside {0,1}");
      out.push_back(static_cast<double>(v));
    }
  }
  return out;
}

BBox CropWindow(const BBox& bbox, int image_width, int image_height, double margin) {
  Require(margin >= 0.0, ErrorKind::kParameter, "crop margin must be >= 0");
  const double mx = margin * bbox.width();
  const double my = margin * bbox.height();
  constexpr double kEps = 1e-9;
  BBox w;
  w.x0 = std::max(0, static_cast<int>(std::floor(bbox.x0 - mx + kEps)));
  w.y0 = std::max(0, static_cast<int>(std::floor(bbox.y0 - my + kEps)));
  w.x1 = std::min(image_width, static_cast<int>(std::ceil(bbox.x1 + mx - kEps)));
  w.y1 = std::min(image_height, static_cast<int>(std::ceil(bbox.y1 + my - kEps)));
  return w;
}

Image CropImage(const Image& image, const BBox& window) {
  Require(window.x0 >= 0 && window.y0 >= 0 && window.x1 <= image.width && window.y1 <= image.height &&
              window.width() > 0 && window.height() > 0,
          ErrorKind::kPrecondition, "crop window outside the image or empty");
  Image out(window.width(), window.height());
  for (int y = 0; y < out.height; ++y) {
    const auto* src = &image.pixels[(static_cast<std::size_t>(window.y0 + y) * image.width + window.x0) * 3];
    std::copy(src, src + static_cast<std::size_t>(out.width) * 3, &out.pixels[static_cast<std::size_t>(y) * out.width * 3]);
  }
  return out;
}

Image CropBboxMargin(const DatasetRecord& record, double margin) {
  Require(record.bbox.has_value(), ErrorKind::kPrecondition, "record '" + record.image_id + "' has no bounding box");
  return CropImage(record.image, CropWindow(*record.bbox, record.image.width, record.image.height, margin));
}

TensorF ImageToTensor(const Image& image) {
  Require(image.width > 0 && image.height > 0, ErrorKind::kPrecondition, "zero-area image");
  TensorF t({3, image.height, image.width});
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) t[c * plane + i] = image.pixels[i * 3 + c];
  }
  return t;
}

TensorF ResizeBilinear(const TensorF& chw, int out_height, int out_width) {
  Require(chw.rank() == 3, ErrorKind::kDimension, "resize expects [C,H,W]");
  Require(out_height > 0 && out_width > 0, ErrorKind::kParameter, "resize target must be positive");
  const int channels = static_cast<int>(chw.dim(0));
  const int in_h = static_cast<int>(chw.dim(1));
  const int in_w = static_cast<int>(chw.dim(2));
  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
      const double src = std::max(0.0, (i + 0.5) * scale - 0.5);
      int lo = static_cast<int>(std::floor(src));
      if (lo >= in - 1) {
        t[i] = {in - 1, in - 1, 0.0};
      } else {
        t[i] = {lo, lo + 1, src - lo};
      }
    }
    return t;
  };
  const auto ty = taps(in_h, out_height);
  const auto tx = taps(in_w, out_width);
  TensorF out({channels, out_height, out_width});
  for (int c = 0; c < channels; ++c) {
    const float* src = chw.raw() + static_cast<std::size_t>(c) * in_h * in_w;
    float* dst = out.raw() + static_cast<std::size_t>(c) * out_height * out_width;
    for (int y = 0; y < out_height; ++y) {
      const auto& a = ty[y];
      for (int x = 0; x < out_width; ++x) {
        const auto& b = tx[x];
        const double top = src[a.lo * in_w + b.lo] * (1 - b.frac) + src[a.lo * in_w + b.hi] * b.frac;
        const double bottom = src[a.hi * in_w + b.lo] * (1 - b.frac) + src[a.hi * in_w + b.hi] * b.frac;
        dst[y * out_width + x] = static_cast<float>(top * (1 - a.frac) + bottom * a.frac);
      }
    }
  }
  return out;
}

TensorF Preprocess(const Image& image, int canonical, const std::array<double, 3>& mean_rgb) {
  Require(canonical > 0, ErrorKind::kParameter, "canonical size must be positive");
  TensorF t = ResizeBilinear(ImageToTensor(image), canonical, canonical);
  const std::size_t plane = static_cast<std::size_t>(canonical) * canonical;
  for (int c = 0; c < 3; ++c) {
    const auto mean = static_cast<float>(mean_rgb[c]);
    for (std::size_t i = 0; i < plane; ++i) t[c * plane + i] -= mean;
  }
  return t;
}

TensorF FlipHorizontal(const TensorF& chw) {
  Require(chw.rank() == 3, ErrorKind::kDimension, "flip expects [C,H,W]");
  TensorF out(chw.shape());
  const std::int64_t rows = chw.dim(0) * chw.dim(1);
  const std::int64_t w = chw.dim(2);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t x = 0; x < w; ++x) out[r * w + x] = chw[r * w + (w - 1 - x)];
  }
  return out;
}

TensorF Augment(const TensorF& chw, int crop, AugmentMode mode, Rng& rng) {
  Require(chw.rank() == 3, ErrorKind::kDimension, "augment expects [C,H,W]");
  const int h = static_cast<int>(chw.dim(1));
  const int w = static_cast<int>(chw.dim(2));
  Require(crop > 0 && crop <= h && crop <= w, ErrorKind::kParameter,
          "crop " + std::to_string(crop) + " larger than input " + std::to_string(h) + "x" + std::to_string(w));
  int oy, ox;
  bool flip = false;
  if (mode == AugmentMode::kTrain) {
    oy = static_cast<int>(rng.uniform_int(0, h - crop));
    ox = static_cast<int>(rng.uniform_int(0, w - crop));
    flip = rng.bernoulli(0.5);
  } else {
    oy = (h - crop) / 2;
    ox = (w - crop) / 2;
  }
  const std::int64_t channels = chw.dim(0);
  TensorF out({channels, crop, crop});
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int y = 0; y < crop; ++y) {
      const float* src = chw.raw() + (c * h + oy + y) * w + ox;
      float* dst = out.raw() + (c * crop + y) * crop;
      if (flip) {
        for (int x = 0; x < crop; ++x) dst[x] = src[crop - 1 - x];
      } else {
        std::copy(src, src + crop, dst);
      }
    }
  }
  return out;
}

std::array<double, 3> ComputeMeanRgb(std::span<const Image> images) {
  Require(!images.empty(), ErrorKind::kPrecondition, "mean RGB needs at least one training image");
  std::array<std::uint64_t, 3> sums{};
  std::uint64_t pixels = 0;
  for (const auto& img : images) {
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) sums[c] += img.pixels[i * 3 + c];
    }
    pixels += n;
  }
  Require(pixels > 0, ErrorKind::kPrecondition, "mean RGB over zero pixels");
  return {static_cast<double>(sums[0]) / pixels, static_cast<double>(sums[1]) / pixels,
          static_cast<double>(sums[2]) / pixels};
}

}  // namespace dan
