#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "dan/data.hpp"
#include "dan/io.hpp"
#include "dan/trainer.hpp"
#include "test_util.hpp"

using namespace dan;
using testutil::ErrorKindOf;
using testutil::TempDir;

namespace {

SyntheticConfig Small(double clutter, std::uint64_t seed = 3) {
  SyntheticConfig c;
  c.train_count = 24;
  c.val_count = 6;
  c.test_count = 10;
  c.image_size = 48;
  c.clutter = clutter;
  c.seed = seed;
  return c;
}

void WriteText(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

int Positive(const DatasetRecord& r, const AttributeSchema& s, AttributeGroup g) {
  int found = -1;
  for (int k : s.group_indices(g)) {
    if (r.labels[k] == 1) {
      CHECK(found == -1);
      found = k;
    }
  }
  return found;
}

}  // namespace

TEST_CASE("synthetic schema and labels") {
  const Dataset ds = GenerateSynthetic(Small(0.3));
  CHECK(ds.schema.size() == 12);
  CHECK(ds.schema.group_indices(AttributeGroup::kColor).size() == 6);
  CHECK(ds.schema.group_indices(AttributeGroup::kShape).size() == 4);
  CHECK(ds.schema.group_indices(AttributeGroup::kPattern).size() == 2);
  CHECK(ds.schema.index_of("plain") == -1);
  CHECK(ds.count(Split::kTrain) == 24);
  CHECK(ds.count(Split::kVal) == 6);
  CHECK(ds.count(Split::kTest) == 10);
  for (const auto& r : ds.records) {
    CHECK(r.labels.size() == ds.schema.size());
    int positives = 0;
    for (int v : r.labels) {
      CHECK((v == 1 || v == -1));
      positives += v == 1;
    }
    CHECK(positives >= 2);
    CHECK(Positive(r, ds.schema, AttributeGroup::kColor) >= 0);
    CHECK(Positive(r, ds.schema, AttributeGroup::kShape) >= 0);
    REQUIRE(r.bbox.has_value());
    CHECK(r.bbox->x0 >= 0);
    CHECK(r.bbox->y0 >= 0);
    CHECK(r.bbox->x1 <= r.image.width);
    CHECK(r.bbox->y1 <= r.image.height);
    CHECK(r.bbox->width() > 0);
    CHECK(r.bbox->height() > 0);
  }
}

TEST_CASE("synthetic generation is seed-determined") {
  const Dataset a = GenerateSynthetic(Small(0.5, 9));
  const Dataset b = GenerateSynthetic(Small(0.5, 9));
  CHECK(a.schema == b.schema);
  CHECK(a.records == b.records);
  const Dataset c = GenerateSynthetic(Small(0.5, 10));
  CHECK_FALSE(a.records == c.records);

  // Records are keyed by id, so growing a split leaves earlier records alone.
  SyntheticConfig more = Small(0.5, 9);
  more.train_count = 30;
  const Dataset d = GenerateSynthetic(more);
  CHECK(d.records[0] == a.records[0]);
  CHECK(d.records[23] == a.records[23]);
}

TEST_CASE("clutter 0 leaves a uniform background outside the bbox") {
  const Dataset ds = GenerateSynthetic(Small(0.0));
  for (const auto& r : ds.records) {
    const BBox& b = *r.bbox;
    for (int y = 0; y < r.image.height; ++y) {
      for (int x = 0; x < r.image.width; ++x) {
        if (x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1) continue;
        for (int c = 0; c < 3; ++c) REQUIRE(r.image.at(x, y, c) == kSyntheticBackground[c]);
      }
    }
  }
}

TEST_CASE("labeled color is the dominant figure hue at clutter 0") {
  const auto palette = SyntheticConfig::DefaultPalette();
  for (int size : {48, 64, 80}) {
    SyntheticConfig config = Small(0.0, static_cast<std::uint64_t>(size));
    config.train_count = 200;
    config.image_size = size;
    const Dataset ds = GenerateSynthetic(config);
    int sound = 0;
    for (const auto& r : ds.records) {
      std::map<std::string, int> votes;
      const BBox& b = *r.bbox;
      for (int y = b.y0; y < b.y1; ++y) {
        for (int x = b.x0; x < b.x1; ++x) {
          if (r.image.at(x, y, 0) == kSyntheticBackground[0] && r.image.at(x, y, 1) == kSyntheticBackground[1] &&
              r.image.at(x, y, 2) == kSyntheticBackground[2])
            continue;
          double best = 1e30;
          std::string name;
          for (const auto& p : palette) {
            double d = 0;
            for (int c = 0; c < 3; ++c) d += std::pow(double(r.image.at(x, y, c)) - p.rgb[c], 2);
            if (d < best) best = d, name = p.name;
          }
          ++votes[name];
        }
      }
      std::string top;
      int most = -1;
      for (const auto& [name, n] : votes) {
        if (n > most) most = n, top = name;
      }
      sound += ds.schema.index_of(top) == Positive(r, ds.schema, AttributeGroup::kColor);
    }
    CHECK(sound == static_cast<int>(ds.records.size()));
  }
}

TEST_CASE("synthetic config errors") {
  auto kind = [](SyntheticConfig c) { return ErrorKindOf([&] { GenerateSynthetic(c); }); };
  SyntheticConfig c = Small(0.3);
  c.palette.clear();
  CHECK(kind(c) == ErrorKind::kConfig);
  c = Small(0.3);
  c.shapes.clear();
  CHECK(kind(c) == ErrorKind::kConfig);
  c = Small(0.3);
  c.palette.push_back({"crimson", {225, 35, 30}});
  CHECK(kind(c) == ErrorKind::kConfig);
  c = Small(1.5);
  CHECK(kind(c) == ErrorKind::kConfig);
  c = Small(0.3);
  c.train_count = -1;
  CHECK(kind(c) == ErrorKind::kConfig);
}

TEST_CASE("manifest round trip") {
  TempDir dir("manifest");
  Dataset ds = GenerateSynthetic(Small(0.4));
  ds.records[1].bbox.reset();
  ds.records[2].labels[0] = 0;
  WriteDataset(ds, dir.path().string());
  const Dataset back = LoadManifest(dir / "manifest.csv");
  CHECK(back.schema == ds.schema);
  CHECK(back.records == ds.records);
}

TEST_CASE("manifest edge cases and errors") {
  TempDir dir("manifest_err");
  const std::string header = "image_path,split,bbox_x0,bbox_y0,bbox_x1,bbox_y1,red,striped\n";
  WriteText(dir / "empty.csv", header);
  const Dataset empty = LoadManifest(dir / "empty.csv");
  CHECK(empty.records.empty());
  CHECK(empty.schema.names() == std::vector<std::string>{"red", "striped"});
  CHECK(empty.schema.classes[0].group == AttributeGroup::kColor);
  CHECK(empty.schema.label_scheme == LabelScheme::kBinary);

  Image img(8, 8, 100);
  WriteImage(dir / "a.ppm", img);
  WriteText(dir / "binary.csv", header + "a.ppm,train,1,1,5,5,1,0\na.ppm,test,,,,,0,1\n");
  const Dataset binary = LoadManifest(dir / "binary.csv");
  REQUIRE(binary.records.size() == 2);
  CHECK(binary.records[0].bbox == BBox{1, 1, 5, 5});
  CHECK_FALSE(binary.records[1].bbox.has_value());
  CHECK(binary.records[1].labels == std::vector<int>{0, 1});
  CHECK(binary.schema.label_scheme == LabelScheme::kBinary);

  WriteText(dir / "ternary.csv", header + "a.ppm,val,,,,,-1,0\n");
  CHECK(LoadManifest(dir / "ternary.csv").schema.label_scheme == LabelScheme::kTernary);

  auto failure = [&](const std::string& rows) -> std::pair<std::optional<ErrorKind>, std::string> {
    WriteText(dir / "bad.csv", header + rows);
    try {
      LoadManifest(dir / "bad.csv");
    } catch (const Error& e) {
      return {e.kind(), e.what()};
    }
    return {std::nullopt, ""};
  };
  auto [arity, arity_msg] = failure("a.ppm,train,,,,,1,0\na.ppm,train,,,,,1\n");
  CHECK(arity == ErrorKind::kMalformedInput);
  CHECK(arity_msg.find("row 3") != std::string::npos);
  auto [missing, missing_msg] = failure("nope.ppm,train,,,,,1,0\n");
  CHECK(missing == ErrorKind::kIo);
  CHECK(missing_msg.find("row 2") != std::string::npos);
  CHECK(failure("a.ppm,train,,,,,1,x\n").first == ErrorKind::kMalformedInput);
  CHECK(failure("a.ppm,train,,,,,1,2\n").first == ErrorKind::kMalformedInput);
  CHECK(failure("a.ppm,bogus,,,,,1,0\n").first == ErrorKind::kMalformedInput);
  CHECK(failure("a.ppm,train,0,0,9,9,1,0\n").first == ErrorKind::kMalformedInput);
  CHECK(failure("a.ppm,train,3,3,3,5,1,0\n").first == ErrorKind::kMalformedInput);
  CHECK(ErrorKindOf([&] { LoadManifest(dir / "absent.csv"); }) == ErrorKind::kIo);
  WriteText(dir / "noheader.csv", "path,split\n");
  CHECK(ErrorKindOf([&] { LoadManifest(dir / "noheader.csv"); }) == ErrorKind::kMalformedInput);
}

TEST_CASE("label mapping") {
  CHECK(MapLabels(std::vector<int>{-1, 0, 1}) == std::vector<double>{0, 0.5, 1});
  CHECK(MapLabels(std::vector<int>{-1, -1, -1}) == std::vector<double>{0, 0, 0});
  CHECK(MapLabels(std::vector<int>{1, 1}) == std::vector<double>{1, 1});
  CHECK(MapLabels(std::vector<int>{0, 1}, LabelScheme::kBinary) == std::vector<double>{0, 1});
  CHECK(ErrorKindOf([] { MapLabels(std::vector<int>{2}); }) == ErrorKind::kParameter);
  CHECK(ErrorKindOf([] { MapLabels(std::vector<int>{-1}, LabelScheme::kBinary); }) == ErrorKind::kParameter);
}

TEST_CASE("bbox crop window") {
  CHECK(CropWindow({10, 10, 110, 110}, 200, 200, 0.10) == BBox{0, 0, 120, 120});
  CHECK(CropWindow({10, 10, 110, 110}, 200, 200, 0.0) == BBox{10, 10, 110, 110});
  CHECK(CropWindow({0, 150, 50, 200}, 200, 200, 0.10) == BBox{0, 145, 55, 200});
  CHECK(CropWindow({20, 20, 40, 30}, 100, 100, 0.10) == BBox{18, 19, 42, 31});

  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(1, 120)), h = static_cast<int>(rng.uniform_int(1, 120));
    const int x0 = static_cast<int>(rng.uniform_int(0, w - 1)), y0 = static_cast<int>(rng.uniform_int(0, h - 1));
    const BBox b{x0, y0, static_cast<int>(rng.uniform_int(x0 + 1, w)), static_cast<int>(rng.uniform_int(y0 + 1, h))};
    const BBox win = CropWindow(b, w, h, rng.uniform(0, 0.5));
    CHECK(win.contains(b));
    CHECK(win.x0 >= 0);
    CHECK(win.y0 >= 0);
    CHECK(win.x1 <= w);
    CHECK(win.y1 <= h);
  }

  DatasetRecord r;
  r.image = Image(20, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) r.image.set(x, y, x, y, 7);
  CHECK(ErrorKindOf([&] { CropBboxMargin(r); }) == ErrorKind::kPrecondition);
  r.bbox = BBox{5, 2, 15, 7};
  const Image crop = CropBboxMargin(r, 0.0);
  CHECK(crop.width == 10);
  CHECK(crop.height == 5);
  CHECK(crop.at(0, 0, 0) == 5);
  CHECK(crop.at(0, 0, 1) == 2);
  CHECK(crop.at(9, 4, 0) == 14);
}

TEST_CASE("preprocess and bilinear resize") {
  Image gray(5, 3);
  for (std::size_t i = 0; i < gray.pixels.size(); i += 3) {
    gray.pixels[i] = 10, gray.pixels[i + 1] = 20, gray.pixels[i + 2] = 30;
  }
  const TensorF zero = Preprocess(gray, 7, {10, 20, 30});
  CHECK(zero.shape() == Shape{3, 7, 7});
  for (float v : zero.data()) CHECK(v == 0.0f);
  const TensorF constant = Preprocess(gray, 11, {0, 0, 0});
  for (std::size_t i = 0; i < 121; ++i) {
    CHECK(constant[i] == 10.0f);
    CHECK(constant[242 + i] == 30.0f);
  }

  // 2x2 checkerboard doubled; half-pixel centers sample at 0, 1/4, 3/4, 1.
  Image board(2, 2);
  board.set(1, 0, 255, 255, 255);
  board.set(0, 1, 255, 255, 255);
  const TensorF up = Preprocess(board, 4, {0, 0, 0});
  const double expected[4][4] = {{0, 63.75, 191.25, 255},
                                 {63.75, 95.625, 159.375, 191.25},
                                 {191.25, 159.375, 95.625, 63.75},
                                 {255, 191.25, 63.75, 0}};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(up[(c * 4 + y) * 4 + x] == doctest::Approx(expected[y][x]).epsilon(1e-6));

  CHECK(ErrorKindOf([&] { Preprocess(gray, 0, {0, 0, 0}); }) == ErrorKind::kParameter);
  CHECK(ErrorKindOf([&] { Preprocess(Image(), 4, {0, 0, 0}); }) == ErrorKind::kPrecondition);
  // Channel order is RGB.
  Image red(1, 1);
  red.set(0, 0, 200, 0, 0);
  const TensorF rt = Preprocess(red, 1, {0, 0, 0});
  CHECK(rt[0] == 200.0f);
  CHECK(rt[1] == 0.0f);
}

TEST_CASE("augment crops and flips") {
  Rng fill(1);
  const TensorF x = testutil::Random<float>({3, 9, 9}, fill, -5, 5);
  Rng r1(2), r2(99);
  CHECK(Augment(x, 7, AugmentMode::kEval, r1) == Augment(x, 7, AugmentMode::kEval, r2));
  const TensorF centered = Augment(x, 7, AugmentMode::kEval, r1);
  CHECK(centered[0] == x[1 * 9 + 1]);

  CHECK(FlipHorizontal(FlipHorizontal(x)) == x);
  CHECK(FlipHorizontal(x)[0] == x[8]);

  bool saw_identity = false, saw_flip = false;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    Rng rng(seed);
    const TensorF same = Augment(x, 9, AugmentMode::kTrain, rng);
    saw_identity |= same == x;
    saw_flip |= same == FlipHorizontal(x);
    CHECK((same == x || same == FlipHorizontal(x)));
  }
  CHECK(saw_identity);
  CHECK(saw_flip);

  // Every train view is an in-bounds window of the input, possibly flipped.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const TensorF view = Augment(x, 5, AugmentMode::kTrain, rng);
    bool matched = false;
    for (const TensorF& src : {x, FlipHorizontal(x)}) {
      for (int oy = 0; oy <= 4 && !matched; ++oy) {
        for (int ox = 0; ox <= 4 && !matched; ++ox) {
          bool eq = true;
          for (int c = 0; c < 3 && eq; ++c)
            for (int y = 0; y < 5 && eq; ++y)
              for (int xx = 0; xx < 5 && eq; ++xx) eq = view[(c * 5 + y) * 5 + xx] == src[(c * 9 + oy + y) * 9 + ox + xx];
          matched = eq;
        }
      }
    }
    CHECK(matched);
  }
  Rng rng(0);
  CHECK(ErrorKindOf([&] { Augment(x, 10, AugmentMode::kTrain, rng); }) == ErrorKind::kParameter);
}

TEST_CASE("mean RGB") {
  std::vector<Image> one{Image(4, 4, 128)};
  CHECK(ComputeMeanRgb(one) == std::array<double, 3>{128, 128, 128});
  std::vector<Image> two{Image(3, 3, 10), Image(3, 3, 31)};
  CHECK(ComputeMeanRgb(two) == std::array<double, 3>{20.5, 20.5, 20.5});

  Rng rng(4);
  std::vector<Image> mixed;
  for (int i = 0; i < 6; ++i) {
    Image img(static_cast<int>(rng.uniform_int(1, 9)), static_cast<int>(rng.uniform_int(1, 9)));
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(std::uint64_t{256}));
    mixed.push_back(img);
  }
  std::array<double, 3> sum{};
  double count = 0;
  for (const auto& img : mixed)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        for (int c = 0; c < 3; ++c) sum[c] += img.at(x, y, c);
        count += 1;
      }
  const auto mean = ComputeMeanRgb(mixed);
  for (int c = 0; c < 3; ++c) CHECK(mean[c] == doctest::Approx(sum[c] / count).epsilon(1e-14));
  CHECK(ErrorKindOf([] { ComputeMeanRgb(std::vector<Image>{}); }) == ErrorKind::kPrecondition);
}

TEST_CASE("prepared splits keep labels and count crop fallbacks") {
  Dataset ds = GenerateSynthetic(Small(0.3));
  ds.records[0].bbox.reset();
  const auto train = ds.split(Split::kTrain);
  PrepareOptions opt;
  opt.canonical_size = 20;
  const PreparedSplit p = PrepareSplit(train, ds.schema, opt);
  REQUIRE(p.size() == train.size());
  CHECK(p.crop_fallbacks == 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p.images[i].shape() == Shape{3, 20, 20});
    CHECK(p.targets[i] == MapLabels(train[i]->labels, ds.schema.label_scheme));
  }
  const auto images = TrainingImages(train, true, 0.10);
  CHECK(images[1] == CropBboxMargin(*train[1]));
  CHECK(images[0] == train[0]->image);
}
