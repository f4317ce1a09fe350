#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "dan/checkpoint.hpp"
#include "dan/gradcheck.hpp"
#include "dan/loss.hpp"
#include "dan/model.hpp"
#include "dan/trainer.hpp"
#include "test_util.hpp"

using namespace dan;
using testutil::Random;

namespace {

ParameterSet<float> GradsLike(const ParameterSet<float>& params, float value) {
  ParameterSet<float> grads;
  for (const auto& [name, p] : params) grads[name] = {TensorF(p.weight.shape(), value), TensorF(p.bias.shape(), value)};
  return grads;
}

ParameterSet<float> ZeroMomentum(const ParameterSet<float>& params) { return GradsLike(params, 0.f); }

AttributeSchema SmallSchema(int n) {
  AttributeSchema s;
  for (int i = 0; i < n; ++i) s.classes.push_back({"c" + std::to_string(i), AttributeGroup::kColor});
  return s;
}

Checkpoint MakeCheckpoint(int classes, std::uint64_t seed) {
  Checkpoint ck;
  ck.config = BuildTinyDan(classes, {3, 32, 32});
  Rng rng(seed);
  ck.params = InitializeParameters(ck.config, rng);
  ck.state.momentum = ZeroMomentum(ck.params);
  ck.state.epoch = 7;
  ck.state.lr = 1e-4;
  ck.state.lr_drops = 1;
  ck.state.best_val_loss = 0.123456789;
  ck.state.phase = Phase::kPhase2;
  ck.state.phase_switch_epoch = 4;
  ck.mean_rgb = {120.25, 99.5, 101.125};
  ck.rng_state = rng.state();
  ck.schema = SmallSchema(classes);
  ck.crop_size = 32;
  ck.canonical_size = 36;
  return ck;
}

}  // namespace

TEST_CASE("build_tinydan topology") {
  const ModelConfig c25 = BuildTinyDan(25);
  const auto shapes = ValidateConfig(c25);
  CHECK(c25.finetune_boundary == "conv4_1");
  CHECK(c25.layers.back().kind == LayerKind::kSigmoid);
  CHECK(c25.layer("fcB").out_features == 25);
  CHECK(c25.layer("fc6").out_features == 256);
  CHECK(c25.layer("fcA").out_features == 128);
  CHECK(c25.layer("fc6").in_features == 4 * 4 * 64);
  CHECK(shapes.back() == Shape{25});

  const ModelConfig c1 = BuildTinyDan(1);
  CHECK(c1.layer("fcB").out_features == 1);

  const ModelConfig small = BuildTinyDan(3, {3, 32, 32});
  CHECK(small.layer("fc6").in_features == 2 * 2 * 64);

  int convs = 0;
  for (const auto& l : c25.layers) {
    if (l.kind == LayerKind::kConv) {
      ++convs;
      CHECK(l.kernel == 3);
    }
    if (l.kind == LayerKind::kDropout) CHECK(l.rate == 0.5);
  }
  CHECK(convs == 7);
  CHECK(c25.layer("conv1_1").out_channels == 16);
  CHECK(c25.layer("conv2_2").out_channels == 32);
  CHECK(c25.layer("conv3_2").out_channels == 64);
  CHECK(c25.layer("conv4_1").out_channels == 64);

  try {
    BuildTinyDan(5, {3, 40, 40});
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
  CHECK_THROWS_AS(BuildTinyDan(0), Error);
}

TEST_CASE("config validation rejects broken configs") {
  ModelConfig dup = BuildTinyDan(4);
  dup.layers[2].name = dup.layers[0].name;
  CHECK_THROWS_AS(ValidateConfig(dup), Error);

  ModelConfig bad_shape = BuildTinyDan(4);
  for (auto& l : bad_shape.layers) {
    if (l.name == "fcA") l.in_features = 17;
  }
  CHECK_THROWS_AS(ValidateConfig(bad_shape), Error);

  ModelConfig no_sigmoid = BuildTinyDan(4);
  no_sigmoid.layers.pop_back();
  CHECK_THROWS_AS(ValidateConfig(no_sigmoid), Error);

  ModelConfig bad_boundary = BuildTinyDan(4);
  bad_boundary.finetune_boundary = "fc6";
  CHECK_THROWS_AS(ValidateConfig(bad_boundary), Error);
}

TEST_CASE("initialization statistics") {
  // Wide head so the affine statistics have many draws.
  ModelConfig config = BuildTinyDan(400);
  Rng rng(2024);
  const auto params = InitializeParameters(config, rng);

  const auto& fca = params.at("fcA").weight;
  const auto& fcb = params.at("fcB").weight;
  std::vector<double> draws(fca.data().begin(), fca.data().end());
  draws.insert(draws.end(), fcb.data().begin(), fcb.data().end());
  REQUIRE(draws.size() >= 32768);
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(draws.size());
  CHECK(std::abs(mean) < 3.0 * 0.005 / std::sqrt(static_cast<double>(draws.size())));
  double var = 0.0;
  for (double v : draws) var += (v - mean) * (v - mean);
  CHECK(std::sqrt(var / static_cast<double>(draws.size())) == doctest::Approx(0.005).epsilon(0.03));

  for (const char* name : {"fc6", "fcA", "fcB"}) {
    for (float b : params.at(name).bias.data()) CHECK(b == 0.1f);
  }

  const auto& conv = params.at("conv1_1").weight;
  CHECK(conv.shape() == Shape{16, 3, 3, 3});
  double sq = 0.0;
  for (float v : conv.data()) sq += double(v) * v;
  // Gather more draws for the conv check by pooling several initializations.
  double total_sq = sq;
  std::size_t n = conv.numel();
  for (std::uint64_t s = 1; s < 40; ++s) {
    Rng r(s);
    const auto p = InitializeParameters(config, r);
    for (float v : p.at("conv1_1").weight.data()) total_sq += double(v) * v;
    n += conv.numel();
  }
  CHECK(std::sqrt(total_sq / static_cast<double>(n)) == doctest::Approx(std::sqrt(2.0 / 27.0)).epsilon(0.05));
  for (float b : params.at("conv1_1").bias.data()) CHECK(b == 0.f);
}

TEST_CASE("set_trainable phases") {
  ModelConfig config = BuildTinyDan(5);
  SetTrainable(config, Phase::kPhase1);
  for (const auto& l : config.layers) {
    if (!l.has_params()) continue;
    CHECK(l.frozen == (l.kind == LayerKind::kConv));
  }
  SetTrainable(config, Phase::kPhase2);
  const int boundary_block = config.layer(config.finetune_boundary).block_id;
  for (const auto& l : config.layers) {
    if (!l.has_params()) continue;
    const bool trainable = l.kind == LayerKind::kAffine || l.block_id >= boundary_block;
    CHECK(l.frozen == !trainable);
  }
  CHECK(config.layer("conv3_2").frozen);
  CHECK_FALSE(config.layer("conv4_1").frozen);
  SetTrainable(config, Phase::kFull);
  for (const auto& l : config.layers) CHECK_FALSE(l.frozen);
}

TEST_CASE("freezing soundness under SGD steps") {
  for (Phase phase : {Phase::kPhase1, Phase::kPhase2, Phase::kFull}) {
    ModelConfig config = BuildTinyDan(3, {3, 32, 32});
    SetTrainable(config, phase);
    Rng rng(8);
    auto params = InitializeParameters(config, rng);
    const auto before = params;
    TrainState state;
    state.momentum = ZeroMomentum(params);
    TrainerConfig trainer;
    const auto grads = GradsLike(params, 0.25f);
    for (int i = 0; i < 5; ++i) SgdStep(config, params, grads, state, trainer);
    for (const auto& l : config.layers) {
      if (!l.has_params()) continue;
      const bool same = params.at(l.name) == before.at(l.name);
      CHECK_MESSAGE(same == l.frozen, l.name << " in phase " << PhaseName(phase));
    }
  }
}

TEST_CASE("phase1 epoch leaves conv parameters bit-identical") {
  ModelConfig config = BuildTinyDan(2, {3, 16, 16});
  SetTrainable(config, Phase::kPhase1);
  Rng rng(31);
  auto params = InitializeParameters(config, rng);
  const auto before = params;
  PreparedSplit split;
  for (int i = 0; i < 6; ++i) {
    split.images.push_back(Random<float>({3, 18, 18}, rng, -50, 50));
    split.targets.push_back({static_cast<double>(i % 2), static_cast<double>((i / 2) % 2)});
  }
  TrainerConfig trainer;
  trainer.batch_size = 4;
  trainer.crop_size = 16;
  trainer.canonical_size = 18;
  TrainState state;
  state.momentum = ZeroMomentum(params);
  RunEpoch(config, params, split, trainer, state, EpochMode::kTrain, rng);
  for (const auto& l : config.layers) {
    if (l.kind == LayerKind::kConv) CHECK(params.at(l.name) == before.at(l.name));
    if (l.kind == LayerKind::kAffine) CHECK_FALSE(params.at(l.name) == before.at(l.name));
  }
}

TEST_CASE("forward ranges and determinism") {
  const ModelConfig config = BuildTinyDan(6, {3, 32, 32});
  Rng rng(12);
  const auto params = InitializeParameters(config, rng);
  const TensorF batch = Random<float>({3, 3, 32, 32}, rng, -100, 100);
  Rng e1(1), e2(2);
  const auto a = Forward(config, params, batch, false, e1);
  const auto b = Forward(config, params, batch, false, e2);
  CHECK(a.scores.shape() == Shape{3, 6});
  CHECK(a.logits.shape() == Shape{3, 6});
  CHECK(a.scores == b.scores);
  for (std::size_t i = 0; i < a.scores.numel(); ++i) {
    CHECK(a.scores[i] > 0.f);
    CHECK(a.scores[i] < 1.f);
    CHECK(a.scores[i] == ops::SigmoidScalar(a.logits[i]));
  }
  Rng t1(99), t2(99);
  CHECK(Forward(config, params, batch, true, t1).scores == Forward(config, params, batch, true, t2).scores);
  CHECK_THROWS_AS(Forward(config, params, TensorF({1, 3, 16, 16}), false, e1), Error);
}

// Forward pass with every ReLU gate, pool winner and dropout mask frozen to
// those of a reference pass. This piecewise-smooth branch agrees with the
// network around the reference point and is differentiable there, so
// central differences on it are a valid oracle even when a 1e-3 step would
// flip some gate of the real network.
struct FrozenGates {
  std::map<int, TensorD> masks;                       // relu and dropout layers
  std::map<int, std::vector<std::uint32_t>> winners;  // pool layers
};

FrozenGates CaptureGates(const ModelConfig& config, const Graph<double>& g, const ForwardTrace<double>& trace) {
  FrozenGates gates;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& below = i == 0 ? g.value(trace.input) : g.value(trace.layer_outputs[i - 1]);
    const auto& out = g.value(trace.layer_outputs[i]);
    const LayerKind kind = config.layers[i].kind;
    if (kind == LayerKind::kRelu || kind == LayerKind::kDropout) {
      TensorD mask(out.shape(), 0.0);
      for (std::size_t j = 0; j < mask.numel(); ++j) {
        if (kind == LayerKind::kRelu) mask[j] = below[j] > 0.0 ? 1.0 : 0.0;
        if (kind == LayerKind::kDropout && below[j] != 0.0) mask[j] = out[j] / below[j];
      }
      gates.masks[static_cast<int>(i)] = mask;
    } else if (kind == LayerKind::kPool) {
      gates.winners[static_cast<int>(i)] = g.pool_argmax(trace.layer_outputs[i]);
    }
  }
  return gates;
}

double GatedLoss(const ModelConfig& config, const ParameterSet<double>& params, const FrozenGates& gates,
                 const TensorD& batch, const TensorD& labels, const std::vector<double>& weights) {
  TensorD x = batch;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    switch (l.kind) {
      case LayerKind::kConv:
        x = ops::Conv2d(x, params.at(l.name).weight, params.at(l.name).bias, l.stride, l.padding);
        break;
      case LayerKind::kAffine:
        x = ops::Affine(x, params.at(l.name).weight, params.at(l.name).bias);
        break;
      case LayerKind::kRelu:
      case LayerKind::kDropout: {
        const TensorD& m = gates.masks.at(static_cast<int>(i));
        for (std::size_t j = 0; j < x.numel(); ++j) x[j] *= m[j];
        break;
      }
      case LayerKind::kPool: {
        Shape shape = x.shape();
        shape[2] /= 2;
        shape[3] /= 2;
        TensorD out(shape);
        const auto& w = gates.winners.at(static_cast<int>(i));
        for (std::size_t j = 0; j < out.numel(); ++j) out[j] = x[w[j]];
        x = out;
        break;
      }
      case LayerKind::kFlatten:
        x = x.reshaped({x.dim(0), static_cast<std::int64_t>(x.numel()) / x.dim(0)});
        break;
      case LayerKind::kSigmoid:
        break;
    }
  }
  return WeightedCeLoss<double>(x, labels, weights).value;
}

TEST_CASE("TinyDAN gradients match finite differences in double") {
  ModelConfig config = BuildTinyDan(3, {3, 16, 16});
  SetTrainable(config, Phase::kFull);
  Rng rng(5);
  auto params = CastParameters<double>(InitializeParameters(config, rng));
  for (auto& [name, p] : params) {
    if (config.layer(name).kind == LayerKind::kConv) p.bias = Random<double>(p.bias.shape(), rng, -0.2, 0.2);
  }
  const TensorD batch = Random<double>({2, 3, 16, 16}, rng, -1, 1);
  TensorD labels({2, 3}, {1, 0, 0.5, 0, 1, 1});
  const auto weights = BatchClassWeights(labels);
  constexpr double kStep = 1e-3;

  Graph<double> graph;
  Rng mask(17);
  const auto trace = BuildForward(graph, config, params, batch, true, mask, true);
  const NodeId loss = graph.WeightedBce(trace.logits, labels, weights);
  graph.Backward(loss);
  const FrozenGates gates = CaptureGates(config, graph, trace);
  CHECK(GatedLoss(config, params, gates, batch, labels, weights) ==
        doctest::Approx(graph.value(loss)[0]).epsilon(1e-12));

  Rng pick(3);
  double worst = 0.0;
  int checked = 0;
  for (const auto& [name, p] : params) {
    for (int which = 0; which < 2; ++which) {
      const TensorD& tensor = which == 0 ? p.weight : p.bias;
      const NodeId node = which == 0 ? trace.param_nodes.at(name).first : trace.param_nodes.at(name).second;
      const TensorD* analytic = graph.grad(node);
      REQUIRE(analytic != nullptr);
      for (int s = 0; s < 8; ++s) {
        const std::size_t i = pick.uniform_int(tensor.numel());
        auto f = [&](double delta) {
          ParameterSet<double> probe = params;
          auto& t = which == 0 ? probe.at(name).weight : probe.at(name).bias;
          t[i] += delta;
          return GatedLoss(config, probe, gates, batch, labels, weights);
        };
        const double numeric = (f(kStep) - f(-kStep)) / (2 * kStep);
        const double a = (*analytic)[i];
        worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
        ++checked;
      }
    }
  }
  CHECK(checked == 10 * 2 * 8);
  CHECK(worst < 1e-3);
}

TEST_CASE("checkpoint round trip") {
  testutil::TempDir dir("ckpt");
  const Checkpoint ck = MakeCheckpoint(4, 77);
  const std::string path = dir / "model.ckpt";
  SaveCheckpoint(path, ck);
  const Checkpoint back = LoadCheckpoint(path);
  CHECK(back == ck);
  CHECK(SerializeCheckpoint(back) == SerializeCheckpoint(ck));

  Rng rng(4);
  const TensorF batch = Random<float>({2, 3, 32, 32}, rng, -60, 60);
  Rng e(0);
  CHECK(Forward(ck.config, ck.params, batch, false, e).scores == Forward(back.config, back.params, batch, false, e).scores);

  Checkpoint fresh = MakeCheckpoint(2, 1);
  fresh.state.best_val_loss = std::numeric_limits<double>::infinity();
  CHECK(DeserializeCheckpoint(SerializeCheckpoint(fresh)) == fresh);

  const std::string bytes = SerializeCheckpoint(ck);
  CHECK(bytes.substr(0, 4) == "ATRN");
}

TEST_CASE("checkpoint error kinds") {
  const Checkpoint ck = MakeCheckpoint(3, 5);
  const std::string bytes = SerializeCheckpoint(ck);

  auto kind_of = [](const std::string& b) {
    try {
      DeserializeCheckpoint(b);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kContract;
  };
  CHECK(kind_of(bytes.substr(0, bytes.size() - 10)) == ErrorKind::kCorruptFile);
  CHECK(kind_of(bytes.substr(0, 6)) == ErrorKind::kCorruptFile);
  CHECK(kind_of("XXXX" + bytes.substr(4)) == ErrorKind::kCorruptFile);

  std::string bumped = bytes;
  bumped[4] = 2;
  CHECK(kind_of(bumped) == ErrorKind::kVersionMismatch);

  testutil::TempDir dir("ckpt_err");
  const std::string path = dir / "trunc.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  try {
    LoadCheckpoint(path);
    FAIL("expected corrupt file");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCorruptFile);
  }
  try {
    LoadCheckpoint(dir / "missing.ckpt");
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIo);
  }

  try {
    RequireCompatible(ck, BuildTinyDan(5, {3, 32, 32}));
    FAIL("expected config mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfigMismatch);
  }
  CHECK_NOTHROW(RequireCompatible(ck, BuildTinyDan(3, {3, 32, 32})));

  Checkpoint broken = ck;
  broken.params.at("fcB").weight = TensorF({4, 128});
  try {
    DeserializeCheckpoint(SerializeCheckpoint(broken));
    FAIL("expected config mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfigMismatch);
  }
}
