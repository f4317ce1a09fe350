#include "dan/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "dan/io.hpp"

namespace dan {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

using Json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'A', 'T', 'R', 'N'};
constexpr std::size_t kPreambleSize = 4 + 4 + 8;

Json LayerToJson(const LayerSpec& l) {
  Json j;
  j["kind"] = LayerKindName(l.kind);
  j["name"] = l.name;
  switch (l.kind) {
    case LayerKind::kConv:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::kAffine:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      break;
    case LayerKind::kDropout:
      j["rate"] = l.rate;
      break;
    default:
      break;
  }
  j["frozen"] = l.frozen;
  j["block_id"] = l.block_id;
  return j;
}

LayerSpec LayerFromJson(const Json& j) {
  LayerSpec l;
  l.kind = ParseLayerKind(j.at("kind").get<std::string>());
  l.name = j.at("name").get<std::string>();
  l.in_channels = j.value("in_channels", 0);
  l.out_channels = j.value("out_channels", 0);
  l.kernel = j.value("kernel", 0);
  l.stride = j.value("stride", 1);
  l.padding = j.value("padding", 0);
  l.in_features = j.value("in_features", 0);
  l.out_features = j.value("out_features", 0);
  l.rate = j.value("rate", 0.0);
  l.frozen = j.at("frozen").get<bool>();
  l.block_id = j.at("block_id").get<int>();
  return l;
}

Json ConfigToJson(const ModelConfig& c) {
  Json j;
  j["input"] = {c.input.channels, c.input.height, c.input.width};
  j["num_classes"] = c.num_classes;
  j["finetune_boundary"] = c.finetune_boundary;
  Json layers = Json::array();
  for (const auto& l : c.layers) layers.push_back(LayerToJson(l));
  j["layers"] = layers;
  return j;
}

ModelConfig ConfigFromJson(const Json& j) {
  ModelConfig c;
  const auto input = j.at("input").get<std::vector<int>>();
  Require(input.size() == 3, ErrorKind::kCorruptFile, "checkpoint input size must have 3 entries");
  c.input = {input[0], input[1], input[2]};
  c.num_classes = j.at("num_classes").get<int>();
  c.finetune_boundary = j.at("finetune_boundary").get<std::string>();
  for (const auto& l : j.at("layers")) c.layers.push_back(LayerFromJson(l));
  return c;
}

Phase ParsePhase(const std::string& s) {
  for (auto p : {Phase::kPhase1, Phase::kPhase2, Phase::kFull}) {
    if (s == PhaseName(p)) return p;
  }
  Fail(ErrorKind::kCorruptFile, "unknown phase '" + s + "'");
}

struct PayloadWriter {
  Json directory = Json::array();
  std::string payload;

  void Add(const std::string& name, const TensorF& t) {
    directory.push_back({{"name", name},
                         {"shape", t.shape()},
                         {"offset", payload.size()},
                         {"count", t.numel()}});
    const std::size_t bytes = t.numel() * sizeof(float);
    const std::size_t at = payload.size();
    payload.resize(at + bytes);
    std::memcpy(payload.data() + at, t.raw(), bytes);
  }
};

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutU64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t GetLE(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string SerializeCheckpoint(const Checkpoint& ck) {
  PayloadWriter writer;
  for (const auto& [name, p] : ck.params) {
    writer.Add("param/" + name + "/weight", p.weight);
    writer.Add("param/" + name + "/bias", p.bias);
  }
  for (const auto& [name, p] : ck.state.momentum) {
    writer.Add("momentum/" + name + "/weight", p.weight);
    writer.Add("momentum/" + name + "/bias", p.bias);
  }

  Json header;
  header["config"] = ConfigToJson(ck.config);
  Json state;
  state["epoch"] = ck.state.epoch;
  state["base_lr"] = ck.state.base_lr;
  state["lr"] = ck.state.lr;
  state["lr_drops"] = ck.state.lr_drops;
  if (std::isfinite(ck.state.best_val_loss)) {
    state["best_val_loss"] = ck.state.best_val_loss;
  } else {
    state["best_val_loss"] = nullptr;
  }
  state["epochs_since_improvement"] = ck.state.epochs_since_improvement;
  state["phase"] = PhaseName(ck.state.phase);
  state["phase_switch_epoch"] = ck.state.phase_switch_epoch;
  header["train_state"] = state;
  header["mean_rgb"] = ck.mean_rgb;
  header["rng_state"] = ck.rng_state;
  header["schema"] = Json::parse(SchemaToJson(ck.schema));
  header["canonical_size"] = ck.canonical_size;
  header["crop_size"] = ck.crop_size;
  header["payload_bytes"] = writer.payload.size();
  header["tensors"] = writer.directory;
  const std::string header_text = header.dump();

  std::string out(kMagic, 4);
  PutU32(out, ck.version);
  PutU64(out, header_text.size());
  out += header_text;
  out += writer.payload;
  return out;
}

Checkpoint DeserializeCheckpoint(const std::string& bytes) {
  Require(bytes.size() >= kPreambleSize, ErrorKind::kCorruptFile, "checkpoint shorter than its preamble");
  Require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::kCorruptFile, "bad checkpoint magic");
  const auto version = static_cast<std::uint32_t>(GetLE(bytes, 4, 4));
  Require(version == Checkpoint::kFormatVersion, ErrorKind::kVersionMismatch,
          "checkpoint format version " + std::to_string(version) + " unsupported (expected " +
              std::to_string(Checkpoint::kFormatVersion) + ")");
  const std::uint64_t header_len = GetLE(bytes, 8, 8);
  Require(header_len <= bytes.size() - kPreambleSize, ErrorKind::kCorruptFile, "checkpoint header truncated");

  Checkpoint ck;
  ck.version = version;
  Json header;
  try {
    header = Json::parse(bytes.begin() + kPreambleSize, bytes.begin() + kPreambleSize + header_len);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kCorruptFile, std::string("checkpoint header: ") + e.what());
  }
  const std::size_t payload_start = kPreambleSize + header_len;
  try {
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    Require(bytes.size() - payload_start == payload_bytes, ErrorKind::kCorruptFile,
            "checkpoint payload is " + std::to_string(bytes.size() - payload_start) + " bytes, header declares " +
                std::to_string(payload_bytes));
    ck.config = ConfigFromJson(header.at("config"));
    const auto& state = header.at("train_state");
    ck.state.epoch = state.at("epoch").get<int>();
    ck.state.base_lr = state.at("base_lr").get<double>();
    ck.state.lr = state.at("lr").get<double>();
    ck.state.lr_drops = state.at("lr_drops").get<int>();
    ck.state.best_val_loss = state.at("best_val_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                                 : state.at("best_val_loss").get<double>();
    ck.state.epochs_since_improvement = state.at("epochs_since_improvement").get<int>();
    ck.state.phase = ParsePhase(state.at("phase").get<std::string>());
    ck.state.phase_switch_epoch = state.at("phase_switch_epoch").get<int>();
    const auto mean = header.at("mean_rgb").get<std::vector<double>>();
    Require(mean.size() == 3, ErrorKind::kCorruptFile, "mean_rgb must have 3 entries");
    ck.mean_rgb = {mean[0], mean[1], mean[2]};
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.schema = SchemaFromJson(header.at("schema").dump());
    ck.canonical_size = header.at("canonical_size").get<int>();
    ck.crop_size = header.at("crop_size").get<int>();

    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      Require(count == ShapeNumel(shape) && offset + count * sizeof(float) <= payload_bytes, ErrorKind::kCorruptFile,
              "tensor '" + name + "' lies outside the payload");
      std::vector<float> data(count);
      std::memcpy(data.data(), bytes.data() + payload_start + offset, count * sizeof(float));
      const auto first = name.find('/');
      const auto last = name.rfind('/');
      Require(first != std::string::npos && last != first, ErrorKind::kCorruptFile, "bad tensor name '" + name + "'");
      const std::string section = name.substr(0, first);
      const std::string layer = name.substr(first + 1, last - first - 1);
      const std::string field = name.substr(last + 1);
      ParameterSet<float>* target = nullptr;
      if (section == "param") target = &ck.params;
      if (section == "momentum") target = &ck.state.momentum;
      Require(target != nullptr && (field == "weight" || field == "bias"), ErrorKind::kCorruptFile,
              "bad tensor name '" + name + "'");
      TensorF t(shape, std::move(data));
      if (field == "weight") {
        (*target)[layer].weight = std::move(t);
      } else {
        (*target)[layer].bias = std::move(t);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kCorruptFile, std::string("checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kDimension || e.kind() == ErrorKind::kMalformedInput) {
      Fail(ErrorKind::kCorruptFile, e.what());
    }
    throw;
  }

  try {
    ValidateConfig(ck.config);
  } catch (const Error& e) {
    Fail(ErrorKind::kConfigMismatch, std::string("embedded config invalid: ") + e.what());
  }
  CheckParameters(ck.config, ck.params);
  if (!ck.state.momentum.empty()) CheckParameters(ck.config, ck.state.momentum);
  Require(static_cast<int>(ck.schema.size()) == ck.config.num_classes, ErrorKind::kConfigMismatch,
          "checkpoint schema has " + std::to_string(ck.schema.size()) + " classes, network has " +
              std::to_string(ck.config.num_classes));
  return ck;
}

void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint) {
  WriteFileAtomic(path, SerializeCheckpoint(checkpoint));
}

Checkpoint LoadCheckpoint(const std::string& path) { return DeserializeCheckpoint(ReadFileBytes(path)); }

void RequireCompatible(const Checkpoint& checkpoint, const ModelConfig& config) {
  Require(checkpoint.config.num_classes == config.num_classes, ErrorKind::kConfigMismatch,
          "checkpoint has " + std::to_string(checkpoint.config.num_classes) + " classes, expected " +
              std::to_string(config.num_classes));
  Require(checkpoint.config.input == config.input, ErrorKind::kConfigMismatch,
          "checkpoint input size differs from the requested model");
  CheckParameters(config, checkpoint.params);
}

}  // namespace dan
