#include "dan/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "dan/trainer.hpp"

namespace dan {
namespace {

struct SweepStep {
  double tp = 0, fp = 0;
};

// Cumulative (tp, fp) after each distinct score, highest first.
std::vector<SweepStep> Sweep(std::span<const EvalPair> pairs, double* positives, double* negatives) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pairs[a].score > pairs[b].score; });
  std::vector<SweepStep> steps;
  SweepStep cur;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& p = pairs[order[i]];
    Require(std::isfinite(p.score), ErrorKind::kNumeric, "non-finite score in evaluation");
    if (p.truth) {
      cur.tp += 1;
    } else {
      cur.fp += 1;
    }
    if (i + 1 == order.size() || pairs[order[i + 1]].score != p.score) steps.push_back(cur);
  }
  *positives = cur.tp;
  *negatives = cur.fp;
  return steps;
}

}  // namespace

std::vector<std::uint8_t> BinarizeEvalLabels(std::span<const int> raw, LabelScheme scheme) {
  std::vector<std::uint8_t> out;
  out.reserve(raw.size());
  for (int v : raw) {
    if (scheme == LabelScheme::kTernary) {
      Require(v == -1 || v == 0 || v == 1, ErrorKind::kParameter, "label " + std::to_string(v) + " outside {-1,0,+1}");
      out.push_back(v == -1 ? 0 : 1);
    } else {
      Require(v == 0 || v == 1, ErrorKind::kParameter, "label " + std::to_string(v) + " outside {0,1}");
      out.push_back(static_cast<std::uint8_t>(v));
    }
  }
  return out;
}

std::vector<CurvePoint> PrecisionRecallCurve(std::span<const EvalPair> pairs) {
  double pos = 0, neg = 0;
  const auto steps = Sweep(pairs, &pos, &neg);
  std::vector<CurvePoint> out;
  if (pos == 0) return out;
  for (const auto& s : steps) out.push_back({s.tp / pos, s.tp / (s.tp + s.fp)});
  return out;
}

std::vector<CurvePoint> RocCurve(std::span<const EvalPair> pairs) {
  double pos = 0, neg = 0;
  const auto steps = Sweep(pairs, &pos, &neg);
  std::vector<CurvePoint> out;
  if (pos == 0 || neg == 0) return out;
  out.push_back({0.0, 0.0});
  for (const auto& s : steps) out.push_back({s.fp / neg, s.tp / pos});
  return out;
}

double AveragePrecision(std::span<const EvalPair> pairs) {
  double pos = 0, neg = 0;
  const auto steps = Sweep(pairs, &pos, &neg);
  Require(pos > 0, ErrorKind::kUndefinedMetric, "average precision is undefined without positives");
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& s : steps) {
    const double recall = s.tp / pos;
    ap += (recall - prev_recall) * (s.tp / (s.tp + s.fp));
    prev_recall = recall;
  }
  return ap;
}

double RocAuc(std::span<const EvalPair> pairs) {
  double pos = 0, neg = 0;
  const auto steps = Sweep(pairs, &pos, &neg);
  Require(pos > 0 && neg > 0, ErrorKind::kUndefinedMetric, "ROC-AUC needs both positives and negatives");
  double area = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  for (const auto& s : steps) {
    const double fpr = s.fp / neg;
    const double tpr = s.tp / pos;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  return area;
}

double MicroMap(std::span<const double> scores, std::span<const std::uint8_t> truths, std::size_t classes) {
  Require(scores.size() == truths.size() && classes > 0 && scores.size() % classes == 0, ErrorKind::kDimension,
          "micro mAP needs matching M x N scores and truths");
  std::vector<EvalPair> pooled(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) pooled[i] = {scores[i], truths[i] != 0};
  return AveragePrecision(pooled);
}

double MacroMap(std::span<const std::optional<double>> aps) {
  double sum = 0.0;
  int n = 0;
  for (const auto& ap : aps) {
    if (ap) {
      sum += *ap;
      ++n;
    }
  }
  Require(n > 0, ErrorKind::kUndefinedMetric, "macro mAP is undefined: no class has a defined AP");
  return sum / n;
}

namespace {

template <typename F>
std::optional<double> Defined(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kUndefinedMetric) return std::nullopt;
    throw;
  }
}

AggregateMetrics Aggregate(const std::vector<int>& class_indices, const std::vector<ClassMetrics>& classes,
                           const std::vector<std::vector<EvalPair>>& per_class) {
  AggregateMetrics agg;
  std::vector<EvalPair> pooled;
  std::vector<std::optional<double>> aps, aucs;
  for (int k : class_indices) {
    const auto& c = classes[static_cast<std::size_t>(k)];
    agg.classes.push_back(c.name);
    if (!c.ap) agg.excluded_from_map.push_back(c.name);
    aps.push_back(c.ap);
    aucs.push_back(c.auc);
    pooled.insert(pooled.end(), per_class[static_cast<std::size_t>(k)].begin(), per_class[static_cast<std::size_t>(k)].end());
  }
  if (class_indices.empty()) return agg;
  agg.micro_map = Defined([&] { return AveragePrecision(pooled); });
  agg.micro_auc = Defined([&] { return RocAuc(pooled); });
  agg.macro_map = Defined([&] { return MacroMap(aps); });
  agg.macro_auc = Defined([&] { return MacroMap(aucs); });
  agg.pr_curve = PrecisionRecallCurve(pooled);
  agg.roc_curve = RocCurve(pooled);
  return agg;
}

}  // namespace

MetricsReport ComputeReport(std::span<const double> scores, const std::vector<std::vector<int>>& raw_labels,
                            const AttributeSchema& schema) {
  const std::size_t n = schema.size();
  const std::size_t m = raw_labels.size();
  Require(n > 0 && scores.size() == m * n, ErrorKind::kDimension, "score matrix does not match labels x classes");
  std::vector<std::vector<EvalPair>> per_class(n);
  for (std::size_t i = 0; i < m; ++i) {
    Require(raw_labels[i].size() == n, ErrorKind::kMalformedInput, "label arity mismatch in evaluation");
    const auto truths = BinarizeEvalLabels(raw_labels[i], schema.label_scheme);
    for (std::size_t k = 0; k < n; ++k) per_class[k].push_back({scores[i * n + k], truths[k] != 0});
  }
  MetricsReport report;
  report.samples = static_cast<int>(m);
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    ClassMetrics c;
    c.name = schema.classes[k].name;
    c.group = schema.classes[k].group;
    for (const auto& p : per_class[k]) (p.truth ? c.positives : c.negatives) += 1;
    c.ap = Defined([&] { return AveragePrecision(per_class[k]); });
    c.auc = Defined([&] { return RocAuc(per_class[k]); });
    report.classes.push_back(c);
    report.class_pr_curves.push_back(PrecisionRecallCurve(per_class[k]));
    report.class_roc_curves.push_back(RocCurve(per_class[k]));
  }
  report.overall = Aggregate(all, report.classes, per_class);
  for (auto g : kAllGroups) {
    const auto members = schema.group_indices(g);
    if (!members.empty()) report.groups.emplace_back(g, Aggregate(members, report.classes, per_class));
  }
  return report;
}

const char* CropModeName(CropMode mode) { return mode == CropMode::kWhole ? "whole" : "bbox"; }

CropMode ParseCropMode(const std::string& name) {
  if (name == "whole") return CropMode::kWhole;
  if (name == "bbox") return CropMode::kBbox;
  Fail(ErrorKind::kConfig, "unknown crop mode '" + name + "' (expected whole or bbox)");
}

std::vector<double> PredictScores(const Checkpoint& checkpoint, const std::vector<const DatasetRecord*>& records,
                                  CropMode mode, int* crop_fallbacks, int batch_size) {
  PrepareOptions prep{mode == CropMode::kBbox, 0.10, checkpoint.canonical_size, checkpoint.mean_rgb};
  const std::size_t classes = static_cast<std::size_t>(checkpoint.config.num_classes);
  std::vector<double> scores;
  scores.reserve(records.size() * classes);
  int fallbacks = 0;
  Rng rng(0);
  const int crop = checkpoint.config.input.height;
  for (std::size_t start = 0; start < records.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), records.size() - start);
    std::vector<const DatasetRecord*> chunk(records.begin() + static_cast<long>(start),
                                            records.begin() + static_cast<long>(start + count));
    for (const auto* r : chunk) {
      Require(r->labels.size() == classes, ErrorKind::kConfigMismatch,
              "record '" + r->image_id + "' has " + std::to_string(r->labels.size()) + " labels, model has " +
                  std::to_string(classes) + " classes");
    }
    const PreparedSplit prepared = PrepareSplit(chunk, checkpoint.schema, prep);
    fallbacks += prepared.crop_fallbacks;
    TensorF batch({static_cast<std::int64_t>(count), checkpoint.config.input.channels, crop, crop});
    const std::size_t sample = static_cast<std::size_t>(checkpoint.config.input.channels) * crop * crop;
    for (std::size_t b = 0; b < count; ++b) {
      const TensorF view = Augment(prepared.images[b], crop, AugmentMode::kEval, rng);
      std::copy(view.data().begin(), view.data().end(), batch.raw() + b * sample);
    }
    const auto out = Forward(checkpoint.config, checkpoint.params, batch, false, rng);
    scores.insert(scores.end(), out.scores.data().begin(), out.scores.data().end());
  }
  if (crop_fallbacks) *crop_fallbacks = fallbacks;
  return scores;
}

MetricsReport Evaluate(const Checkpoint& checkpoint, const std::vector<const DatasetRecord*>& records,
                       const AttributeSchema& schema, CropMode mode) {
  Require(!records.empty(), ErrorKind::kPrecondition, "evaluation split is empty");
  Require(static_cast<int>(schema.size()) == checkpoint.config.num_classes, ErrorKind::kConfigMismatch,
          "dataset has " + std::to_string(schema.size()) + " classes, checkpoint has " +
              std::to_string(checkpoint.config.num_classes));
  int fallbacks = 0;
  const auto scores = PredictScores(checkpoint, records, mode, &fallbacks);
  std::vector<std::vector<int>> labels;
  labels.reserve(records.size());
  for (const auto* r : records) labels.push_back(r->labels);
  MetricsReport report = ComputeReport(scores, labels, schema);
  report.crop_mode = CropModeName(mode);
  report.crop_fallbacks = fallbacks;
  return report;
}

namespace {

using Json = nlohmann::ordered_json;

Json Optional(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json AggregateJson(const AggregateMetrics& a) {
  Json j;
  j["classes"] = a.classes;
  j["micro_map"] = Optional(a.micro_map);
  j["macro_map"] = Optional(a.macro_map);
  j["micro_roc_auc"] = Optional(a.micro_auc);
  j["macro_roc_auc"] = Optional(a.macro_auc);
  j["excluded_from_map"] = a.excluded_from_map;
  return j;
}

void AppendCurve(std::string& out, const std::string& name, const char* kind, const std::vector<CurvePoint>& points) {
  char line[64];
  for (const auto& p : points) {
    out += name;
    std::snprintf(line, sizeof(line), ",%s,%.17g,%.17g\n", kind, p.x, p.y);
    out += line;
  }
}

}  // namespace

std::string ReportToJson(const MetricsReport& report) {
  Json j;
  j["crop_mode"] = report.crop_mode;
  j["samples"] = report.samples;
  j["crop_fallbacks"] = report.crop_fallbacks;
  j["overall"] = AggregateJson(report.overall);
  Json groups = Json::object();
  for (const auto& [g, agg] : report.groups) groups[GroupName(g)] = AggregateJson(agg);
  j["groups"] = groups;
  Json classes = Json::array();
  for (const auto& c : report.classes) {
    classes.push_back({{"name", c.name},
                       {"group", GroupName(c.group)},
                       {"positives", c.positives},
                       {"negatives", c.negatives},
                       {"ap", Optional(c.ap)},
                       {"roc_auc", Optional(c.auc)}});
  }
  j["classes"] = classes;
  return j.dump(2) + "\n";
}

std::string CurvesToCsv(const MetricsReport& report) {
  std::string out = "class,kind,x,y\n";
  AppendCurve(out, "all", "pr", report.overall.pr_curve);
  AppendCurve(out, "all", "roc", report.overall.roc_curve);
  for (const auto& [g, agg] : report.groups) {
    const std::string name = std::string("group:") + GroupName(g);
    AppendCurve(out, name, "pr", agg.pr_curve);
    AppendCurve(out, name, "roc", agg.roc_curve);
  }
  for (std::size_t k = 0; k < report.classes.size(); ++k) {
    AppendCurve(out, report.classes[k].name, "pr", report.class_pr_curves[k]);
    AppendCurve(out, report.classes[k].name, "roc", report.class_roc_curves[k]);
  }
  return out;
}

}  // namespace dan
