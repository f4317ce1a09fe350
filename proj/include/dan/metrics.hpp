#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dan/checkpoint.hpp"
#include "dan/data.hpp"
#include "dan/schema.hpp"

namespace dan {

struct EvalPair {
  double score = 0.0;
  bool truth = false;
};

struct CurvePoint {
  double x = 0.0;  // recall (PR) or false-positive rate (ROC)
  double y = 0.0;  // precision (PR) or true-positive rate (ROC)
};

// Ternary: +1 and 0 (ambiguous) are positive, -1 negative. Binary: identity.
std::vector<std::uint8_t> BinarizeEvalLabels(std::span<const int> raw, LabelScheme scheme);

// One (R_n, P_n) point per distinct score, sweeping from the highest.
std::vector<CurvePoint> PrecisionRecallCurve(std::span<const EvalPair> pairs);

// (0,0) followed by one (FPR, TPR) point per distinct score.
std::vector<CurvePoint> RocCurve(std::span<const EvalPair> pairs);

// sum_n (R_n - R_{n-1}) P_n without interpolation. kUndefinedMetric when
// there are no positives.
double AveragePrecision(std::span<const EvalPair> pairs);

// Trapezoidal area under the ROC curve; tied scores form a single step.
// kUndefinedMetric unless both classes are present.
double RocAuc(std::span<const EvalPair> pairs);

// scores and truths are row-major M x N.
double MicroMap(std::span<const double> scores, std::span<const std::uint8_t> truths, std::size_t classes);

// Mean over defined entries; kUndefinedMetric when none is defined.
double MacroMap(std::span<const std::optional<double>> aps);

struct ClassMetrics {
  std::string name;
  AttributeGroup group = AttributeGroup::kColor;
  int positives = 0;
  int negatives = 0;
  std::optional<double> ap;
  std::optional<double> auc;
};

struct AggregateMetrics {
  std::vector<std::string> classes;
  std::optional<double> micro_map;
  std::optional<double> macro_map;
  std::optional<double> micro_auc;  // pooled pairs
  std::optional<double> macro_auc;  // mean of per-class AUC
  std::vector<std::string> excluded_from_map;  // classes with no positives
  std::vector<CurvePoint> pr_curve;             // pooled
  std::vector<CurvePoint> roc_curve;            // pooled
};

struct MetricsReport {
  std::string crop_mode = "whole";
  int samples = 0;
  int crop_fallbacks = 0;
  std::vector<ClassMetrics> classes;
  AggregateMetrics overall;
  std::vector<std::pair<AttributeGroup, AggregateMetrics>> groups;
  std::vector<std::vector<CurvePoint>> class_pr_curves;
  std::vector<std::vector<CurvePoint>> class_roc_curves;
};

// scores row-major M x N; raw labels per sample.
MetricsReport ComputeReport(std::span<const double> scores, const std::vector<std::vector<int>>& raw_labels,
                            const AttributeSchema& schema);

enum class CropMode { kWhole, kBbox };

const char* CropModeName(CropMode mode);
CropMode ParseCropMode(const std::string& name);

// Eval-mode scores [M,N] for records, preprocessed the way the checkpoint
// was trained (resize, center crop). Bbox mode crops with a 10% margin and
// falls back to the whole image for records without a box.
std::vector<double> PredictScores(const Checkpoint& checkpoint, const std::vector<const DatasetRecord*>& records,
                                  CropMode mode, int* crop_fallbacks = nullptr, int batch_size = 32);

MetricsReport Evaluate(const Checkpoint& checkpoint, const std::vector<const DatasetRecord*>& records,
                       const AttributeSchema& schema, CropMode mode);

std::string ReportToJson(const MetricsReport& report);
// Rows "class,kind,x,y"; class is a class name, "all" or "group:<name>".
std::string CurvesToCsv(const MetricsReport& report);

}  // namespace dan
