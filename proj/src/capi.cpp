#include "dan/dan.h"

#include <algorithm>
#include <filesystem>
#include <new>
#include <numeric>
#include <string>

#include "blas.hpp"
#include "dan/attention.hpp"
#include "dan/checkpoint.hpp"
#include "dan/data.hpp"
#include "dan/io.hpp"
#include "dan/metrics.hpp"
#include "dan/trainer.hpp"

struct dan_dataset {
  dan::Dataset dataset;
  std::vector<std::string> group_names;
};

struct dan_model {
  dan::Checkpoint checkpoint;
  std::vector<dan::HistoryRow> history;
};

struct dan_report {
  dan::MetricsReport report;
  std::vector<std::string> group_names;
};

namespace {

thread_local std::string g_last_error;

dan_status StatusFor(dan::ErrorKind kind) {
  using dan::ErrorKind;
  switch (kind) {
    case ErrorKind::kDimension: return DAN_E_DIMENSION;
    case ErrorKind::kNumeric: return DAN_E_NUMERIC;
    case ErrorKind::kParameter: return DAN_E_PARAMETER;
    case ErrorKind::kConfig: return DAN_E_CONFIG;
    case ErrorKind::kConfigMismatch: return DAN_E_CONFIG_MISMATCH;
    case ErrorKind::kPrecondition: return DAN_E_PRECONDITION;
    case ErrorKind::kContract: return DAN_E_INTERNAL;
    case ErrorKind::kIo: return DAN_E_IO;
    case ErrorKind::kCorruptFile: return DAN_E_CORRUPT_FILE;
    case ErrorKind::kVersionMismatch: return DAN_E_VERSION_MISMATCH;
    case ErrorKind::kUndefinedMetric: return DAN_E_UNDEFINED_METRIC;
    case ErrorKind::kMalformedInput: return DAN_E_MALFORMED_INPUT;
  }
  return DAN_E_INTERNAL;
}

template <typename F>
dan_status Guard(F&& body) {
  try {
    body();
    return DAN_OK;
  } catch (const dan::Error& e) {
    g_last_error = e.what();
    return StatusFor(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DAN_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DAN_E_INTERNAL;
  }
}

void RequireArg(bool ok, const char* what) {
  dan::Require(ok, dan::ErrorKind::kParameter, std::string("invalid argument: ") + what);
}

dan::Split ToSplit(dan_split split) {
  switch (split) {
    case DAN_SPLIT_TRAIN: return dan::Split::kTrain;
    case DAN_SPLIT_VAL: return dan::Split::kVal;
    case DAN_SPLIT_TEST: return dan::Split::kTest;
  }
  dan::Fail(dan::ErrorKind::kParameter, "unknown split");
}

std::vector<std::string> GroupNames() {
  std::vector<std::string> out;
  for (auto g : dan::kAllGroups) out.emplace_back(dan::GroupName(g));
  return out;
}

const dan::AggregateMetrics& FindAggregate(const dan::MetricsReport& report, const char* group) {
  if (group == nullptr) return report.overall;
  for (const auto& [g, agg] : report.groups) {
    if (group == std::string(dan::GroupName(g))) return agg;
  }
  dan::Fail(dan::ErrorKind::kParameter, std::string("unknown group '") + group + "'");
}

std::vector<double> ScoreImage(const dan::Checkpoint& ck, const char* image_path) {
  RequireArg(image_path != nullptr, "image_path");
  const dan::Image image = dan::ReadImage(image_path);
  const dan::EvalView view = dan::MakeEvalView(ck, image);
  dan::Rng rng(0);
  const dan::TensorF batch = view.input.reshaped({1, view.input.dim(0), view.input.dim(1), view.input.dim(2)});
  const auto out = dan::Forward(ck.config, ck.params, batch, false, rng);
  return {out.scores.data().begin(), out.scores.data().end()};
}

}  // namespace

extern "C" {

const char* dan_last_error_message(void) { return g_last_error.c_str(); }

const char* dan_status_name(dan_status status) {
  switch (status) {
    case DAN_OK: return "ok";
    case DAN_E_CONFIG: return "config error";
    case DAN_E_CONFIG_MISMATCH: return "config mismatch";
    case DAN_E_PARAMETER: return "parameter error";
    case DAN_E_DIMENSION: return "dimension error";
    case DAN_E_PRECONDITION: return "precondition failed";
    case DAN_E_MALFORMED_INPUT: return "malformed input";
    case DAN_E_UNDEFINED_METRIC: return "undefined metric";
    case DAN_E_IO: return "I/O error";
    case DAN_E_CORRUPT_FILE: return "corrupt file";
    case DAN_E_VERSION_MISMATCH: return "version mismatch";
    case DAN_E_NUMERIC: return "numeric error";
    case DAN_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

dan_status dan_set_threads(int n) {
  return Guard([&] {
    RequireArg(n >= 1, "threads must be >= 1");
    dan::blas::SetThreads(n);
  });
}

void dan_synth_options_default(dan_synth_options* options) {
  if (!options) return;
  const dan::SyntheticConfig d;
  *options = {d.train_count, d.val_count, d.test_count, d.image_size, d.clutter, d.seed};
}

dan_status dan_dataset_generate(const dan_synth_options* options, dan_dataset_t** out) {
  return Guard([&] {
    RequireArg(options && out, "options/out");
    *out = nullptr;
    dan::SyntheticConfig config;
    config.train_count = options->train_count;
    config.val_count = options->val_count;
    config.test_count = options->test_count;
    config.image_size = options->image_size;
    config.clutter = options->clutter;
    config.seed = options->seed;
    *out = new dan_dataset{dan::GenerateSynthetic(config), GroupNames()};
  });
}

dan_status dan_dataset_load(const char* path, dan_dataset_t** out) {
  return Guard([&] {
    RequireArg(path && out, "path/out");
    *out = nullptr;
    std::filesystem::path p(path);
    if (std::filesystem::is_directory(p)) p /= "manifest.csv";
    *out = new dan_dataset{dan::LoadManifest(p.string()), GroupNames()};
  });
}

dan_status dan_dataset_write(const dan_dataset_t* dataset, const char* dir) {
  return Guard([&] {
    RequireArg(dataset && dir, "dataset/dir");
    dan::WriteDataset(dataset->dataset, dir);
  });
}

void dan_dataset_free(dan_dataset_t* dataset) { delete dataset; }

size_t dan_dataset_count(const dan_dataset_t* dataset, dan_split split) {
  if (!dataset || split < DAN_SPLIT_TRAIN || split > DAN_SPLIT_TEST) return 0;
  return dataset->dataset.count(ToSplit(split));
}

size_t dan_dataset_num_classes(const dan_dataset_t* dataset) { return dataset ? dataset->dataset.schema.size() : 0; }

const char* dan_dataset_class_name(const dan_dataset_t* dataset, size_t k) {
  if (!dataset || k >= dataset->dataset.schema.size()) return nullptr;
  return dataset->dataset.schema.classes[k].name.c_str();
}

const char* dan_dataset_class_group(const dan_dataset_t* dataset, size_t k) {
  if (!dataset || k >= dataset->dataset.schema.size()) return nullptr;
  return dan::GroupName(dataset->dataset.schema.classes[k].group);
}

size_t dan_dataset_positive_count(const dan_dataset_t* dataset, dan_split split, size_t k) {
  if (!dataset || k >= dataset->dataset.schema.size() || split < DAN_SPLIT_TRAIN || split > DAN_SPLIT_TEST) return 0;
  return static_cast<size_t>(dataset->dataset.positive_counts(ToSplit(split))[k]);
}

void dan_train_options_default(dan_train_options* options) {
  if (!options) return;
  const dan::TrainerConfig d;
  *options = {d.max_epochs,     d.batch_size,         d.base_lr,
              d.momentum,       d.weight_decay,       d.dropout_rate,
              d.lr_drop_factor, d.plateau_patience,   d.plateau_min_delta,
              d.min_lr_drops,   d.phase_mode == dan::PhaseMode::kTwoPhase ? 1 : 0,
              d.crop_train ? 1 : 0, d.seed};
}

dan_status dan_train(const dan_dataset_t* dataset, const dan_train_options* options, const dan_model_t* warm_start,
                     dan_epoch_callback on_epoch, void* user, dan_model_t** out) {
  return Guard([&] {
    RequireArg(dataset && options && out, "dataset/options/out");
    *out = nullptr;
    dan::TrainerConfig config;
    config.max_epochs = options->max_epochs;
    config.batch_size = options->batch_size;
    config.base_lr = options->base_lr;
    config.momentum = options->momentum;
    config.weight_decay = options->weight_decay;
    config.dropout_rate = options->dropout_rate;
    config.lr_drop_factor = options->lr_drop_factor;
    config.plateau_patience = options->plateau_patience;
    config.plateau_min_delta = options->plateau_min_delta;
    config.min_lr_drops = options->min_lr_drops;
    config.phase_mode = options->two_phase ? dan::PhaseMode::kTwoPhase : dan::PhaseMode::kFull;
    config.crop_train = options->crop_train != 0;
    config.seed = options->seed;
    std::optional<dan::Checkpoint> warm;
    if (warm_start) warm = warm_start->checkpoint;
    dan::EpochCallback cb;
    if (on_epoch) {
      cb = [&](const dan::HistoryRow& row, const dan::ParameterSet<float>&) {
        on_epoch(row.epoch, dan::PhaseName(row.phase), row.lr, row.train_loss, row.val_loss, user);
      };
    }
    dan::TrainResult result = dan::TrainModel(dataset->dataset, config, warm, cb);
    *out = new dan_model{std::move(result.best), std::move(result.history)};
  });
}

dan_status dan_model_save(const dan_model_t* model, const char* path) {
  return Guard([&] {
    RequireArg(model && path, "model/path");
    dan::SaveCheckpoint(path, model->checkpoint);
  });
}

dan_status dan_model_load(const char* path, dan_model_t** out) {
  return Guard([&] {
    RequireArg(path && out, "path/out");
    *out = nullptr;
    *out = new dan_model{dan::LoadCheckpoint(path), {}};
  });
}

dan_status dan_model_write_history(const dan_model_t* model, const char* path) {
  return Guard([&] {
    RequireArg(model && path, "model/path");
    dan::WriteFileAtomic(path, dan::HistoryToCsv(model->history));
  });
}

void dan_model_free(dan_model_t* model) { delete model; }

size_t dan_model_num_classes(const dan_model_t* model) {
  return model ? static_cast<size_t>(model->checkpoint.config.num_classes) : 0;
}

const char* dan_model_class_name(const dan_model_t* model, size_t k) {
  if (!model || k >= model->checkpoint.schema.size()) return nullptr;
  return model->checkpoint.schema.classes[k].name.c_str();
}

dan_status dan_evaluate(const dan_model_t* model, const dan_dataset_t* dataset, dan_split split, dan_crop crop,
                        dan_report_t** out) {
  return Guard([&] {
    RequireArg(model && dataset && out, "model/dataset/out");
    RequireArg(crop == DAN_CROP_WHOLE || crop == DAN_CROP_BBOX, "crop");
    *out = nullptr;
    const auto records = dataset->dataset.split(ToSplit(split));
    auto report = dan::Evaluate(model->checkpoint, records, dataset->dataset.schema,
                                crop == DAN_CROP_BBOX ? dan::CropMode::kBbox : dan::CropMode::kWhole);
    *out = new dan_report{std::move(report), GroupNames()};
  });
}

dan_status dan_report_write_json(const dan_report_t* report, const char* path) {
  return Guard([&] {
    RequireArg(report && path, "report/path");
    dan::WriteFileAtomic(path, dan::ReportToJson(report->report));
  });
}

dan_status dan_report_write_curves(const dan_report_t* report, const char* path) {
  return Guard([&] {
    RequireArg(report && path, "report/path");
    dan::WriteFileAtomic(path, dan::CurvesToCsv(report->report));
  });
}

size_t dan_report_group_count(const dan_report_t* report) { return report ? report->report.groups.size() : 0; }

const char* dan_report_group_name(const dan_report_t* report, size_t g) {
  if (!report || g >= report->report.groups.size()) return nullptr;
  return dan::GroupName(report->report.groups[g].first);
}

dan_status dan_report_metric(const dan_report_t* report, const char* group, dan_metric metric, double* value,
                             int* defined) {
  return Guard([&] {
    RequireArg(report && value && defined, "report/value/defined");
    const auto& agg = FindAggregate(report->report, group);
    const std::optional<double>* v = nullptr;
    switch (metric) {
      case DAN_METRIC_MICRO_MAP: v = &agg.micro_map; break;
      case DAN_METRIC_MACRO_MAP: v = &agg.macro_map; break;
      case DAN_METRIC_MICRO_AUC: v = &agg.micro_auc; break;
      case DAN_METRIC_MACRO_AUC: v = &agg.macro_auc; break;
    }
    RequireArg(v != nullptr, "metric");
    *defined = v->has_value() ? 1 : 0;
    *value = v->value_or(0.0);
  });
}

int dan_report_crop_fallbacks(const dan_report_t* report) { return report ? report->report.crop_fallbacks : 0; }

void dan_report_free(dan_report_t* report) { delete report; }

dan_status dan_predict(const dan_model_t* model, const char* image_path, double* scores, size_t capacity) {
  return Guard([&] {
    RequireArg(model && scores, "model/scores");
    const auto s = ScoreImage(model->checkpoint, image_path);
    RequireArg(capacity >= s.size(), "capacity below class count");
    std::copy(s.begin(), s.end(), scores);
  });
}

dan_status dan_predict_topk(const dan_model_t* model, const char* image_path, size_t k, size_t* indices,
                            double* scores, size_t* count) {
  return Guard([&] {
    RequireArg(model && indices && scores && count, "model/indices/scores/count");
    RequireArg(k >= 1, "k must be >= 1");
    const auto s = ScoreImage(model->checkpoint, image_path);
    std::vector<size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return s[a] > s[b]; });
    *count = std::min(k, s.size());
    for (size_t i = 0; i < *count; ++i) {
      indices[i] = order[i];
      scores[i] = s[order[i]];
    }
  });
}

dan_status dan_attend(const dan_model_t* model, const char* image_path, const char* class_name, const char* layer,
                      const char* out_path, dan_attention_info* info) {
  return Guard([&] {
    RequireArg(model && image_path && class_name && out_path, "model/image_path/class_name/out_path");
    const dan::Image image = dan::ReadImage(image_path);
    const dan::EvalView view = dan::MakeEvalView(model->checkpoint, image);
    const auto map = dan::Attend(model->checkpoint, view, class_name, layer ? layer : dan::kDefaultAttentionLayer);
    dan::ExportHeatmap(map, view.base, out_path);
    if (info) {
      *info = {map.total(), map.lost_fraction(), map.max_x, map.max_y, map.width, map.height};
    }
  });
}

}  // extern "C"
