#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dan/dan.h"

namespace {

int ExitCode(dan_status status) {
  switch (status) {
    case DAN_OK:
      return 0;
    case DAN_E_IO:
    case DAN_E_CORRUPT_FILE:
    case DAN_E_VERSION_MISMATCH:
      return 3;
    case DAN_E_NUMERIC:
      return 4;
    case DAN_E_INTERNAL:
      return 1;
    default:
      return 2;
  }
}

struct Failure {
  int code;
};

void Check(dan_status status) {
  if (status == DAN_OK) return;
  std::fprintf(stderr, "error (%s): %s\n", dan_status_name(status), dan_last_error_message());
  throw Failure{ExitCode(status)};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
};

using Dataset = Handle<dan_dataset_t, dan_dataset_free>;
using Model = Handle<dan_model_t, dan_model_free>;
using Report = Handle<dan_report_t, dan_report_free>;

dan_split SplitFromName(const std::string& name) {
  if (name == "train") return DAN_SPLIT_TRAIN;
  if (name == "val") return DAN_SPLIT_VAL;
  return DAN_SPLIT_TEST;
}

std::string Metric(const dan_report_t* report, const char* group, dan_metric metric) {
  double value = 0.0;
  int defined = 0;
  Check(dan_report_metric(report, group, metric, &value, &defined));
  if (!defined) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", value);
  return buf;
}

void PrintMetricsRow(const dan_report_t* report, const char* group, const char* label) {
  std::printf("%-10s micro_mAP=%s macro_mAP=%s micro_AUC=%s macro_AUC=%s\n", label,
              Metric(report, group, DAN_METRIC_MICRO_MAP).c_str(), Metric(report, group, DAN_METRIC_MACRO_MAP).c_str(),
              Metric(report, group, DAN_METRIC_MICRO_AUC).c_str(), Metric(report, group, DAN_METRIC_MACRO_AUC).c_str());
}

void PrintEpoch(int epoch, const char* phase, double lr, double train_loss, double val_loss, void*) {
  std::printf("epoch %d phase=%s lr=%.3g train_loss=%.6f val_loss=%.6f\n", epoch, phase, lr, train_loss, val_loss);
  std::fflush(stdout);
}

std::string SiblingHistoryPath(const std::string& checkpoint) {
  const auto slash = checkpoint.find_last_of('/');
  return (slash == std::string::npos ? std::string() : checkpoint.substr(0, slash + 1)) + "history.csv";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-label attribute network: data generation, training, evaluation and attention maps"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Maximum BLAS worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  dan_synth_options synth;
  dan_synth_options_default(&synth);
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic attribute dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  gen->add_option("--train", synth.train_count, "Train images")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--val", synth.val_count, "Validation images")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--test", synth.test_count, "Test images")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--size", synth.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--clutter", synth.clutter, "Background clutter in [0,1]")->capture_default_str();

  dan_train_options topt;
  dan_train_options_default(&topt);
  std::string train_data, train_out, warm_start, history_path;
  bool two_phase = topt.two_phase != 0;
  bool crop_train = topt.crop_train != 0;
  auto* train = app.add_subcommand("train", "Train a model and write the best checkpoint");
  train->add_option("--data", train_data, "Dataset directory or manifest")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--epochs", topt.max_epochs, "Maximum epochs")->capture_default_str();
  train->add_option("--batch", topt.batch_size, "Batch size")->capture_default_str();
  train->add_option("--lr", topt.base_lr, "Base learning rate")->capture_default_str();
  train->add_option("--momentum", topt.momentum, "SGD momentum")->capture_default_str();
  train->add_option("--weight-decay", topt.weight_decay, "Weight decay")->capture_default_str();
  train->add_option("--dropout", topt.dropout_rate, "Dropout rate after fc layers")->capture_default_str();
  train->add_option("--patience", topt.plateau_patience, "Epochs without improvement before a plateau")
      ->capture_default_str();
  train->add_flag("--two-phase,!--full", two_phase, "Head-only phase before finetuning (default) or train all layers");
  train->add_flag("--crop-train,!--no-crop-train", crop_train, "Crop train/val images to the bounding box (default)");
  train->add_option("--seed", topt.seed, "Training seed")->capture_default_str();
  train->add_option("--warm-start", warm_start, "Initialize from this checkpoint");
  train->add_option("--history", history_path, "History CSV path (default: history.csv next to --out)");

  std::string eval_ckpt, eval_data, eval_split = "test", eval_crop = "whole", eval_report, eval_curves;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("--data", eval_data, "Dataset directory or manifest")->required();
  eval->add_option("--split", eval_split, "Split to evaluate")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--crop", eval_crop, "whole or bbox")->capture_default_str()->check(CLI::IsMember({"whole", "bbox"}));
  eval->add_option("--report", eval_report, "Metrics JSON output");
  eval->add_option("--curves", eval_curves, "PR/ROC curve CSV output");

  std::string pred_ckpt, pred_image;
  std::size_t top = 3;
  auto* predict = app.add_subcommand("predict", "Print the top-scoring attributes of an image");
  predict->add_option("--ckpt", pred_ckpt, "Checkpoint path")->required();
  predict->add_option("--image", pred_image, "PNG or PPM image")->required();
  predict->add_option("--top", top, "Number of attributes")->capture_default_str()->check(CLI::PositiveNumber);

  std::string att_ckpt, att_image, att_class, att_layer = "conv1_1", att_out;
  auto* attend = app.add_subcommand("attend", "Write an attention map for one attribute");
  attend->add_option("--ckpt", att_ckpt, "Checkpoint path")->required();
  attend->add_option("--image", att_image, "PNG or PPM image")->required();
  attend->add_option("--class", att_class, "Attribute name")->required();
  attend->add_option("--layer", att_layer, "Conv layer name or 'input'")->capture_default_str();
  attend->add_option("--out", att_out, "Overlay path (.png or .ppm)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Check(dan_set_threads(threads));
    if (*gen) {
      Dataset ds;
      Check(dan_dataset_generate(&synth, &ds.ptr));
      Check(dan_dataset_write(ds.ptr, gen_out.c_str()));
      const dan_split splits[] = {DAN_SPLIT_TRAIN, DAN_SPLIT_VAL, DAN_SPLIT_TEST};
      std::printf("train: %zu\nval: %zu\ntest: %zu\n", dan_dataset_count(ds.ptr, DAN_SPLIT_TRAIN),
                  dan_dataset_count(ds.ptr, DAN_SPLIT_VAL), dan_dataset_count(ds.ptr, DAN_SPLIT_TEST));
      std::printf("%-12s %-8s %6s %6s %6s\n", "class", "group", "train", "val", "test");
      for (std::size_t k = 0; k < dan_dataset_num_classes(ds.ptr); ++k) {
        std::printf("%-12s %-8s", dan_dataset_class_name(ds.ptr, k), dan_dataset_class_group(ds.ptr, k));
        for (auto s : splits) std::printf(" %6zu", dan_dataset_positive_count(ds.ptr, s, k));
        std::printf("\n");
      }
    } else if (*train) {
      topt.two_phase = two_phase ? 1 : 0;
      topt.crop_train = crop_train ? 1 : 0;
      Dataset ds;
      Check(dan_dataset_load(train_data.c_str(), &ds.ptr));
      Model warm;
      if (!warm_start.empty()) Check(dan_model_load(warm_start.c_str(), &warm.ptr));
      Model model;
      Check(dan_train(ds.ptr, &topt, warm.ptr, PrintEpoch, nullptr, &model.ptr));
      Check(dan_model_save(model.ptr, train_out.c_str()));
      const std::string history = history_path.empty() ? SiblingHistoryPath(train_out) : history_path;
      Check(dan_model_write_history(model.ptr, history.c_str()));
      std::printf("wrote %s and %s\n", train_out.c_str(), history.c_str());
    } else if (*eval) {
      Model model;
      Check(dan_model_load(eval_ckpt.c_str(), &model.ptr));
      Dataset ds;
      Check(dan_dataset_load(eval_data.c_str(), &ds.ptr));
      Report report;
      Check(dan_evaluate(model.ptr, ds.ptr, SplitFromName(eval_split),
                         eval_crop == "bbox" ? DAN_CROP_BBOX : DAN_CROP_WHOLE, &report.ptr));
      if (!eval_report.empty()) Check(dan_report_write_json(report.ptr, eval_report.c_str()));
      if (!eval_curves.empty()) Check(dan_report_write_curves(report.ptr, eval_curves.c_str()));
      std::printf("split=%s crop=%s samples=%zu\n", eval_split.c_str(), eval_crop.c_str(),
                  dan_dataset_count(ds.ptr, SplitFromName(eval_split)));
      if (const int fallbacks = dan_report_crop_fallbacks(report.ptr); fallbacks > 0) {
        std::fprintf(stderr, "warning: %d records without a bounding box were evaluated whole\n", fallbacks);
      }
      PrintMetricsRow(report.ptr, nullptr, "overall");
      for (std::size_t g = 0; g < dan_report_group_count(report.ptr); ++g) {
        const char* name = dan_report_group_name(report.ptr, g);
        PrintMetricsRow(report.ptr, name, name);
      }
    } else if (*predict) {
      Model model;
      Check(dan_model_load(pred_ckpt.c_str(), &model.ptr));
      std::vector<std::size_t> indices(top);
      std::vector<double> scores(top);
      std::size_t count = 0;
      Check(dan_predict_topk(model.ptr, pred_image.c_str(), top, indices.data(), scores.data(), &count));
      for (std::size_t i = 0; i < count; ++i) {
        std::printf("%s %.6f\n", dan_model_class_name(model.ptr, indices[i]), scores[i]);
      }
    } else if (*attend) {
      Model model;
      Check(dan_model_load(att_ckpt.c_str(), &model.ptr));
      dan_attention_info info{};
      Check(dan_attend(model.ptr, att_image.c_str(), att_class.c_str(), att_layer.c_str(), att_out.c_str(), &info));
      std::printf("class=%s layer=%s max=(%d,%d) lost_mass_fraction=%.6f\n", att_class.c_str(), att_layer.c_str(),
                  info.max_x, info.max_y, info.lost_mass_fraction);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
