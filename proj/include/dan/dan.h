/* C interface to the attribute network engine. All functions return a
 * dan_status; on failure dan_last_error_message() describes the cause. */
#ifndef DAN_DAN_H
#define DAN_DAN_H

#include <stddef.h>
#include <stdint.h>

#if defined(DAN_BUILDING_LIBRARY)
#define DAN_API __attribute__((visibility("default")))
#else
#define DAN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dan_status {
  DAN_OK = 0,
  DAN_E_CONFIG = 1,
  DAN_E_CONFIG_MISMATCH = 2,
  DAN_E_PARAMETER = 3,
  DAN_E_DIMENSION = 4,
  DAN_E_PRECONDITION = 5,
  DAN_E_MALFORMED_INPUT = 6,
  DAN_E_UNDEFINED_METRIC = 7,
  DAN_E_IO = 8,
  DAN_E_CORRUPT_FILE = 9,
  DAN_E_VERSION_MISMATCH = 10,
  DAN_E_NUMERIC = 11,
  DAN_E_INTERNAL = 12
} dan_status;

typedef enum dan_split { DAN_SPLIT_TRAIN = 0, DAN_SPLIT_VAL = 1, DAN_SPLIT_TEST = 2 } dan_split;
typedef enum dan_crop { DAN_CROP_WHOLE = 0, DAN_CROP_BBOX = 1 } dan_crop;

typedef enum dan_metric {
  DAN_METRIC_MICRO_MAP = 0,
  DAN_METRIC_MACRO_MAP = 1,
  DAN_METRIC_MICRO_AUC = 2,
  DAN_METRIC_MACRO_AUC = 3
} dan_metric;

typedef struct dan_dataset dan_dataset_t;
typedef struct dan_model dan_model_t;
typedef struct dan_report dan_report_t;

/* Thread-local; valid until the next failing call on this thread. */
DAN_API const char* dan_last_error_message(void);
DAN_API const char* dan_status_name(dan_status status);

/* Caps the BLAS worker count. n < 1 is a parameter error. */
DAN_API dan_status dan_set_threads(int n);

typedef struct dan_synth_options {
  int train_count;
  int val_count;
  int test_count;
  int image_size;
  double clutter;
  uint64_t seed;
} dan_synth_options;

DAN_API void dan_synth_options_default(dan_synth_options* options);
DAN_API dan_status dan_dataset_generate(const dan_synth_options* options, dan_dataset_t** out);
/* path is a manifest CSV or a directory holding manifest.csv. */
DAN_API dan_status dan_dataset_load(const char* path, dan_dataset_t** out);
DAN_API dan_status dan_dataset_write(const dan_dataset_t* dataset, const char* dir);
DAN_API void dan_dataset_free(dan_dataset_t* dataset);
DAN_API size_t dan_dataset_count(const dan_dataset_t* dataset, dan_split split);
DAN_API size_t dan_dataset_num_classes(const dan_dataset_t* dataset);
DAN_API const char* dan_dataset_class_name(const dan_dataset_t* dataset, size_t k);
DAN_API const char* dan_dataset_class_group(const dan_dataset_t* dataset, size_t k);
/* Records of split with raw label +1 for class k. */
DAN_API size_t dan_dataset_positive_count(const dan_dataset_t* dataset, dan_split split, size_t k);

typedef struct dan_train_options {
  int max_epochs;
  int batch_size;
  double base_lr;
  double momentum;
  double weight_decay;
  double dropout_rate;
  double lr_drop_factor;
  int plateau_patience;
  double plateau_min_delta;
  int min_lr_drops;
  int two_phase; /* 0 trains every layer from the start */
  int crop_train;
  uint64_t seed;
} dan_train_options;

typedef void (*dan_epoch_callback)(int epoch, const char* phase, double lr, double train_loss, double val_loss,
                                   void* user);

DAN_API void dan_train_options_default(dan_train_options* options);
/* warm_start may be NULL. */
DAN_API dan_status dan_train(const dan_dataset_t* dataset, const dan_train_options* options,
                             const dan_model_t* warm_start, dan_epoch_callback on_epoch, void* user,
                             dan_model_t** out);

DAN_API dan_status dan_model_save(const dan_model_t* model, const char* path);
DAN_API dan_status dan_model_load(const char* path, dan_model_t** out);
/* Epoch history of the training run that produced model; header only for
 * loaded checkpoints. */
DAN_API dan_status dan_model_write_history(const dan_model_t* model, const char* path);
DAN_API void dan_model_free(dan_model_t* model);
DAN_API size_t dan_model_num_classes(const dan_model_t* model);
DAN_API const char* dan_model_class_name(const dan_model_t* model, size_t k);

DAN_API dan_status dan_evaluate(const dan_model_t* model, const dan_dataset_t* dataset, dan_split split,
                                dan_crop crop, dan_report_t** out);
DAN_API dan_status dan_report_write_json(const dan_report_t* report, const char* path);
DAN_API dan_status dan_report_write_curves(const dan_report_t* report, const char* path);
DAN_API size_t dan_report_group_count(const dan_report_t* report);
DAN_API const char* dan_report_group_name(const dan_report_t* report, size_t g);
/* group NULL selects the overall numbers. *defined is 0 when the metric
 * has no value (e.g. no positives). */
DAN_API dan_status dan_report_metric(const dan_report_t* report, const char* group, dan_metric metric,
                                     double* value, int* defined);
DAN_API int dan_report_crop_fallbacks(const dan_report_t* report);
DAN_API void dan_report_free(dan_report_t* report);

/* Scores for every class of the model, in class order. */
DAN_API dan_status dan_predict(const dan_model_t* model, const char* image_path, double* scores, size_t capacity);
/* K highest scores, descending, ties broken by class order. */
DAN_API dan_status dan_predict_topk(const dan_model_t* model, const char* image_path, size_t k, size_t* indices,
                                    double* scores, size_t* count);

typedef struct dan_attention_info {
  double map_mass;
  double lost_mass_fraction;
  int max_x;
  int max_y;
  int width;
  int height;
} dan_attention_info;

/* Writes overlay to out_path, <stem>_map<ext> and <stem>.json. layer NULL
 * selects the first conv layer; "input" reads out at the pixels. */
DAN_API dan_status dan_attend(const dan_model_t* model, const char* image_path, const char* class_name,
                              const char* layer, const char* out_path, dan_attention_info* info);

#ifdef __cplusplus
}
#endif

#endif
