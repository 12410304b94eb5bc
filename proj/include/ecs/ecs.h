/* C interface to the ECS filter-pruning library. Objects are opaque handles
 * released with their *_free function; every call returns an ecs_status and
 * leaves a message for ecs_last_error() on failure. String outputs use the
 * (buf, cap, needed) pattern: *needed receives the length including the
 * terminator, and ECS_ERR_BUFFER_TOO_SMALL is returned when cap is short. */
#ifndef ECS_ECS_H
#define ECS_ECS_H

#include <stddef.h>
#include <stdint.h>

#if defined(ECS_BUILDING_LIBRARY)
#define ECS_API __attribute__((visibility("default")))
#else
#define ECS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ecs_status {
  ECS_OK = 0,
  ECS_ERR_INVALID_ARGUMENT = 1,
  ECS_ERR_IO = 2,
  ECS_ERR_FORMAT = 3,
  ECS_ERR_CHECKSUM = 4,
  ECS_ERR_VERSION = 5,
  ECS_ERR_SHAPE = 6,
  ECS_ERR_NUMERIC = 7,
  ECS_ERR_LAYOUT = 8,
  ECS_ERR_CONFIG = 9,
  ECS_ERR_BUFFER_TOO_SMALL = 10,
  ECS_ERR_INTERNAL = 11
} ecs_status;

typedef struct ecs_config ecs_config;
typedef struct ecs_dataset ecs_dataset;
typedef struct ecs_network ecs_network;
typedef struct ecs_individual ecs_individual;

typedef void (*ecs_log_fn)(const char* line, void* user);

ECS_API const char* ecs_status_string(ecs_status status);
/* Message of the last failed call on this thread; "" if none. */
ECS_API const char* ecs_last_error(void);
ECS_API const char* ecs_version(void);

/* Configuration: file entries and overrides are kept separately and merged
 * on demand (defaults < preset < file < overrides). */
ECS_API ecs_status ecs_config_create(ecs_config** out);
ECS_API ecs_status ecs_config_load_file(ecs_config* cfg, const char* path);
ECS_API ecs_status ecs_config_parse_text(ecs_config* cfg, const char* text);
/* key is "section.key", e.g. "ga.population" or "run.seed". */
ECS_API ecs_status ecs_config_set(ecs_config* cfg, const char* key,
                                  const char* value);
ECS_API ecs_status ecs_config_apply_preset(ecs_config* cfg, const char* name);
ECS_API ecs_status ecs_config_validate(const ecs_config* cfg);
ECS_API ecs_status ecs_config_get(const ecs_config* cfg, const char* key,
                                  char* buf, size_t cap, size_t* needed);
ECS_API ecs_status ecs_config_serialize(const ecs_config* cfg, char* buf,
                                        size_t cap, size_t* needed);
ECS_API void ecs_config_free(ecs_config* cfg);

/* Commands: "train", "compress", "evaluate", "report", "baseline". */
ECS_API ecs_status ecs_run(const ecs_config* cfg, const char* command,
                           ecs_log_fn log, void* user);

ECS_API ecs_status ecs_dataset_load_idx(const char* images_path,
                                        const char* labels_path,
                                        ecs_dataset** out);
ECS_API ecs_status ecs_dataset_synthetic_blobs(int classes, int per_class,
                                               int height, int width,
                                               int channels, uint64_t seed,
                                               ecs_dataset** out);
ECS_API ecs_status ecs_dataset_info(const ecs_dataset* ds, size_t* count,
                                    int* height, int* width, int* channels);
ECS_API void ecs_dataset_free(ecs_dataset* ds);

ECS_API ecs_status ecs_network_create_lenet(uint64_t seed, ecs_network** out);
ECS_API ecs_status ecs_network_load(const char* path, ecs_network** out);
ECS_API ecs_status ecs_network_save(const ecs_network* net, const char* path);
/* Top-1 error over the whole dataset. */
ECS_API ecs_status ecs_network_error(const ecs_network* net,
                                     const ecs_dataset* ds, double* error);
/* batch: count images in NHWC order; logits: count * classes values. */
ECS_API ecs_status ecs_network_forward(const ecs_network* net,
                                       const float* batch, size_t count,
                                       float* logits, size_t logits_cap);
ECS_API ecs_status ecs_network_train(ecs_network* net, const ecs_dataset* ds,
                                     int epochs, int batch_size,
                                     double learning_rate, uint64_t seed);
ECS_API ecs_status ecs_network_parameter_count(const ecs_network* net,
                                               size_t* count);
ECS_API ecs_status ecs_network_describe(const ecs_network* net, char* buf,
                                        size_t cap, size_t* needed);
ECS_API void ecs_network_free(ecs_network* net);

/* Parses '0'/'1' text (optional '|' layer separators) against net's layout. */
ECS_API ecs_status ecs_individual_parse(const ecs_network* net,
                                        const char* text, ecs_individual** out);
/* Keeps the first counts[i] filters of every maskable layer. */
ECS_API ecs_status ecs_individual_keep_first(const ecs_network* net,
                                             const int* counts, size_t n,
                                             ecs_individual** out);
ECS_API ecs_status ecs_individual_load(const char* path, ecs_individual** out);
ECS_API ecs_status ecs_individual_save(const ecs_individual* ind,
                                       const char* path);
ECS_API ecs_status ecs_individual_to_string(const ecs_individual* ind,
                                            char* buf, size_t cap,
                                            size_t* needed);
ECS_API ecs_status ecs_individual_compact(const ecs_network* net,
                                          const ecs_individual* ind,
                                          ecs_network** out);
ECS_API void ecs_individual_free(ecs_individual* ind);

/* Overall weight, multiplication and feature-map ratios. */
ECS_API ecs_status ecs_ratios(const ecs_network* net,
                              const ecs_individual* ind, double* r_c,
                              double* r_s, double* r_f);
ECS_API ecs_status ecs_report_text(const ecs_network* net,
                                   const ecs_individual* ind, char* buf,
                                   size_t cap, size_t* needed);
/* layer is 1-based; *written receives the number of images. */
ECS_API ecs_status ecs_export_filters(const ecs_network* net, size_t layer,
                                      const char* dir, size_t* written);

#ifdef __cplusplus
}
#endif

#endif
