/* SPDX-License-Identifier: Apache-2.0 */
/* Copyright 2026 The oodkit Authors */

#ifndef OODKIT_OODKIT_H_
#define OODKIT_OODKIT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(OODKIT_BUILDING_LIBRARY)
#define OODKIT_API __declspec(dllexport)
#else
#define OODKIT_API __declspec(dllimport)
#endif
#else
#define OODKIT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum oodkit_status {
  OODKIT_OK = 0,
  OODKIT_ERR_INVALID = 1, /* bad argument or violated data invariant */
  OODKIT_ERR_IO = 2,
  OODKIT_ERR_FORMAT = 3, /* malformed file contents */
  OODKIT_ERR_NUMERIC = 4,
  OODKIT_ERR_INTERNAL = 5
} oodkit_status;

typedef struct oodkit_embeddings oodkit_embeddings;
typedef struct oodkit_hierarchy oodkit_hierarchy;
typedef struct oodkit_partition oodkit_partition;
typedef struct oodkit_model oodkit_model;

/* Message for the last failing call on this thread; "" if none. */
OODKIT_API const char* oodkit_last_error(void);
OODKIT_API const char* oodkit_version(void);

/* Frees strings returned through char** out-parameters. */
OODKIT_API void oodkit_string_free(char* s);

/* ---- embeddings ---- */

OODKIT_API oodkit_status oodkit_embeddings_create(size_t rows, size_t dim, const double* features,
                                                  const uint32_t* labels, size_t num_classes,
                                                  const char* const* class_names,
                                                  oodkit_embeddings** out);
OODKIT_API oodkit_status oodkit_embeddings_load(const char* path, oodkit_embeddings** out);
OODKIT_API oodkit_status oodkit_embeddings_save(const oodkit_embeddings* set, const char* path);
OODKIT_API oodkit_status oodkit_embeddings_ingest_csv(const char* path, int has_header,
                                                      oodkit_embeddings** out);
OODKIT_API oodkit_status oodkit_embeddings_split(const oodkit_embeddings* set, double val_fraction,
                                                 uint64_t seed, oodkit_embeddings** train,
                                                 oodkit_embeddings** val);
OODKIT_API oodkit_status oodkit_embeddings_normalize(const oodkit_embeddings* set,
                                                     oodkit_embeddings** out);
OODKIT_API size_t oodkit_embeddings_rows(const oodkit_embeddings* set);
OODKIT_API size_t oodkit_embeddings_dim(const oodkit_embeddings* set);
OODKIT_API size_t oodkit_embeddings_num_classes(const oodkit_embeddings* set);
/* Copies rows*dim values (row-major) / rows labels; len is the buffer length. */
OODKIT_API oodkit_status oodkit_embeddings_features(const oodkit_embeddings* set, double* out,
                                                    size_t len);
OODKIT_API oodkit_status oodkit_embeddings_labels(const oodkit_embeddings* set, uint32_t* out,
                                                  size_t len);
OODKIT_API void oodkit_embeddings_free(oodkit_embeddings* set);

/* ---- hierarchy ---- */

OODKIT_API oodkit_status oodkit_hierarchy_load(const char* path, oodkit_hierarchy** out);
OODKIT_API size_t oodkit_hierarchy_num_superclasses(const oodkit_hierarchy* h);
OODKIT_API void oodkit_hierarchy_free(oodkit_hierarchy* h);

/* ---- scoring ---- */

typedef enum oodkit_metric {
  OODKIT_METRIC_MSP = 0,
  OODKIT_METRIC_MAXLOGIT = 1,
  OODKIT_METRIC_ENERGY = 2
} oodkit_metric;

/* Each row of logits is one logit vector. */
OODKIT_API oodkit_status oodkit_score_logits(const oodkit_embeddings* logits, oodkit_metric metric,
                                             double temperature, double* scores, size_t len);
/* Negative distance to the k-th nearest unit-normalized bank row. */
OODKIT_API oodkit_status oodkit_score_knn(const oodkit_embeddings* bank, size_t k,
                                          const oodkit_embeddings* queries, double* scores,
                                          size_t len);

/* ---- evaluation ---- */

OODKIT_API oodkit_status oodkit_fpr_at_tpr(const double* id_scores, size_t n_id,
                                           const double* ood_scores, size_t n_ood, double tpr,
                                           double* fpr, double* threshold);
OODKIT_API oodkit_status oodkit_auroc(const double* id_scores, size_t n_id,
                                      const double* ood_scores, size_t n_ood, double* out);

/* id_predictions and id_labels may both be NULL; then id_accuracy is null. */
OODKIT_API oodkit_status oodkit_eval_report(const double* id_scores, size_t n_id, size_t num_sets,
                                            const char* const* set_names,
                                            const double* const* ood_scores,
                                            const size_t* ood_counts, double tpr,
                                            const uint32_t* id_predictions,
                                            const uint32_t* id_labels, char** report_json);
OODKIT_API oodkit_status oodkit_report_format(const char* report_json, char** text);

/* ---- partition ---- */

OODKIT_API oodkit_status oodkit_partition_build(const oodkit_embeddings* train,
                                                const oodkit_hierarchy* hierarchy, size_t k,
                                                size_t max_iter, double tol,
                                                oodkit_partition** out);
OODKIT_API oodkit_status oodkit_partition_load(const char* path, oodkit_partition** out);
OODKIT_API oodkit_status oodkit_partition_save(const oodkit_partition* p, const char* path);
OODKIT_API size_t oodkit_partition_num_clusters(const oodkit_partition* p);
OODKIT_API oodkit_status oodkit_partition_class_to_cluster(const oodkit_partition* p,
                                                           uint32_t* out, size_t len);
OODKIT_API void oodkit_partition_free(oodkit_partition* p);

/* ---- MoFE ---- */

typedef enum oodkit_reg { OODKIT_REG_L2 = 0, OODKIT_REG_SMOOTH = 1 } oodkit_reg;
typedef enum oodkit_gate { OODKIT_GATE_SCALED = 0, OODKIT_GATE_UNSCALED = 1 } oodkit_gate;
typedef enum oodkit_bank_feature {
  OODKIT_BANK_POST_LN = 0,
  OODKIT_BANK_PRE_LN = 1
} oodkit_bank_feature;

typedef struct oodkit_train_options {
  size_t hidden;
  size_t epochs;
  size_t warmup_epochs;
  size_t batch_size;
  double lr;
  double weight_decay;
  uint64_t seed;
  int mixup;
  double mixup_w;
  double mixup_sigma_min;
  oodkit_reg reg;
  double reg_weight;
  oodkit_gate gate;
  int stop_gate;
} oodkit_train_options;

OODKIT_API void oodkit_train_options_init(oodkit_train_options* opts);

/* history_json may be NULL. */
OODKIT_API oodkit_status oodkit_mofe_train(const oodkit_embeddings* train,
                                           const oodkit_embeddings* val,
                                           const oodkit_partition* partition,
                                           const oodkit_train_options* opts, oodkit_model** out,
                                           char** history_json);
OODKIT_API oodkit_status oodkit_model_load(const char* path, oodkit_model** out);
OODKIT_API oodkit_status oodkit_model_save(const oodkit_model* model, const char* path);
OODKIT_API size_t oodkit_model_num_experts(const oodkit_model* model);
OODKIT_API size_t oodkit_model_dim(const oodkit_model* model);
OODKIT_API oodkit_status oodkit_model_router_accuracy(const oodkit_model* model,
                                                      const oodkit_embeddings* set, double* out);
OODKIT_API void oodkit_model_free(oodkit_model* model);

/* Scores queries against per-expert banks built from bank_src. predictions may
 * be NULL; the outside class is reported as the model's num_classes. */
OODKIT_API oodkit_status oodkit_mofe_score(const oodkit_model* model,
                                           const oodkit_embeddings* bank_src, size_t k,
                                           oodkit_bank_feature feature,
                                           const oodkit_embeddings* queries, double* scores,
                                           uint32_t* predictions, size_t len);

/* ---- mixup ---- */

OODKIT_API oodkit_status oodkit_lambda_stats(const double* sigmas, size_t n, size_t draws,
                                             uint64_t seed, double* means, double* variances);

/* ---- synthetic benchmark and ablation ---- */

/* spec_json may be NULL or "{}" for the default spec. */
OODKIT_API oodkit_status oodkit_synth_write(const char* spec_json, const char* outdir);

typedef struct oodkit_ablate_options {
  size_t clusters;
  size_t knn_k;
  size_t kmeans_max_iter;
  double kmeans_tol;
  oodkit_bank_feature bank_feature;
  oodkit_train_options train;
} oodkit_ablate_options;

OODKIT_API void oodkit_ablate_options_init(oodkit_ablate_options* opts);

/* Either output may be NULL. */
OODKIT_API oodkit_status oodkit_ablate(const char* bench_dir, const oodkit_ablate_options* opts,
                                       char** result_json, char** table_text);

#ifdef __cplusplus
}
#endif

#endif /* OODKIT_OODKIT_H_ */
