// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/oodkit.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include "oodkit/ablation.hpp"
#include "oodkit/error.hpp"

struct oodkit_embeddings {
  oodkit::EmbeddingSet set;
};
struct oodkit_hierarchy {
  oodkit::SemanticHierarchy h;
};
struct oodkit_partition {
  oodkit::PartitionModel p;
};
struct oodkit_model {
  oodkit::MoFEModel m;
};

namespace {

thread_local std::string g_last_error;

template <class Fn>
oodkit_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return OODKIT_OK;
  } catch (const oodkit::ValidationError& e) {
    g_last_error = e.what();
    return OODKIT_ERR_INVALID;
  } catch (const oodkit::IoError& e) {
    g_last_error = e.what();
    return OODKIT_ERR_IO;
  } catch (const oodkit::FormatError& e) {
    g_last_error = e.what();
    return OODKIT_ERR_FORMAT;
  } catch (const oodkit::NumericError& e) {
    g_last_error = e.what();
    return OODKIT_ERR_NUMERIC;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return OODKIT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return OODKIT_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw oodkit::ValidationError(what);
}

void require_len(std::size_t have, std::size_t need) {
  if (have < need)
    throw oodkit::ValidationError("output buffer holds " + std::to_string(have) +
                                  " values, need " + std::to_string(need));
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

oodkit::TrainConfig to_config(const oodkit_train_options& o) {
  oodkit::TrainConfig c;
  c.epochs = o.epochs;
  c.warmup_epochs = o.warmup_epochs;
  c.batch_size = o.batch_size;
  c.lr = o.lr;
  c.weight_decay = o.weight_decay;
  c.seed = o.seed;
  c.mixup = o.mixup != 0;
  c.mixup_policy.w = o.mixup_w;
  c.mixup_policy.sigma_min = o.mixup_sigma_min;
  c.mixup_policy.reg_kind =
      o.reg == OODKIT_REG_SMOOTH ? oodkit::RegKind::kLabelSmoothing : oodkit::RegKind::kL2Norm;
  c.mixup_policy.reg_weight = o.reg_weight;
  c.gate = o.gate == OODKIT_GATE_UNSCALED ? oodkit::GateMode::kUnscaled : oodkit::GateMode::kScaled;
  c.stop_gate = o.stop_gate != 0;
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw oodkit::ValidationError("lr must be > 0");
  if (!(c.weight_decay >= 0.0)) throw oodkit::ValidationError("weight decay must be >= 0");
  if (o.hidden < 1) throw oodkit::ValidationError("hidden width must be >= 1");
  return c;
}

oodkit::BankFeature to_feature(oodkit_bank_feature f) {
  return f == OODKIT_BANK_PRE_LN ? oodkit::BankFeature::kPreLn : oodkit::BankFeature::kPostLn;
}

}  // namespace

extern "C" {

const char* oodkit_last_error(void) { return g_last_error.c_str(); }

const char* oodkit_version(void) { return "0.1.0"; }

void oodkit_string_free(char* s) { std::free(s); }

oodkit_status oodkit_embeddings_create(size_t rows, size_t dim, const double* features,
                                       const uint32_t* labels, size_t num_classes,
                                       const char* const* class_names, oodkit_embeddings** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be null");
    require(rows == 0 || (features && labels), "features and labels must not be null");
    oodkit::EmbeddingSet s;
    s.features = oodkit::Matrix(rows, dim);
    for (std::size_t i = 0; i < rows * dim; ++i)
      s.features.data()[i] = static_cast<double>(static_cast<float>(features[i]));
    s.labels.assign(labels, labels + rows);
    for (std::size_t c = 0; c < num_classes; ++c)
      s.class_names.push_back(class_names ? std::string(class_names[c])
                                          : "class_" + std::to_string(c));
    oodkit::validate(s);
    *out = new oodkit_embeddings{std::move(s)};
  });
}

oodkit_status oodkit_embeddings_load(const char* path, oodkit_embeddings** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    *out = new oodkit_embeddings{oodkit::load_embeddings(path)};
  });
}

oodkit_status oodkit_embeddings_save(const oodkit_embeddings* set, const char* path) {
  return guarded([&] {
    require(set && path, "set and path must not be null");
    oodkit::save_embeddings(set->set, path);
  });
}

oodkit_status oodkit_embeddings_ingest_csv(const char* path, int has_header,
                                           oodkit_embeddings** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    *out = new oodkit_embeddings{oodkit::ingest_csv(path, has_header != 0)};
  });
}

oodkit_status oodkit_embeddings_split(const oodkit_embeddings* set, double val_fraction,
                                      uint64_t seed, oodkit_embeddings** train,
                                      oodkit_embeddings** val) {
  return guarded([&] {
    require(set && train && val, "arguments must not be null");
    auto [t, v] = oodkit::split(set->set, val_fraction, seed);
    auto* th = new oodkit_embeddings{std::move(t)};
    try {
      *val = new oodkit_embeddings{std::move(v)};
    } catch (...) {
      delete th;
      throw;
    }
    *train = th;
  });
}

oodkit_status oodkit_embeddings_normalize(const oodkit_embeddings* set, oodkit_embeddings** out) {
  return guarded([&] {
    require(set && out, "arguments must not be null");
    *out = new oodkit_embeddings{oodkit::l2_normalize(set->set)};
  });
}

size_t oodkit_embeddings_rows(const oodkit_embeddings* set) { return set ? set->set.size() : 0; }
size_t oodkit_embeddings_dim(const oodkit_embeddings* set) { return set ? set->set.dim() : 0; }
size_t oodkit_embeddings_num_classes(const oodkit_embeddings* set) {
  return set ? set->set.num_classes() : 0;
}

oodkit_status oodkit_embeddings_features(const oodkit_embeddings* set, double* out, size_t len) {
  return guarded([&] {
    require(set && out, "arguments must not be null");
    const auto& d = set->set.features.data();
    require_len(len, d.size());
    std::copy(d.begin(), d.end(), out);
  });
}

oodkit_status oodkit_embeddings_labels(const oodkit_embeddings* set, uint32_t* out, size_t len) {
  return guarded([&] {
    require(set && out, "arguments must not be null");
    require_len(len, set->set.labels.size());
    std::copy(set->set.labels.begin(), set->set.labels.end(), out);
  });
}

void oodkit_embeddings_free(oodkit_embeddings* set) { delete set; }

oodkit_status oodkit_hierarchy_load(const char* path, oodkit_hierarchy** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    *out = new oodkit_hierarchy{oodkit::load_hierarchy(path)};
  });
}

size_t oodkit_hierarchy_num_superclasses(const oodkit_hierarchy* h) {
  return h ? h->h.num_superclasses() : 0;
}

void oodkit_hierarchy_free(oodkit_hierarchy* h) { delete h; }

oodkit_status oodkit_score_logits(const oodkit_embeddings* logits, oodkit_metric metric,
                                  double temperature, double* scores, size_t len) {
  return guarded([&] {
    require(logits && scores, "arguments must not be null");
    const auto& m = logits->set.features;
    require_len(len, m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      switch (metric) {
        case OODKIT_METRIC_MSP: scores[i] = oodkit::msp(m.row(i)); break;
        case OODKIT_METRIC_MAXLOGIT: scores[i] = oodkit::max_logit(m.row(i)); break;
        case OODKIT_METRIC_ENERGY: scores[i] = oodkit::energy(m.row(i), temperature); break;
        default: throw oodkit::ValidationError("unknown metric");
      }
    }
  });
}

oodkit_status oodkit_score_knn(const oodkit_embeddings* bank, size_t k,
                               const oodkit_embeddings* queries, double* scores, size_t len) {
  return guarded([&] {
    require(bank && queries && scores, "arguments must not be null");
    require_len(len, queries->set.size());
    if (queries->set.dim() != bank->set.dim())
      throw oodkit::ValidationError("query dimension " + std::to_string(queries->set.dim()) +
                                    " does not match bank dimension " +
                                    std::to_string(bank->set.dim()));
    const auto kb = oodkit::build_knn_bank(bank->set, k);
    const auto s = oodkit::knn_scores(queries->set.features, kb);
    std::copy(s.begin(), s.end(), scores);
  });
}

oodkit_status oodkit_fpr_at_tpr(const double* id_scores, size_t n_id, const double* ood_scores,
                                size_t n_ood, double tpr, double* fpr, double* threshold) {
  return guarded([&] {
    require((id_scores || n_id == 0) && (ood_scores || n_ood == 0), "score arrays must not be null");
    const auto r = oodkit::fpr_at_tpr({id_scores, n_id}, {ood_scores, n_ood}, tpr);
    if (fpr) *fpr = r.fpr;
    if (threshold) *threshold = r.threshold;
  });
}

oodkit_status oodkit_auroc(const double* id_scores, size_t n_id, const double* ood_scores,
                           size_t n_ood, double* out) {
  return guarded([&] {
    require((id_scores || n_id == 0) && (ood_scores || n_ood == 0) && out,
            "arguments must not be null");
    *out = oodkit::auroc({id_scores, n_id}, {ood_scores, n_ood});
  });
}

oodkit_status oodkit_eval_report(const double* id_scores, size_t n_id, size_t num_sets,
                                 const char* const* set_names, const double* const* ood_scores,
                                 const size_t* ood_counts, double tpr,
                                 const uint32_t* id_predictions, const uint32_t* id_labels,
                                 char** report_json) {
  return guarded([&] {
    require(report_json != nullptr, "report_json must not be null");
    require(id_scores || n_id == 0, "id_scores must not be null");
    require(num_sets == 0 || (set_names && ood_scores && ood_counts), "OOD arrays must not be null");
    std::vector<oodkit::NamedScores> sets;
    for (std::size_t s = 0; s < num_sets; ++s)
      sets.push_back({set_names[s], std::vector<double>(ood_scores[s], ood_scores[s] + ood_counts[s])});
    std::optional<double> acc;
    if (id_predictions || id_labels) {
      require(id_predictions && id_labels, "id_predictions and id_labels go together");
      acc = oodkit::id_accuracy({id_predictions, n_id}, {id_labels, n_id});
    }
    const auto report = oodkit::evaluate({id_scores, n_id}, sets, tpr, acc);
    *report_json = dup_string(oodkit::report_to_json(report));
  });
}

oodkit_status oodkit_report_format(const char* report_json, char** text) {
  return guarded([&] {
    require(report_json && text, "arguments must not be null");
    *text = dup_string(oodkit::format_report(oodkit::report_from_json(report_json)));
  });
}

oodkit_status oodkit_partition_build(const oodkit_embeddings* train,
                                     const oodkit_hierarchy* hierarchy, size_t k, size_t max_iter,
                                     double tol, oodkit_partition** out) {
  return guarded([&] {
    require(train && hierarchy && out, "arguments must not be null");
    oodkit::validate(train->set);
    oodkit::validate(hierarchy->h, train->set.num_classes());
    const auto protos = oodkit::class_prototypes(train->set);
    const auto seeds = oodkit::hierarchy_seed_centroids(protos, hierarchy->h, k);
    *out = new oodkit_partition{oodkit::kmeans(protos, seeds, max_iter, tol)};
  });
}

oodkit_status oodkit_partition_load(const char* path, oodkit_partition** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    *out = new oodkit_partition{oodkit::load_partition(path)};
  });
}

oodkit_status oodkit_partition_save(const oodkit_partition* p, const char* path) {
  return guarded([&] {
    require(p && path, "arguments must not be null");
    oodkit::save_partition(p->p, path);
  });
}

size_t oodkit_partition_num_clusters(const oodkit_partition* p) {
  return p ? p->p.num_clusters() : 0;
}

oodkit_status oodkit_partition_class_to_cluster(const oodkit_partition* p, uint32_t* out,
                                                size_t len) {
  return guarded([&] {
    require(p && out, "arguments must not be null");
    require_len(len, p->p.class_to_cluster.size());
    std::copy(p->p.class_to_cluster.begin(), p->p.class_to_cluster.end(), out);
  });
}

void oodkit_partition_free(oodkit_partition* p) { delete p; }

void oodkit_train_options_init(oodkit_train_options* opts) {
  if (!opts) return;
  const oodkit::TrainConfig c;
  const oodkit::ArmConfig arm;
  opts->hidden = arm.hidden;
  opts->epochs = c.epochs;
  opts->warmup_epochs = c.warmup_epochs;
  opts->batch_size = c.batch_size;
  opts->lr = c.lr;
  opts->weight_decay = c.weight_decay;
  opts->seed = c.seed;
  opts->mixup = 0;
  opts->mixup_w = c.mixup_policy.w;
  opts->mixup_sigma_min = c.mixup_policy.sigma_min;
  opts->reg = OODKIT_REG_L2;
  opts->reg_weight = c.mixup_policy.reg_weight;
  opts->gate = OODKIT_GATE_SCALED;
  opts->stop_gate = 0;
}

oodkit_status oodkit_mofe_train(const oodkit_embeddings* train, const oodkit_embeddings* val,
                                const oodkit_partition* partition,
                                const oodkit_train_options* opts, oodkit_model** out,
                                char** history_json) {
  return guarded([&] {
    require(train && val && partition && opts && out, "arguments must not be null");
    const auto cfg = to_config(*opts);
    oodkit::validate(train->set);
    auto model = std::make_unique<oodkit_model>();
    model->m = oodkit::init_mofe(train->set.dim(), opts->hidden, partition->p, cfg.seed);
    const auto history = oodkit::train_mofe(model->m, train->set, val->set, cfg);
    char* h = history_json ? dup_string(oodkit::history_to_json(history)) : nullptr;
    *out = model.release();
    if (history_json) *history_json = h;
  });
}

oodkit_status oodkit_model_load(const char* path, oodkit_model** out) {
  return guarded([&] {
    require(path && out, "path and out must not be null");
    *out = new oodkit_model{oodkit::load_model(path)};
  });
}

oodkit_status oodkit_model_save(const oodkit_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "arguments must not be null");
    oodkit::save_model(model->m, path);
  });
}

size_t oodkit_model_num_experts(const oodkit_model* model) {
  return model ? model->m.num_experts() : 0;
}

size_t oodkit_model_dim(const oodkit_model* model) { return model ? model->m.dim : 0; }

oodkit_status oodkit_model_router_accuracy(const oodkit_model* model,
                                           const oodkit_embeddings* set, double* out) {
  return guarded([&] {
    require(model && set && out, "arguments must not be null");
    *out = oodkit::router_accuracy(model->m, set->set);
  });
}

void oodkit_model_free(oodkit_model* model) { delete model; }

oodkit_status oodkit_mofe_score(const oodkit_model* model, const oodkit_embeddings* bank_src,
                                size_t k, oodkit_bank_feature feature,
                                const oodkit_embeddings* queries, double* scores,
                                uint32_t* predictions, size_t len) {
  return guarded([&] {
    require(model && bank_src && queries && scores, "arguments must not be null");
    require_len(len, queries->set.size());
    if (queries->set.dim() != model->m.dim)
      throw oodkit::ValidationError("query dimension " + std::to_string(queries->set.dim()) +
                                    " does not match model dimension " +
                                    std::to_string(model->m.dim));
    const auto banks = oodkit::build_expert_banks(model->m, bank_src->set, k, to_feature(feature));
    const auto r = oodkit::mofe_ood_scores(model->m, banks, queries->set.features);
    std::copy(r.scores.begin(), r.scores.end(), scores);
    if (predictions) std::copy(r.predictions.begin(), r.predictions.end(), predictions);
  });
}

oodkit_status oodkit_lambda_stats(const double* sigmas, size_t n, size_t draws, uint64_t seed,
                                  double* means, double* variances) {
  return guarded([&] {
    require((sigmas || n == 0) && means && variances, "arguments must not be null");
    const auto stats = oodkit::lambda_statistics(std::vector<double>(sigmas, sigmas + n), draws, seed);
    for (std::size_t i = 0; i < n; ++i) {
      means[i] = stats[i].mean;
      variances[i] = stats[i].variance;
    }
  });
}

oodkit_status oodkit_synth_write(const char* spec_json, const char* outdir) {
  return guarded([&] {
    require(outdir != nullptr, "outdir must not be null");
    const auto spec = oodkit::spec_from_json(spec_json ? spec_json : "{}");
    oodkit::write_benchmark(oodkit::generate_benchmark(spec), outdir);
  });
}

void oodkit_ablate_options_init(oodkit_ablate_options* opts) {
  if (!opts) return;
  const oodkit::ArmConfig arm;
  opts->clusters = arm.clusters;
  opts->knn_k = arm.knn_k;
  opts->kmeans_max_iter = arm.kmeans_max_iter;
  opts->kmeans_tol = arm.kmeans_tol;
  opts->bank_feature = OODKIT_BANK_POST_LN;
  oodkit_train_options_init(&opts->train);
}

oodkit_status oodkit_ablate(const char* bench_dir, const oodkit_ablate_options* opts,
                            char** result_json, char** table_text) {
  return guarded([&] {
    require(bench_dir && opts, "arguments must not be null");
    oodkit::ArmConfig cfg;
    cfg.clusters = opts->clusters;
    cfg.hidden = opts->train.hidden;
    cfg.knn_k = opts->knn_k;
    cfg.kmeans_max_iter = opts->kmeans_max_iter;
    cfg.kmeans_tol = opts->kmeans_tol;
    cfg.bank_feature = to_feature(opts->bank_feature);
    cfg.train = to_config(opts->train);
    const auto bench = oodkit::read_benchmark(bench_dir);
    const auto result = oodkit::run_ablation(bench, cfg);
    char* j = result_json ? dup_string(oodkit::ablation_to_json(result)) : nullptr;
    char* t = nullptr;
    try {
      t = table_text ? dup_string(oodkit::format_ablation(result)) : nullptr;
    } catch (...) {
      std::free(j);
      throw;
    }
    if (result_json) *result_json = j;
    if (table_text) *table_text = t;
  });
}

}  // extern "C"
