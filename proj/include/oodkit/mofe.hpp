// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oodkit/dynamic_mixup.hpp"
#include "oodkit/embedding_store.hpp"
#include "oodkit/rng.hpp"
#include "oodkit/scoring.hpp"
#include "oodkit/space_partition.hpp"

namespace oodkit {

/// One feature expert: LN -> affine -> ReLU -> affine, plus a (Q+1)-way head
/// whose last output is the "outside this cluster" class.
///
/// Matrices are row-major: w1 is D x H, w2 is H x D, head_w is D x (Q+1).
struct ExpertBlock {
  std::vector<double> ln1_gamma, ln1_beta;
  std::vector<double> w1, b1;
  std::vector<double> w2, b2;
  std::vector<double> head_w, head_b;
  std::vector<std::uint32_t> class_list;

  std::size_t num_outputs() const noexcept { return class_list.size() + 1; }
  std::uint32_t outside_label() const noexcept {
    return static_cast<std::uint32_t>(class_list.size());
  }
};

/// Every trainable tensor of the layer. Also used as the gradient layout.
struct ParamSet {
  std::vector<double> router_w;  // D x E
  std::vector<ExpertBlock> experts;
  std::vector<double> final_ln_gamma, final_ln_beta;
};

enum class TensorKind { kRouter, kBlock, kHead, kFinalLn };

/// Visits tensors in a fixed order: router, then per expert (ln1_gamma,
/// ln1_beta, w1, b1, w2, b2, head_w, head_b), then the final layer norm.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(TensorKind::kRouter, std::size_t{0}, "router_w", p.router_w);
  for (std::size_t e = 0; e < p.experts.size(); ++e) {
    auto& x = p.experts[e];
    fn(TensorKind::kBlock, e, "ln1_gamma", x.ln1_gamma);
    fn(TensorKind::kBlock, e, "ln1_beta", x.ln1_beta);
    fn(TensorKind::kBlock, e, "w1", x.w1);
    fn(TensorKind::kBlock, e, "b1", x.b1);
    fn(TensorKind::kBlock, e, "w2", x.w2);
    fn(TensorKind::kBlock, e, "b2", x.b2);
    fn(TensorKind::kHead, e, "head_w", x.head_w);
    fn(TensorKind::kHead, e, "head_b", x.head_b);
  }
  fn(TensorKind::kFinalLn, std::size_t{0}, "final_ln_gamma", p.final_ln_gamma);
  fn(TensorKind::kFinalLn, std::size_t{0}, "final_ln_beta", p.final_ln_beta);
}

enum class GateMode { kScaled, kUnscaled };
enum class BankFeature { kPostLn, kPreLn };

struct TrainConfig {
  double lr = 1e-3;
  double min_lr = 1e-6;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 1;  // heads + router only
  std::uint64_t seed = 0;
  GateMode gate = GateMode::kScaled;
  bool stop_gate = false;  // true: L_expert does not reach the router via the gate
  bool mixup = false;
  MixupPolicy mixup_policy;
  // Cosine schedule length; 0 means constant lr. train_mofe fills it in.
  std::size_t total_steps = 0;
};

struct MoFEModel {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  std::size_t num_classes = 0;
  ParamSet params;
  PartitionModel partition;
  TrainConfig hyper;

  std::size_t num_experts() const noexcept { return params.experts.size(); }
};

inline constexpr double kLayerNormEps = 1e-6;

MoFEModel init_mofe(std::size_t dim, std::size_t hidden, const PartitionModel& partition,
                    std::uint64_t seed);

std::vector<double> router_forward(const MoFEModel& model, std::span<const double> z);

struct Route {
  static Route predicted() { return {}; }
  static Route forced(std::uint32_t expert) { return {expert}; }
  std::optional<std::uint32_t> expert;
};

struct ForwardResult {
  std::vector<double> f0;     // final_ln(z_out)
  std::vector<double> z_out;  // gate * u + z
  std::uint32_t expert = 0;
  double gate = 1.0;
  std::vector<double> logits;
  std::vector<double> router_probs;
};

ForwardResult mofe_forward(const MoFEModel& model, std::span<const double> z, Route route);

/// -log(probs[cluster_label]).
double route_loss(std::span<const double> probs, std::uint32_t cluster_label);

/// Position of global_class in the class list, or Q (outside).
std::uint32_t expert_label(const ExpertBlock& expert, std::uint32_t global_class);

double expert_loss(std::span<const double> logits, std::uint32_t local_label);

/// Global class predicted by the routed head; num_classes when the head picks
/// its outside class.
std::uint32_t predict_class(const MoFEModel& model, const ForwardResult& fwd);

struct BatchItem {
  std::vector<double> z;
  std::uint32_t local_label = 0;
  std::uint32_t global_class = 0;
  std::uint32_t cluster_label = 0;
  std::uint32_t expert = 0;  // expert the sample is dispatched to
};

struct MixedItem {
  std::vector<double> x;
  std::uint32_t label_i = 0;
  std::uint32_t label_j = 0;
  double lambda_hat = 1.0;
  std::uint32_t expert = 0;
};

struct Batch {
  std::vector<BatchItem> items;
  std::vector<MixedItem> mixed;
};

/// Row indices of the training set grouped for one expert.
struct ExpertSampler {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

ExpertSampler make_sampler(const EmbeddingSet& train, const MoFEModel& model, std::uint32_t expert);

/// batch_size / 2 positives and batch_size / 2 negatives, uniform with replacement.
Batch balanced_batch(const EmbeddingSet& train, const MoFEModel& model, std::uint32_t expert,
                     const ExpertSampler& sampler, std::size_t batch_size, Rng& rng);

/// Adds one mixed sample per batch item; partners come from other classes in
/// the batch and the weight from the anchor class's sigma.
void add_mixup(Batch& batch, const MoFEModel& model, const MixupPolicy& policy, Rng& rng);

struct LossConfig {
  GateMode gate = GateMode::kScaled;
  bool stop_gate = false;
  MixupPolicy mixup_policy;  // used when the batch carries mixed items
};

struct LossBreakdown {
  double total = 0.0;
  double route = 0.0;
  double expert = 0.0;
  double mixup = 0.0;
};

struct GradientBundle {
  ParamSet grads;                  // shape-matched; untouched experts hold empty tensors
  std::vector<char> expert_touched;
};

GradientBundle zero_gradients(const MoFEModel& model);

/// Mean L_route + mean L_expert over items, plus mean L_mixup over mixed items.
LossBreakdown compute_loss(const MoFEModel& model, const Batch& batch, const LossConfig& cfg);

/// Same value as compute_loss, with analytic reverse-mode gradients.
LossBreakdown grad(const MoFEModel& model, const Batch& batch, const LossConfig& cfg,
                   GradientBundle& out);

struct AdamWState {
  std::vector<std::vector<double>> m, v;
  std::vector<std::size_t> steps;
};

AdamWState init_adamw(const MoFEModel& model);

double cosine_lr(const TrainConfig& hyper, std::size_t step_count);

/// Decoupled-decay AdamW. Decay applies to weight matrices only. Tensors of
/// untouched experts and of frozen kinds are skipped entirely.
void adamw_step(MoFEModel& model, const GradientBundle& grads, const TrainConfig& hyper,
                AdamWState& state, std::size_t step_count, bool freeze_blocks = false);

struct EpochRecord {
  std::size_t epoch = 0;
  double route_loss = 0.0;
  double expert_loss = 0.0;
  double mixup_loss = 0.0;
  double router_accuracy = 0.0;  // on val, predicted routing
  double val_accuracy = 0.0;     // global class accuracy on val
  std::vector<double> difficulty;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Per-class validation accuracy with predicted routing; outside predictions count as wrong.
std::vector<double> update_difficulty(const MoFEModel& model, const EmbeddingSet& val);

double router_accuracy(const MoFEModel& model, const EmbeddingSet& set);
double classification_accuracy(const MoFEModel& model, const EmbeddingSet& set);

TrainHistory train_mofe(MoFEModel& model, const EmbeddingSet& train, const EmbeddingSet& val,
                        TrainConfig config);

/// KNN banks over train features, grouped by each sample's assigned expert.
struct ExpertBanks {
  std::vector<std::optional<KnnBank>> banks;
  BankFeature feature = BankFeature::kPostLn;
};

ExpertBanks build_expert_banks(const MoFEModel& model, const EmbeddingSet& train, std::size_t k,
                               BankFeature feature = BankFeature::kPostLn);

/// Feature used for KNN (post- or pre-final-LN) under the given routing.
std::vector<double> knn_feature(const MoFEModel& model, std::span<const double> z, Route route,
                                BankFeature feature, ForwardResult* fwd = nullptr);

double mofe_ood_score(const MoFEModel& model, const ExpertBanks& banks,
                      std::span<const double> query);

struct MofeScores {
  std::vector<double> scores;
  std::vector<std::uint32_t> predictions;
  std::vector<std::uint32_t> experts;
};

MofeScores mofe_ood_scores(const MoFEModel& model, const ExpertBanks& banks,
                           const Matrix& queries);

std::vector<std::uint8_t> encode_model(const MoFEModel& model);
MoFEModel decode_model(const std::vector<std::uint8_t>& bytes);
void save_model(const MoFEModel& model, const std::filesystem::path& path);
MoFEModel load_model(const std::filesystem::path& path);

std::string history_to_json(const TrainHistory& history);

}  // namespace oodkit
