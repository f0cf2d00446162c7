// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <string>
#include <vector>

#include "oodkit/eval_metrics.hpp"
#include "oodkit/mofe.hpp"
#include "oodkit/synth_bench.hpp"

namespace oodkit {

struct ArmConfig {
  std::size_t clusters = 5;
  std::size_t hidden = 128;
  std::size_t knn_k = 10;
  std::size_t kmeans_max_iter = 100;
  double kmeans_tol = 1e-6;
  BankFeature bank_feature = BankFeature::kPostLn;
  TrainConfig train;
};

/// Raw-embedding KNN: ID scores from id_val, one entry per OOD set.
EvalReport evaluate_baseline(const Benchmark& bench, std::size_t knn_k, double tpr = 0.95);

struct ArmResult {
  EvalReport report;
  TrainHistory history;
  double router_accuracy = 0.0;
};

/// Partition (hierarchy-seeded K-Means), train MoFE, score with subspace KNN.
ArmResult evaluate_mofe_arm(const Benchmark& bench, const ArmConfig& cfg, bool mixup,
                            double tpr = 0.95);

struct AblationRow {
  std::string setting;
  EvalReport report;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // Baseline, + MoFE, + D-beta, + MoFE+D-beta
};

/// The four-arm component ablation. The D-beta-only arm uses a single expert.
AblationResult run_ablation(const Benchmark& bench, const ArmConfig& cfg);

std::string ablation_to_json(const AblationResult& result);
std::string format_ablation(const AblationResult& result);

}  // namespace oodkit
