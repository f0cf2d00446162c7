// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oodkit {

struct FprResult {
  double fpr;
  double threshold;
};

/// threshold = the ceil(tpr_target * N_id)-th largest ID score; fpr counts OOD
/// scores >= threshold.
FprResult fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                     double tpr_target = 0.95);

/// Mann-Whitney statistic with 0.5 credit for ties.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

double id_accuracy(std::span<const std::uint32_t> predictions,
                   std::span<const std::uint32_t> labels);

/// s_c = correct_c / count_c, and 0 for classes without samples.
std::vector<double> per_class_accuracy(std::span<const std::uint32_t> predictions,
                                       std::span<const std::uint32_t> labels,
                                       std::size_t num_classes);

struct OodSetResult {
  std::string name;
  double fpr95 = 0.0;
  double auroc = 0.0;
  double threshold = 0.0;
};

struct EvalReport {
  std::vector<OodSetResult> per_ood_set;
  std::optional<double> id_accuracy;
  double tpr_target = 0.95;
  double mean_fpr95 = 0.0;
  double mean_auroc = 0.0;
};

struct NamedScores {
  std::string name;
  std::vector<double> scores;
};

EvalReport evaluate(std::span<const double> id_scores, const std::vector<NamedScores>& ood_sets,
                    double tpr_target, std::optional<double> id_acc = std::nullopt);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Aligned text table for terminals.
std::string format_report(const EvalReport& report);

}  // namespace oodkit
