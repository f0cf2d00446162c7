// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oodkit/rng.hpp"

namespace oodkit {

enum class RegKind { kL2Norm, kLabelSmoothing };

/// Per-class Beta(sigma, sigma) mixup with sigma = 1 - w * s_c.
struct MixupPolicy {
  double w = 0.9;
  double sigma_min = 0.05;
  RegKind reg_kind = RegKind::kL2Norm;
  double reg_weight = 1e-4;  // L2 coefficient, or epsilon for label smoothing
  std::vector<double> s;     // per-class validation accuracy

  void validate() const;
};

struct MixedSample {
  std::vector<double> x_mix;
  std::uint32_t label_i = 0;
  std::uint32_t label_j = 0;
  double lambda_hat = 1.0;
};

/// max(1 - w * s_c, sigma_min).
double sigma_for_class(double s_c, const MixupPolicy& policy);

/// Draws lambda ~ Beta(a, b) exactly for any a, b > 0 (Johnk's rejection
/// construction, evaluated in log space so small shapes do not underflow).
double sample_beta(double a, double b, Rng& rng);

/// Folded symmetric Beta draw: max(lambda, 1 - lambda), in [0.5, 1].
double sample_lambda_hat(double sigma, Rng& rng);

/// lambda_hat * x_i + (1 - lambda_hat) * x_j.
std::vector<double> mix_pair(std::span<const double> x_i, std::span<const double> x_j,
                             double lambda_hat);

/// Cross-entropy with an integer target, log-sum-exp form.
double cross_entropy(std::span<const double> logits, std::uint32_t label);

/// Mixed-label CE in the expert's local label space plus the regularizer.
/// L2 mode adds reg_weight * ||F0||^2; smoothing mode spreads reg_weight of the
/// target mass uniformly and adds no norm term.
double mixup_loss(std::span<const double> logits, std::uint32_t label_i, std::uint32_t label_j,
                  double lambda_hat, const MixupPolicy& policy, std::span<const double> f0);

/// Target distribution used by mixup_loss (for the gradient).
std::vector<double> mixup_target(std::size_t num_outputs, std::uint32_t label_i,
                                 std::uint32_t label_j, double lambda_hat,
                                 const MixupPolicy& policy);

struct LambdaStats {
  double sigma;
  double mean;
  double variance;
};

/// Monte-Carlo mean and variance of lambda_hat per sigma.
std::vector<LambdaStats> lambda_statistics(const std::vector<double>& sigmas, std::size_t draws,
                                           std::uint64_t seed);

}  // namespace oodkit
