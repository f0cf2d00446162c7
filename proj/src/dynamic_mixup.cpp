// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/dynamic_mixup.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "oodkit/error.hpp"
#include "oodkit/scoring.hpp"

namespace oodkit {

void MixupPolicy::validate() const {
  if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("mixup w must lie in [0, 1]");
  if (!(sigma_min > 0.0)) throw ValidationError("mixup sigma_min must be > 0");
  if (!(reg_weight >= 0.0)) throw ValidationError("regularizer weight must be >= 0");
  if (reg_kind == RegKind::kLabelSmoothing && reg_weight > 1.0)
    throw ValidationError("label smoothing epsilon must be <= 1");
  for (double v : s)
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("class accuracy s must lie in [0, 1]");
}

double sigma_for_class(double s_c, const MixupPolicy& policy) {
  return std::max(1.0 - policy.w * s_c, policy.sigma_min);
}

double sample_beta(double a, double b, Rng& rng) {
  if (!(a > 0.0) || !(b > 0.0))
    throw ValidationError("Beta shape parameters must be > 0");
  for (;;) {
    const double log_x = std::log(rng.uniform_open_zero()) / a;
    const double log_y = std::log(rng.uniform_open_zero()) / b;
    const double m = std::max(log_x, log_y);
    const double log_sum = m + std::log(std::exp(log_x - m) + std::exp(log_y - m));
    if (log_sum <= 0.0) return std::exp(log_x - log_sum);
  }
}

double sample_lambda_hat(double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw ValidationError("sigma must be > 0, got " + std::to_string(sigma));
  const double lambda = sample_beta(sigma, sigma, rng);
  return lambda >= 0.5 ? lambda : 1.0 - lambda;
}

std::vector<double> mix_pair(std::span<const double> x_i, std::span<const double> x_j,
                             double lambda_hat) {
  if (x_i.size() != x_j.size())
    throw ValidationError("mixup pair dimension mismatch: " + std::to_string(x_i.size()) +
                          " vs " + std::to_string(x_j.size()));
  std::vector<double> out(x_i.size());
  for (std::size_t d = 0; d < out.size(); ++d)
    out[d] = lambda_hat * x_i[d] + (1.0 - lambda_hat) * x_j[d];
  return out;
}

double cross_entropy(std::span<const double> logits, std::uint32_t label) {
  if (label >= logits.size())
    throw ValidationError("label " + std::to_string(label) + " out of range for " +
                          std::to_string(logits.size()) + " outputs");
  return log_sum_exp(logits) - logits[label];
}

std::vector<double> mixup_target(std::size_t num_outputs, std::uint32_t label_i,
                                 std::uint32_t label_j, double lambda_hat,
                                 const MixupPolicy& policy) {
  std::vector<double> t(num_outputs, 0.0);
  t[label_i] += lambda_hat;
  t[label_j] += 1.0 - lambda_hat;
  if (policy.reg_kind == RegKind::kLabelSmoothing) {
    const double eps = policy.reg_weight;
    for (double& v : t) v = (1.0 - eps) * v + eps / static_cast<double>(num_outputs);
  }
  return t;
}

double mixup_loss(std::span<const double> logits, std::uint32_t label_i, std::uint32_t label_j,
                  double lambda_hat, const MixupPolicy& policy, std::span<const double> f0) {
  if (label_i >= logits.size() || label_j >= logits.size())
    throw ValidationError("mixup label out of range for " + std::to_string(logits.size()) +
                          " outputs");
  if (policy.reg_kind == RegKind::kLabelSmoothing) {
    const auto t = mixup_target(logits.size(), label_i, label_j, lambda_hat, policy);
    const double lse = log_sum_exp(logits);
    double loss = 0.0;
    for (std::size_t q = 0; q < t.size(); ++q) loss += t[q] * (lse - logits[q]);
    return loss;
  }
  double sq = 0.0;
  for (double v : f0) sq += v * v;
  return lambda_hat * cross_entropy(logits, label_i) +
         (1.0 - lambda_hat) * cross_entropy(logits, label_j) + policy.reg_weight * sq;
}

std::vector<LambdaStats> lambda_statistics(const std::vector<double>& sigmas, std::size_t draws,
                                           std::uint64_t seed) {
  if (draws < 2) throw ValidationError("need at least 2 draws");
  std::vector<LambdaStats> out;
  Rng rng(seed);
  for (double sigma : sigmas) {
    // Welford's update keeps the variance accurate at 1e6+ draws.
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
      const double x = sample_lambda_hat(sigma, rng);
      const double delta = x - mean;
      mean += delta / static_cast<double>(i + 1);
      m2 += delta * (x - mean);
    }
    out.push_back({sigma, mean, m2 / static_cast<double>(draws - 1)});
  }
  return out;
}

}  // namespace oodkit
