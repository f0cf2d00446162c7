// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "oodkit/error.hpp"
#include "oodkit/threads.hpp"

namespace oodkit {

namespace {

void require_logits(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("logit vector is empty");
  for (double v : logits)
    if (!std::isfinite(v)) throw ValidationError("logit vector has a non-finite entry");
}

}  // namespace

double log_sum_exp(std::span<const double> logits) {
  require_logits(logits);
  const double m = *std::max_element(logits.begin(), logits.end());
  double acc = 0.0;
  for (double v : logits) acc += std::exp(v - m);
  return m + std::log(acc);
}

std::vector<double> softmax(std::span<const double> logits) {
  require_logits(logits);
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    acc += p[i];
  }
  for (double& v : p) v /= acc;
  return p;
}

double msp(std::span<const double> logits) {
  const auto p = softmax(logits);
  return *std::max_element(p.begin(), p.end());
}

double max_logit(std::span<const double> logits) {
  require_logits(logits);
  return *std::max_element(logits.begin(), logits.end());
}

double energy(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ValidationError("energy temperature must be > 0, got " + std::to_string(temperature));
  require_logits(logits);
  if (temperature == 1.0) return log_sum_exp(logits);
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& v : scaled) v /= temperature;
  return temperature * log_sum_exp(scaled);
}

Decision detect(double score, double threshold) noexcept {
  return score >= threshold ? Decision::kId : Decision::kOod;
}

KnnBank::KnnBank(Matrix unit_rows, std::size_t k) : vectors_(std::move(unit_rows)), k_(k) {
  if (k_ < 1) throw ValidationError("knn k must be >= 1");
  if (k_ > vectors_.rows())
    throw ValidationError("knn k = " + std::to_string(k_) + " exceeds bank size " +
                          std::to_string(vectors_.rows()));
  for (std::size_t i = 0; i < vectors_.rows(); ++i) {
    double sq = 0.0;
    for (double v : vectors_.row(i)) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
      throw ValidationError("bank row " + std::to_string(i) + " is not unit-norm");
  }
}

KnnBank build_knn_bank(const EmbeddingSet& set, std::size_t k) {
  if (k < 1) throw ValidationError("knn k must be >= 1");
  if (k > set.size())
    throw ValidationError("knn k = " + std::to_string(k) + " exceeds bank size " +
                          std::to_string(set.size()));
  return KnnBank(l2_normalize(set).features, k);
}

double knn_score(std::span<const double> query, const KnnBank& bank) {
  if (query.size() != bank.dim())
    throw ValidationError("query dimension " + std::to_string(query.size()) +
                          " does not match bank dimension " + std::to_string(bank.dim()));
  const Matrix& rows = bank.vectors();
  const std::size_t m = rows.rows(), d = rows.cols();
  const double* base = rows.data().data();
  std::vector<double> dist(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = base + i * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = query[j] - r[j];
      acc += diff * diff;
    }
    dist[i] = acc;
  }
  auto kth = dist.begin() + static_cast<std::ptrdiff_t>(bank.k() - 1);
  std::nth_element(dist.begin(), kth, dist.end());
  return -std::sqrt(*kth);
}

std::vector<double> unit_vector(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) throw ValidationError("cannot normalize a zero vector");
  const double norm = std::sqrt(sq);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

std::vector<double> knn_scores(const Matrix& queries, const KnnBank& bank) {
  std::vector<double> scores(queries.rows());
  parallel_for(queries.rows(), [&](std::size_t i) {
    try {
      scores[i] = knn_score(unit_vector(queries.row(i)), bank);
    } catch (const ValidationError& e) {
      throw ValidationError("query row " + std::to_string(i) + ": " + e.what());
    }
  });
  return scores;
}

}  // namespace oodkit
