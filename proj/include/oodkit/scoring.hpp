// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oodkit/embedding_store.hpp"
#include "oodkit/matrix.hpp"

namespace oodkit {

// All scores follow one convention: higher means more in-distribution.

double msp(std::span<const double> logits);
double max_logit(std::span<const double> logits);
/// T * log sum_c exp(logit_c / T).
double energy(std::span<const double> logits, double temperature = 1.0);

/// Overflow-safe softmax and log-sum-exp shared with the training code.
std::vector<double> softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> logits);

enum class Decision { kId, kOod };

/// ID iff score >= threshold.
Decision detect(double score, double threshold) noexcept;

/// Reference set for the KNN score. Rows are unit-norm.
class KnnBank {
 public:
  KnnBank(Matrix unit_rows, std::size_t k);

  const Matrix& vectors() const noexcept { return vectors_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t size() const noexcept { return vectors_.rows(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }

 private:
  Matrix vectors_;
  std::size_t k_;
};

KnnBank build_knn_bank(const EmbeddingSet& set, std::size_t k);

/// -(Euclidean distance to the k-th nearest bank row). `query` must be unit-norm.
double knn_score(std::span<const double> query, const KnnBank& bank);

/// Normalizes each query row and scores it; parallel over queries.
std::vector<double> knn_scores(const Matrix& queries, const KnnBank& bank);

/// Unit-norm copy of `v`; throws ValidationError on a zero vector.
std::vector<double> unit_vector(std::span<const double> v);

}  // namespace oodkit
