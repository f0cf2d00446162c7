// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

// Brute-force reference implementations shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace oodkit::oracle {

struct Fpr {
  double fpr;
  double threshold;
};

// Threshold = the ceil(tpr * N)-th largest ID score, found by a full sort;
// OOD scores at or above it count as false positives.
inline Fpr fpr_at_tpr(std::vector<double> id, const std::vector<double>& ood, double tpr) {
  std::sort(id.begin(), id.end(), std::greater<>());
  std::size_t rank = 1;
  // Smallest rank whose true-positive rate reaches the target.
  while (static_cast<double>(rank) / static_cast<double>(id.size()) < tpr - 1e-12) ++rank;
  const double thr = id[rank - 1];
  std::size_t fp = 0;
  for (double s : ood)
    if (s >= thr) ++fp;
  return {static_cast<double>(fp) / static_cast<double>(ood.size()), thr};
}

// Pairwise Mann-Whitney: one point per ID win, half a point per tie.
inline double auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double credit = 0.0;
  for (double a : id)
    for (double b : ood) credit += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return credit / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Random score lists; a coarse grid forces plenty of ties when coarse is set.
inline std::vector<double> random_scores(std::mt19937_64& gen, std::size_t n, bool coarse) {
  std::vector<double> out(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, 9);
  for (double& v : out) v = coarse ? static_cast<double>(grid(gen)) : normal(gen);
  return out;
}

}  // namespace oodkit::oracle
