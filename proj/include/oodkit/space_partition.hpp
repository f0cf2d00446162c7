// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oodkit/embedding_store.hpp"
#include "oodkit/matrix.hpp"

namespace oodkit {

/// Mean feature per class.
struct PrototypeTable {
  Matrix prototypes;                 // C x D
  std::vector<std::size_t> counts;   // samples per class
};

/// K centroids over class prototypes and the class -> cluster table that
/// supervises the router.
struct PartitionModel {
  Matrix centroids;                          // K x D
  std::vector<std::uint32_t> class_to_cluster;
  std::vector<double> inertia_history;

  std::size_t num_clusters() const noexcept { return centroids.rows(); }
  std::size_t num_classes() const noexcept { return class_to_cluster.size(); }

  /// Classes assigned to each cluster, ascending.
  std::vector<std::vector<std::uint32_t>> members() const;
};

PrototypeTable class_prototypes(const EmbeddingSet& set);

/// Superclass means, then merged (closest pair first) or split (largest group,
/// second seed on its farthest member) until exactly k seeds remain.
Matrix hierarchy_seed_centroids(const PrototypeTable& protos, const SemanticHierarchy& hierarchy,
                                std::size_t k);

/// Lloyd iterations on the prototypes.
PartitionModel kmeans(const PrototypeTable& protos, const Matrix& seeds, std::size_t max_iter,
                      double tol);

/// Index of the nearest centroid; ties go to the lowest index.
std::uint32_t nearest_centroid(const Matrix& centroids, std::span<const double> point);

std::uint32_t assign_expert(const PartitionModel& model, std::uint32_t class_id);

std::string partition_to_json(const PartitionModel& model);
PartitionModel partition_from_json(const std::string& text);
void save_partition(const PartitionModel& model, const std::filesystem::path& path);
PartitionModel load_partition(const std::filesystem::path& path);

}  // namespace oodkit
