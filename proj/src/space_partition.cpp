// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/space_partition.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "oodkit/error.hpp"

namespace oodkit {

namespace {

std::vector<double> mean_of(const Matrix& rows, const std::vector<std::uint32_t>& members) {
  std::vector<double> m(rows.cols(), 0.0);
  for (auto i : members) {
    const auto r = rows.row(i);
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += r[j];
  }
  for (double& v : m) v /= static_cast<double>(members.size());
  return m;
}

}  // namespace

std::vector<std::vector<std::uint32_t>> PartitionModel::members() const {
  std::vector<std::vector<std::uint32_t>> out(num_clusters());
  for (std::uint32_t c = 0; c < class_to_cluster.size(); ++c)
    out[class_to_cluster[c]].push_back(c);
  return out;
}

PrototypeTable class_prototypes(const EmbeddingSet& set) {
  validate(set);
  const std::size_t c = set.num_classes(), d = set.dim();
  PrototypeTable table{Matrix(c, d), std::vector<std::size_t>(c, 0)};
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto label = set.labels[i];
    ++table.counts[label];
    auto dst = table.prototypes.row(label);
    const auto src = set.features.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (table.counts[k] == 0)
      throw ValidationError("class " + std::to_string(k) + " ('" + set.class_names[k] +
                            "') has no samples");
    for (double& v : table.prototypes.row(k)) v /= static_cast<double>(table.counts[k]);
  }
  return table;
}

Matrix hierarchy_seed_centroids(const PrototypeTable& protos, const SemanticHierarchy& hierarchy,
                                std::size_t k) {
  const std::size_t c = protos.prototypes.rows();
  validate(hierarchy, c);
  if (k < 1 || k > c)
    throw ValidationError("cluster count k = " + std::to_string(k) + " must lie in [1, " +
                          std::to_string(c) + "]");

  // One group per non-empty superclass, in superclass order.
  std::vector<std::vector<std::uint32_t>> groups(hierarchy.num_superclasses());
  for (std::uint32_t cls = 0; cls < c; ++cls) groups[hierarchy.superclass_of[cls]].push_back(cls);
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  std::vector<std::vector<double>> seeds;
  for (const auto& g : groups) seeds.push_back(mean_of(protos.prototypes, g));

  while (seeds.size() > k) {
    std::size_t bi = 0, bj = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j) {
        const double dist = squared_distance(seeds[i], seeds[j]);
        if (dist < best) {
          best = dist;
          bi = i;
          bj = j;
        }
      }
    groups[bi].insert(groups[bi].end(), groups[bj].begin(), groups[bj].end());
    std::sort(groups[bi].begin(), groups[bi].end());
    seeds[bi] = mean_of(protos.prototypes, groups[bi]);
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(bj));
    seeds.erase(seeds.begin() + static_cast<std::ptrdiff_t>(bj));
  }

  while (seeds.size() < k) {
    std::size_t largest = 0;
    for (std::size_t g = 1; g < groups.size(); ++g)
      if (groups[g].size() > groups[largest].size()) largest = g;
    // k <= C guarantees some group still has two or more classes here.
    const auto& members = groups[largest];
    std::uint32_t far = members.front();
    double far_dist = -1.0;
    for (auto cls : members) {
      const double dist = squared_distance(protos.prototypes.row(cls), seeds[largest]);
      if (dist > far_dist) {
        far_dist = dist;
        far = cls;
      }
    }
    const auto far_row = protos.prototypes.row(far);
    std::vector<double> new_seed(far_row.begin(), far_row.end());

    // Bookkeeping for later splits: members go to the nearer of the two seeds,
    // ties staying with the original group. Seeds are not recomputed.
    std::vector<std::uint32_t> keep, moved;
    for (auto cls : members) {
      const auto p = protos.prototypes.row(cls);
      if (cls != far && squared_distance(p, seeds[largest]) <= squared_distance(p, new_seed))
        keep.push_back(cls);
      else
        moved.push_back(cls);
    }
    groups[largest] = std::move(keep);
    groups.push_back(std::move(moved));
    seeds.push_back(std::move(new_seed));
  }

  Matrix out(k, protos.prototypes.cols());
  for (std::size_t i = 0; i < k; ++i) std::copy(seeds[i].begin(), seeds[i].end(), out.row(i).begin());
  return out;
}

std::uint32_t nearest_centroid(const Matrix& centroids, std::span<const double> point) {
  std::uint32_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::uint32_t k = 0; k < centroids.rows(); ++k) {
    const double dist = squared_distance(point, centroids.row(k));
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

PartitionModel kmeans(const PrototypeTable& protos, const Matrix& seeds, std::size_t max_iter,
                      double tol) {
  const Matrix& points = protos.prototypes;
  const std::size_t c = points.rows(), k = seeds.rows(), d = points.cols();
  if (max_iter < 1) throw ValidationError("max_iter must be >= 1");
  if (!(tol >= 0.0)) throw ValidationError("tol must be >= 0");
  if (k < 1 || k > c)
    throw ValidationError("cluster count K = " + std::to_string(k) + " must lie in [1, " +
                          std::to_string(c) + "]");
  if (seeds.cols() != d) throw ValidationError("seed dimension does not match prototypes");

  PartitionModel model;
  model.centroids = seeds;
  std::vector<std::uint32_t> assign(c), previous;

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    for (std::uint32_t p = 0; p < c; ++p) assign[p] = nearest_centroid(model.centroids, points.row(p));

    // Empty-cluster repair: the prototype farthest from its centroid (among
    // clusters that can spare one) moves to the empty cluster.
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : assign) ++sizes[a];
    for (std::uint32_t e = 0; e < k; ++e) {
      if (sizes[e] != 0) continue;
      std::uint32_t far = 0;
      double far_dist = -1.0;
      for (std::uint32_t p = 0; p < c; ++p) {
        if (sizes[assign[p]] < 2) continue;
        const double dist = squared_distance(points.row(p), model.centroids.row(assign[p]));
        if (dist > far_dist) {
          far_dist = dist;
          far = p;
        }
      }
      --sizes[assign[far]];
      assign[far] = e;
      sizes[e] = 1;
      const auto src = points.row(far);
      std::copy(src.begin(), src.end(), model.centroids.row(e).begin());
    }

    double inertia = 0.0;
    for (std::uint32_t p = 0; p < c; ++p)
      inertia += squared_distance(points.row(p), model.centroids.row(assign[p]));
    model.inertia_history.push_back(inertia);

    Matrix updated(k, d);
    for (std::uint32_t p = 0; p < c; ++p) {
      auto dst = updated.row(assign[p]);
      const auto src = points.row(p);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (std::uint32_t e = 0; e < k; ++e)
      for (double& v : updated.row(e)) v /= static_cast<double>(sizes[e]);

    const bool centroids_fixed = updated == model.centroids;
    model.centroids = std::move(updated);
    const std::size_t h = model.inertia_history.size();
    const bool small_gain =
        h >= 2 && model.inertia_history[h - 2] - model.inertia_history[h - 1] < tol;
    const bool assignment_fixed = assign == previous;
    previous = assign;
    if (centroids_fixed || small_gain || assignment_fixed) break;
  }

  model.class_to_cluster.resize(c);
  for (std::uint32_t p = 0; p < c; ++p)
    model.class_to_cluster[p] = nearest_centroid(model.centroids, points.row(p));
  return model;
}

std::uint32_t assign_expert(const PartitionModel& model, std::uint32_t class_id) {
  if (class_id >= model.class_to_cluster.size())
    throw ValidationError("class " + std::to_string(class_id) + " is outside the partition (C = " +
                          std::to_string(model.class_to_cluster.size()) + ")");
  return model.class_to_cluster[class_id];
}

std::string partition_to_json(const PartitionModel& model) {
  nlohmann::ordered_json j;
  j["format"] = "oodkit-partition/1";
  j["num_clusters"] = model.num_clusters();
  j["dim"] = model.centroids.cols();
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < model.num_clusters(); ++k) {
    const auto r = model.centroids.row(k);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["centroids"] = std::move(rows);
  j["class_to_cluster"] = model.class_to_cluster;
  j["inertia_history"] = model.inertia_history;
  return j.dump(2) + "\n";
}

PartitionModel partition_from_json(const std::string& text) {
  PartitionModel model;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto rows = j.at("centroids").get<std::vector<std::vector<double>>>();
    const std::size_t d = j.at("dim").get<std::size_t>();
    model.centroids = Matrix(rows.size(), d);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].size() != d) throw FormatError("centroid row " + std::to_string(k) + " has wrong length");
      std::copy(rows[k].begin(), rows[k].end(), model.centroids.row(k).begin());
    }
    model.class_to_cluster = j.at("class_to_cluster").get<std::vector<std::uint32_t>>();
    model.inertia_history = j.at("inertia_history").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid partition JSON: ") + e.what());
  }
  if (model.num_clusters() == 0) throw FormatError("partition has no clusters");
  for (auto a : model.class_to_cluster)
    if (a >= model.num_clusters()) throw FormatError("class_to_cluster entry out of range");
  return model;
}

void save_partition(const PartitionModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << partition_to_json(model);
  if (!out) throw IoError("write failed: " + path.string());
}

PartitionModel load_partition(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return partition_from_json(text);
}

}  // namespace oodkit
