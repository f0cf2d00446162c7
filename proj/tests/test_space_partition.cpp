// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include <cmath>

#include <gtest/gtest.h>

#include "oodkit/error.hpp"
#include "oodkit/space_partition.hpp"
#include "oodkit/synth_bench.hpp"
#include "test_support.hpp"

using namespace oodkit;

namespace {

PrototypeTable table(const std::vector<std::vector<double>>& rows) {
  PrototypeTable t;
  t.prototypes = Matrix(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), t.prototypes.row(i).begin());
  t.counts.assign(rows.size(), 1);
  return t;
}

std::vector<double> row(const Matrix& m, std::size_t r) { return {m.row(r).begin(), m.row(r).end()}; }

// Six classes in three superclasses of sizes 3, 2, 1.
PrototypeTable toy() {
  return table({{0, 0}, {1, 0}, {5, 0}, {0, 10}, {0, 12}, {10, 10}});
}
const SemanticHierarchy kToyHierarchy{{0, 0, 0, 1, 1, 2}, {"a", "b", "c"}};

}  // namespace

TEST(SpacePartition, PrototypesAreClassMeans) {
  EmbeddingSet s;
  s.features = Matrix(3, 2);
  s.features(1, 0) = 2;
  s.features(1, 1) = 2;
  s.features(2, 0) = 7;
  s.labels = {0, 0, 1};
  s.class_names = {"a", "b"};
  const auto t = class_prototypes(s);
  EXPECT_EQ(row(t.prototypes, 0), (std::vector<double>{1, 1}));
  EXPECT_EQ(row(t.prototypes, 1), (std::vector<double>{7, 0}));
  EXPECT_EQ(t.counts, (std::vector<std::size_t>{2, 1}));
}

TEST(SpacePartition, PrototypesMatchSummationOracle) {
  const auto s = oodkit::testing::random_set(1000, 12, 50, 17);
  const auto t = class_prototypes(s);
  for (std::size_t c = 0; c < 50; ++c) {
    std::vector<double> sum(12, 0.0);
    double n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.labels[i] != c) continue;
      for (std::size_t j = 0; j < 12; ++j) sum[j] += s.features(i, j);
      ++n;
    }
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(t.prototypes(c, j), sum[j] / n, 1e-9);
  }
}

TEST(SpacePartition, EmptyClassNamed) {
  auto s = oodkit::testing::random_set(4, 2, 3, 0);
  s.labels = {0, 0, 2, 2};
  s.class_names[1] = "missing";
  try {
    class_prototypes(s);
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
}

TEST(SpacePartition, SeedsEqualSuperclassMeans) {
  const auto t = table({{0, 0}, {2, 0}, {10, 10}, {12, 14}});
  const auto seeds = hierarchy_seed_centroids(t, {{0, 0, 1, 1}, {"a", "b"}}, 2);
  EXPECT_EQ(row(seeds, 0), (std::vector<double>{1, 0}));
  EXPECT_EQ(row(seeds, 1), (std::vector<double>{11, 12}));
}

TEST(SpacePartition, SingleSeedIsGlobalMean) {
  const auto seeds = hierarchy_seed_centroids(toy(), kToyHierarchy, 1);
  ASSERT_EQ(seeds.rows(), 1u);
  EXPECT_NEAR(seeds(0, 0), 16.0 / 6.0, 1e-12);
  EXPECT_NEAR(seeds(0, 1), 32.0 / 6.0, 1e-12);
}

TEST(SpacePartition, MergeClosestPair) {
  // Pair distances: a-b 125, a-c 164, b-c 101, so b and c merge.
  const auto seeds = hierarchy_seed_centroids(toy(), kToyHierarchy, 2);
  EXPECT_EQ(row(seeds, 0), (std::vector<double>{2, 0}));
  EXPECT_NEAR(seeds(1, 0), 10.0 / 3.0, 1e-12);
  EXPECT_NEAR(seeds(1, 1), 32.0 / 3.0, 1e-12);
}

TEST(SpacePartition, SplitLargestSuperclassHandTrace) {
  // k = 4: superclass a is largest; its farthest member from (2,0) is class 2 at (5,0).
  const auto s4 = hierarchy_seed_centroids(toy(), kToyHierarchy, 4);
  ASSERT_EQ(s4.rows(), 4u);
  EXPECT_EQ(row(s4, 0), (std::vector<double>{2, 0}));
  EXPECT_EQ(row(s4, 1), (std::vector<double>{0, 11}));
  EXPECT_EQ(row(s4, 2), (std::vector<double>{10, 10}));
  EXPECT_EQ(row(s4, 3), (std::vector<double>{5, 0}));

  // k = 5: groups are now {0,1}, {3,4}, {5}, {2}; the first size-2 group
  // splits at class 0, its farthest member from (2,0).
  const auto s5 = hierarchy_seed_centroids(toy(), kToyHierarchy, 5);
  EXPECT_EQ(row(s5, 4), (std::vector<double>{0, 0}));

  // k = 6: group {3,4} is now largest and both members are equidistant from
  // (0,11), so the lower index, class 3, seeds the new group.
  const auto s6 = hierarchy_seed_centroids(toy(), kToyHierarchy, 6);
  EXPECT_EQ(s6.rows(), 6u);
  EXPECT_EQ(row(s6, 5), (std::vector<double>{0, 10}));
}

TEST(SpacePartition, SeedCountValidation) {
  EXPECT_THROW(hierarchy_seed_centroids(toy(), kToyHierarchy, 0), ValidationError);
  EXPECT_THROW(hierarchy_seed_centroids(toy(), kToyHierarchy, 7), ValidationError);
  EXPECT_THROW(kmeans(toy(), Matrix(7, 2), 10, 0.0), ValidationError);
  EXPECT_THROW(kmeans(toy(), Matrix(2, 2), 0, 0.0), ValidationError);
}

TEST(SpacePartition, FixedPointConvergesInOneIteration) {
  const auto t = toy();
  const auto m = kmeans(t, t.prototypes, 50, 0.0);
  EXPECT_EQ(m.inertia_history.size(), 1u);
  EXPECT_EQ(m.inertia_history[0], 0.0);
  for (std::uint32_t c = 0; c < 6; ++c) EXPECT_EQ(m.class_to_cluster[c], c);
}

TEST(SpacePartition, SeparatedGroupsRecovered) {
  Rng rng(5);
  std::vector<std::vector<double>> rows;
  std::vector<std::uint32_t> sup;
  for (std::uint32_t g = 0; g < 2; ++g)
    for (int i = 0; i < 6; ++i) {
      rows.push_back({10.0 * g + rng.normal() * 0.3, rng.normal() * 0.3});
      sup.push_back(g);
    }
  const auto t = table(rows);
  const SemanticHierarchy h{sup, {"left", "right"}};
  const auto m = kmeans(t, hierarchy_seed_centroids(t, h, 2), 100, 1e-9);
  for (std::size_t c = 0; c < rows.size(); ++c) {
    EXPECT_EQ(m.class_to_cluster[c], sup[c]);
    EXPECT_EQ(assign_expert(m, static_cast<std::uint32_t>(c)), sup[c]);
  }
}

TEST(SpacePartition, InertiaNonIncreasingAndFixedPoint) {
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 3 + rng.below(40), d = 1 + rng.below(6);
    const std::size_t k = 1 + rng.below(c);
    PrototypeTable p;
    p.prototypes = Matrix(c, d);
    for (double& v : p.prototypes.data()) v = rng.normal();
    p.counts.assign(c, 1);
    Matrix seeds(k, d);
    for (double& v : seeds.data()) v = 3.0 * rng.normal();  // often leaves clusters empty
    const auto m = kmeans(p, seeds, 100, 0.0);
    for (std::size_t i = 1; i < m.inertia_history.size(); ++i)
      EXPECT_LE(m.inertia_history[i], m.inertia_history[i - 1]);
    for (std::uint32_t cls = 0; cls < c; ++cls)
      EXPECT_EQ(m.class_to_cluster[cls], nearest_centroid(m.centroids, p.prototypes.row(cls)));
  }
}

TEST(SpacePartition, TieBreaksToLowestIndex) {
  Matrix centroids(2, 1);
  centroids(0, 0) = -1;
  centroids(1, 0) = 1;
  EXPECT_EQ(nearest_centroid(centroids, std::vector<double>{0.0}), 0u);
}

TEST(SpacePartition, AssignExpertBounds) {
  const auto t = toy();
  const auto m = kmeans(t, hierarchy_seed_centroids(t, kToyHierarchy, 1), 10, 0.0);
  for (std::uint32_t c = 0; c < 6; ++c) EXPECT_EQ(assign_expert(m, c), 0u);
  EXPECT_THROW(assign_expert(m, 6), ValidationError);
}

TEST(SpacePartition, Deterministic) {
  const auto t = toy();
  const auto a = kmeans(t, hierarchy_seed_centroids(t, kToyHierarchy, 3), 100, 1e-6);
  const auto b = kmeans(t, hierarchy_seed_centroids(t, kToyHierarchy, 3), 100, 1e-6);
  EXPECT_EQ(partition_to_json(a), partition_to_json(b));
}

TEST(SpacePartition, JsonRoundTrip) {
  oodkit::testing::TempDir dir;
  const auto t = toy();
  const auto m = kmeans(t, hierarchy_seed_centroids(t, kToyHierarchy, 3), 100, 1e-6);
  save_partition(m, dir / "p.json");
  const auto back = load_partition(dir / "p.json");
  EXPECT_EQ(back.centroids, m.centroids);
  EXPECT_EQ(back.class_to_cluster, m.class_to_cluster);
  EXPECT_EQ(back.inertia_history, m.inertia_history);
  EXPECT_THROW(partition_from_json("{}"), FormatError);
}

TEST(SpacePartition, RecoversSuperclassesAtFiveFoldSeparation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.superclass_radius = 5.0 * spec.class_offset;
    spec.samples_per_class = 20;
    const auto bench = generate_benchmark(spec);
    const auto t = class_prototypes(bench.id_train);
    const auto m = kmeans(t, hierarchy_seed_centroids(t, bench.hierarchy, 5), 100, 1e-6);
    // Same partition up to relabelling: classes share a cluster iff they share a superclass.
    const auto& sup = bench.hierarchy.superclass_of;
    for (std::size_t a = 0; a < sup.size(); ++a)
      for (std::size_t b = 0; b < sup.size(); ++b)
        EXPECT_EQ(m.class_to_cluster[a] == m.class_to_cluster[b], sup[a] == sup[b]);
  }
}
