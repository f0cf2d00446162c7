// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "oodkit/mofe.hpp"

namespace oodkit::testing {

inline PartitionModel make_partition(std::size_t dim, std::vector<std::uint32_t> class_to_cluster) {
  PartitionModel p;
  const auto k = *std::max_element(class_to_cluster.begin(), class_to_cluster.end()) + 1;
  p.centroids = Matrix(k, dim);
  p.class_to_cluster = std::move(class_to_cluster);
  return p;
}

// Perturbs every tensor so that layer norms and biases are off their defaults.
inline void jitter(MoFEModel& m, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for_each_tensor(m.params, [&](TensorKind, std::size_t, const char*, auto& t) {
    for (double& v : t) v += scale * rng.normal();
  });
}

inline void zero_all(MoFEModel& m) {
  for_each_tensor(m.params, [](TensorKind, std::size_t, const char*, auto& t) {
    std::fill(t.begin(), t.end(), 0.0);
  });
}

inline std::vector<double> random_vec(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline BatchItem item(const MoFEModel& m, std::vector<double> z, std::uint32_t cls, std::uint32_t e) {
  BatchItem it;
  it.z = std::move(z);
  it.global_class = cls;
  it.expert = e;
  it.local_label = expert_label(m.params.experts[e], cls);
  it.cluster_label = assign_expert(m.partition, cls);
  return it;
}

// Gradient holder with every expert touched and every tensor zero.
inline GradientBundle zeros_like(const MoFEModel& m) {
  GradientBundle g;
  g.grads = m.params;
  for_each_tensor(g.grads, [](TensorKind, std::size_t, const char*, auto& t) {
    std::fill(t.begin(), t.end(), 0.0);
  });
  g.expert_touched.assign(m.num_experts(), 1);
  return g;
}

inline std::vector<std::vector<double>> flat(const ParamSet& p) {
  std::vector<std::vector<double>> out;
  for_each_tensor(p, [&](TensorKind, std::size_t, const char*, const auto& t) { out.push_back(t); });
  return out;
}

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
};

// Central differences on every parameter of `model`, compared with grad().
template <class LossFn>
GradCheck check_gradients(const MoFEModel& model, const Batch& batch, const LossConfig& cfg,
                          LossFn loss_of, bool router_only = false) {
  GradientBundle g;
  grad(model, batch, cfg, g);
  const auto analytic = flat(g.grads);
  MoFEModel probe = model;
  const double h = 1e-4;
  GradCheck out;
  std::size_t idx = 0;
  for_each_tensor(probe.params, [&](TensorKind kind, std::size_t e, const char* name, auto& t) {
    const auto& a = analytic[idx++];
    if (router_only && kind != TensorKind::kRouter) return;
    if (a.size() != t.size()) throw std::logic_error(std::string("gradient shape mismatch: ") + name);
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double saved = t[j];
      t[j] = saved + h;
      const double up = loss_of(compute_loss(probe, batch, cfg));
      t[j] = saved - h;
      const double down = loss_of(compute_loss(probe, batch, cfg));
      t[j] = saved;
      const double numeric = (up - down) / (2 * h);
      const double rel =
          std::abs(a[j] - numeric) / std::max({std::abs(a[j]), std::abs(numeric), 1e-6});
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = std::string(name) + "[" + std::to_string(e) + "][" + std::to_string(j) + "]";
      }
    }
  });
  return out;
}

struct GradFixture {
  MoFEModel model;
  Batch batch;
};

// D=5, H=7, E=2, C=4 with classes {0,1} on expert 0 and {2,3} on expert 1.
inline GradFixture grad_fixture(bool mixup, std::uint64_t seed) {
  GradFixture f;
  f.model = init_mofe(5, 7, make_partition(5, {0, 0, 1, 1}), seed);
  jitter(f.model, seed + 100, 0.3);
  Rng rng(seed + 200);
  for (std::uint32_t n = 0; n < 8; ++n)
    f.batch.items.push_back(item(f.model, random_vec(rng, 5, 1.5), n % 4, n / 4 % 2));
  if (mixup) {
    MixupPolicy policy;
    policy.s = {0.2, 0.9, 0.5, 0.0};
    add_mixup(f.batch, f.model, policy, rng);
  }
  return f;
}

inline double total_loss(const LossBreakdown& l) { return l.total; }

}  // namespace oodkit::testing
