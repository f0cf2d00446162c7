// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/mofe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "oodkit/error.hpp"
#include "oodkit/eval_metrics.hpp"
#include "oodkit/threads.hpp"

namespace oodkit {

namespace {

struct LayerNormCache {
  std::vector<double> xhat;
  double inv_std = 1.0;
};

void layer_norm(std::span<const double> x, std::span<const double> gamma,
                std::span<const double> beta, std::vector<double>& y, LayerNormCache& cache) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  cache.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  cache.xhat.resize(d);
  y.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    cache.xhat[i] = (x[i] - mean) * cache.inv_std;
    y[i] = gamma[i] * cache.xhat[i] + beta[i];
  }
}

// Accumulates parameter gradients and returns dL/dx.
std::vector<double> layer_norm_backward(std::span<const double> dy, std::span<const double> gamma,
                                        const LayerNormCache& cache, std::vector<double>& dgamma,
                                        std::vector<double>& dbeta) {
  const std::size_t d = dy.size();
  std::vector<double> dxhat(d);
  double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dgamma[i] += dy[i] * cache.xhat[i];
    dbeta[i] += dy[i];
    dxhat[i] = dy[i] * gamma[i];
    mean_dxhat += dxhat[i];
    mean_dxhat_xhat += dxhat[i] * cache.xhat[i];
  }
  mean_dxhat /= static_cast<double>(d);
  mean_dxhat_xhat /= static_cast<double>(d);
  std::vector<double> dx(d);
  for (std::size_t i = 0; i < d; ++i)
    dx[i] = cache.inv_std * (dxhat[i] - mean_dxhat - cache.xhat[i] * mean_dxhat_xhat);
  return dx;
}

struct ForwardCache {
  std::vector<double> router_logits, probs;
  std::uint32_t expert = 0;
  double gate = 1.0;
  LayerNormCache ln1;
  std::vector<double> a, hpre, h, u, z_out;
  LayerNormCache lnf;
  std::vector<double> f0, logits;
};

std::vector<double> router_logits(const MoFEModel& model, std::span<const double> z) {
  const std::size_t e_count = model.num_experts();
  std::vector<double> r(e_count, 0.0);
  const double* w = model.params.router_w.data();
  for (std::size_t d = 0; d < model.dim; ++d) {
    const double zd = z[d];
    const double* row = w + d * e_count;
    for (std::size_t e = 0; e < e_count; ++e) r[e] += zd * row[e];
  }
  return r;
}

void forward_cached(const MoFEModel& model, std::span<const double> z, Route route, GateMode gate,
                    ForwardCache& c) {
  const std::size_t dim = model.dim, hid = model.hidden;
  if (z.size() != dim)
    throw ValidationError("input dimension " + std::to_string(z.size()) +
                          " does not match model dimension " + std::to_string(dim));
  c.router_logits = router_logits(model, z);
  c.probs = softmax(c.router_logits);
  if (route.expert) {
    if (*route.expert >= model.num_experts())
      throw ValidationError("forced expert " + std::to_string(*route.expert) +
                            " out of range (E = " + std::to_string(model.num_experts()) + ")");
    c.expert = *route.expert;
  } else {
    c.expert = static_cast<std::uint32_t>(
        std::max_element(c.probs.begin(), c.probs.end()) - c.probs.begin());
  }
  c.gate = gate == GateMode::kScaled ? c.probs[c.expert] : 1.0;

  const ExpertBlock& x = model.params.experts[c.expert];
  layer_norm(z, x.ln1_gamma, x.ln1_beta, c.a, c.ln1);
  c.hpre.assign(x.b1.begin(), x.b1.end());
  for (std::size_t d = 0; d < dim; ++d) {
    const double ad = c.a[d];
    const double* row = x.w1.data() + d * hid;
    for (std::size_t j = 0; j < hid; ++j) c.hpre[j] += ad * row[j];
  }
  c.h.resize(hid);
  for (std::size_t j = 0; j < hid; ++j) c.h[j] = c.hpre[j] > 0.0 ? c.hpre[j] : 0.0;
  c.u.assign(x.b2.begin(), x.b2.end());
  for (std::size_t j = 0; j < hid; ++j) {
    const double hj = c.h[j];
    if (hj == 0.0) continue;
    const double* row = x.w2.data() + j * dim;
    for (std::size_t d = 0; d < dim; ++d) c.u[d] += hj * row[d];
  }
  c.z_out.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) c.z_out[d] = c.gate * c.u[d] + z[d];
  layer_norm(c.z_out, model.params.final_ln_gamma, model.params.final_ln_beta, c.f0, c.lnf);

  const std::size_t q = x.num_outputs();
  c.logits.assign(x.head_b.begin(), x.head_b.end());
  for (std::size_t d = 0; d < dim; ++d) {
    const double fd = c.f0[d];
    const double* row = x.head_w.data() + d * q;
    for (std::size_t k = 0; k < q; ++k) c.logits[k] += fd * row[k];
  }
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void ensure_expert(GradientBundle& g, const MoFEModel& model, std::uint32_t e) {
  if (g.expert_touched[e]) return;
  g.expert_touched[e] = 1;
  const ExpertBlock& src = model.params.experts[e];
  ExpertBlock& dst = g.grads.experts[e];
  dst.ln1_gamma.assign(src.ln1_gamma.size(), 0.0);
  dst.ln1_beta.assign(src.ln1_beta.size(), 0.0);
  dst.w1.assign(src.w1.size(), 0.0);
  dst.b1.assign(src.b1.size(), 0.0);
  dst.w2.assign(src.w2.size(), 0.0);
  dst.b2.assign(src.b2.size(), 0.0);
  dst.head_w.assign(src.head_w.size(), 0.0);
  dst.head_b.assign(src.head_b.size(), 0.0);
}

void merge(GradientBundle& dst, const GradientBundle& src) {
  add_into(dst.grads.router_w, src.grads.router_w);
  add_into(dst.grads.final_ln_gamma, src.grads.final_ln_gamma);
  add_into(dst.grads.final_ln_beta, src.grads.final_ln_beta);
  for (std::size_t e = 0; e < src.expert_touched.size(); ++e) {
    if (!src.expert_touched[e]) continue;
    const ExpertBlock& s = src.grads.experts[e];
    ExpertBlock& d = dst.grads.experts[e];
    if (!dst.expert_touched[e]) {
      dst.expert_touched[e] = 1;
      d.ln1_gamma = s.ln1_gamma;
      d.ln1_beta = s.ln1_beta;
      d.w1 = s.w1;
      d.b1 = s.b1;
      d.w2 = s.w2;
      d.b2 = s.b2;
      d.head_w = s.head_w;
      d.head_b = s.head_b;
      continue;
    }
    add_into(d.ln1_gamma, s.ln1_gamma);
    add_into(d.ln1_beta, s.ln1_beta);
    add_into(d.w1, s.w1);
    add_into(d.b1, s.b1);
    add_into(d.w2, s.w2);
    add_into(d.b2, s.b2);
    add_into(d.head_w, s.head_w);
    add_into(d.head_b, s.head_b);
  }
}

struct SampleSpec {
  std::span<const double> x;
  std::uint32_t expert = 0;
  std::optional<std::uint32_t> route_label;
  // Classification target: either an integer label or a distribution.
  std::uint32_t label_i = 0, label_j = 0;
  double lambda_hat = 1.0;
  bool mixed = false;
};

// Backpropagates one sample scaled by `weight` (the 1/N of the batch mean).
void backward_sample(const MoFEModel& model, const SampleSpec& s, const LossConfig& cfg,
                     const ForwardCache& c, double route_weight, double ce_weight,
                     GradientBundle& g) {
  const std::size_t dim = model.dim, hid = model.hidden, e_count = model.num_experts();
  const ExpertBlock& x = model.params.experts[c.expert];
  ExpertBlock& gx = g.grads.experts[c.expert];
  const std::size_t q = x.num_outputs();

  std::vector<double> dr(e_count, 0.0);
  if (s.route_label)
    for (std::size_t k = 0; k < e_count; ++k)
      dr[k] += route_weight * (c.probs[k] - (k == *s.route_label ? 1.0 : 0.0));

  // d(CE)/d(logits) = softmax * sum(t) - t with sum(t) = 1.
  std::vector<double> target(q, 0.0);
  if (s.mixed) {
    target = mixup_target(q, s.label_i, s.label_j, s.lambda_hat, cfg.mixup_policy);
  } else {
    target[s.label_i] = 1.0;
  }
  const auto p = softmax(c.logits);
  std::vector<double> dlogits(q);
  for (std::size_t k = 0; k < q; ++k) dlogits[k] = ce_weight * (p[k] - target[k]);

  std::vector<double> df0(dim, 0.0);
  for (std::size_t d = 0; d < dim; ++d) {
    const double fd = c.f0[d];
    double* grow = gx.head_w.data() + d * q;
    const double* wrow = x.head_w.data() + d * q;
    double acc = 0.0;
    for (std::size_t k = 0; k < q; ++k) {
      grow[k] += fd * dlogits[k];
      acc += wrow[k] * dlogits[k];
    }
    df0[d] = acc;
  }
  for (std::size_t k = 0; k < q; ++k) gx.head_b[k] += dlogits[k];
  if (s.mixed && cfg.mixup_policy.reg_kind == RegKind::kL2Norm) {
    const double coeff = ce_weight * 2.0 * cfg.mixup_policy.reg_weight;
    for (std::size_t d = 0; d < dim; ++d) df0[d] += coeff * c.f0[d];
  }

  const auto dz_out = layer_norm_backward(df0, model.params.final_ln_gamma, c.lnf,
                                          g.grads.final_ln_gamma, g.grads.final_ln_beta);

  std::vector<double> du(dim);
  double dgate = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    du[d] = c.gate * dz_out[d];
    dgate += dz_out[d] * c.u[d];
  }

  for (std::size_t d = 0; d < dim; ++d) gx.b2[d] += du[d];
  std::vector<double> dhpre(hid, 0.0);
  for (std::size_t j = 0; j < hid; ++j) {
    if (c.hpre[j] <= 0.0) continue;
    const double hj = c.h[j];
    double* grow = gx.w2.data() + j * dim;
    const double* wrow = x.w2.data() + j * dim;
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      grow[d] += hj * du[d];
      acc += wrow[d] * du[d];
    }
    dhpre[j] = acc;
  }
  for (std::size_t j = 0; j < hid; ++j) gx.b1[j] += dhpre[j];
  std::vector<double> da(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const double ad = c.a[d];
    double* grow = gx.w1.data() + d * hid;
    const double* wrow = x.w1.data() + d * hid;
    double acc = 0.0;
    for (std::size_t j = 0; j < hid; ++j) {
      grow[j] += ad * dhpre[j];
      acc += wrow[j] * dhpre[j];
    }
    da[d] = acc;
  }
  // The input z is data, so dL/dz is not needed past this point.
  for (std::size_t d = 0; d < dim; ++d) {
    gx.ln1_gamma[d] += da[d] * c.ln1.xhat[d];
    gx.ln1_beta[d] += da[d];
  }

  if (cfg.gate == GateMode::kScaled && !cfg.stop_gate) {
    const double pe = c.probs[c.expert];
    for (std::size_t k = 0; k < e_count; ++k)
      dr[k] += dgate * pe * ((k == c.expert ? 1.0 : 0.0) - c.probs[k]);
  }
  for (std::size_t d = 0; d < dim; ++d) {
    const double zd = s.x[d];
    double* grow = g.grads.router_w.data() + d * e_count;
    for (std::size_t k = 0; k < e_count; ++k) grow[k] += zd * dr[k];
  }
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term + " loss");
}

struct SampleLoss {
  double route = 0.0, expert = 0.0, mixup = 0.0;
};

SampleLoss sample_loss(const MoFEModel& model, const SampleSpec& s, const LossConfig& cfg,
                       ForwardCache& c) {
  forward_cached(model, s.x, Route::forced(s.expert), cfg.gate, c);
  SampleLoss out;
  if (s.mixed) {
    out.mixup = mixup_loss(c.logits, s.label_i, s.label_j, s.lambda_hat, cfg.mixup_policy, c.f0);
    check_finite(out.mixup, "mixup");
  } else {
    out.route = route_loss(c.probs, *s.route_label);
    out.expert = expert_loss(c.logits, s.label_i);
    check_finite(out.route, "route");
    check_finite(out.expert, "expert");
  }
  return out;
}

std::vector<SampleSpec> flatten(const MoFEModel& model, const Batch& batch) {
  std::vector<SampleSpec> specs;
  specs.reserve(batch.items.size() + batch.mixed.size());
  for (const auto& it : batch.items) {
    if (it.expert >= model.num_experts()) throw ValidationError("batch item expert out of range");
    if (it.cluster_label >= model.num_experts())
      throw ValidationError("batch item cluster label out of range");
    if (it.local_label >= model.params.experts[it.expert].num_outputs())
      throw ValidationError("batch item local label out of range");
    SampleSpec s;
    s.x = it.z;
    s.expert = it.expert;
    s.route_label = it.cluster_label;
    s.label_i = it.local_label;
    specs.push_back(s);
  }
  for (const auto& it : batch.mixed) {
    if (it.expert >= model.num_experts()) throw ValidationError("mixed item expert out of range");
    SampleSpec s;
    s.x = it.x;
    s.expert = it.expert;
    s.label_i = it.label_i;
    s.label_j = it.label_j;
    s.lambda_hat = it.lambda_hat;
    s.mixed = true;
    specs.push_back(s);
  }
  return specs;
}

constexpr std::size_t kChunk = 16;

}  // namespace

MoFEModel init_mofe(std::size_t dim, std::size_t hidden, const PartitionModel& partition,
                    std::uint64_t seed) {
  if (dim < 1 || hidden < 1) throw ValidationError("dim and hidden must be >= 1");
  if (partition.centroids.cols() != dim)
    throw ValidationError("partition dimension " + std::to_string(partition.centroids.cols()) +
                          " does not match model dimension " + std::to_string(dim));
  const auto members = partition.members();
  for (std::size_t k = 0; k < members.size(); ++k)
    if (members[k].empty())
      throw ValidationError("partition cluster " + std::to_string(k) + " has no classes");

  MoFEModel model;
  model.dim = dim;
  model.hidden = hidden;
  model.num_classes = partition.num_classes();
  model.partition = partition;
  Rng rng(seed);
  auto uniform = [&](std::vector<double>& t, std::size_t n, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    t.resize(n);
    for (double& v : t) v = (2.0 * rng.uniform() - 1.0) * bound;
  };

  // One block, replicated to every expert.
  ExpertBlock block;
  block.ln1_gamma.assign(dim, 1.0);
  block.ln1_beta.assign(dim, 0.0);
  uniform(block.w1, dim * hidden, dim);
  uniform(block.b1, hidden, dim);
  uniform(block.w2, hidden * dim, hidden);
  uniform(block.b2, dim, hidden);

  const std::size_t e_count = members.size();
  for (std::size_t e = 0; e < e_count; ++e) {
    ExpertBlock x = block;
    x.class_list = members[e];
    uniform(x.head_w, dim * x.num_outputs(), dim);
    uniform(x.head_b, x.num_outputs(), dim);
    model.params.experts.push_back(std::move(x));
  }
  uniform(model.params.router_w, dim * e_count, dim);
  model.params.final_ln_gamma.assign(dim, 1.0);
  model.params.final_ln_beta.assign(dim, 0.0);
  return model;
}

std::vector<double> router_forward(const MoFEModel& model, std::span<const double> z) {
  if (z.size() != model.dim)
    throw ValidationError("input dimension " + std::to_string(z.size()) +
                          " does not match model dimension " + std::to_string(model.dim));
  return softmax(router_logits(model, z));
}

ForwardResult mofe_forward(const MoFEModel& model, std::span<const double> z, Route route) {
  ForwardCache c;
  forward_cached(model, z, route, model.hyper.gate, c);
  return {std::move(c.f0), std::move(c.z_out), c.expert, c.gate, std::move(c.logits),
          std::move(c.probs)};
}

double route_loss(std::span<const double> probs, std::uint32_t cluster_label) {
  if (cluster_label >= probs.size())
    throw ValidationError("cluster label " + std::to_string(cluster_label) + " out of range");
  return -std::log(probs[cluster_label]);
}

std::uint32_t expert_label(const ExpertBlock& expert, std::uint32_t global_class) {
  const auto it = std::find(expert.class_list.begin(), expert.class_list.end(), global_class);
  return static_cast<std::uint32_t>(it - expert.class_list.begin());
}

double expert_loss(std::span<const double> logits, std::uint32_t local_label) {
  return cross_entropy(logits, local_label);
}

std::uint32_t predict_class(const MoFEModel& model, const ForwardResult& fwd) {
  const auto& x = model.params.experts[fwd.expert];
  const auto local = static_cast<std::uint32_t>(
      std::max_element(fwd.logits.begin(), fwd.logits.end()) - fwd.logits.begin());
  if (local == x.outside_label()) return static_cast<std::uint32_t>(model.num_classes);
  return x.class_list[local];
}

ExpertSampler make_sampler(const EmbeddingSet& train, const MoFEModel& model,
                           std::uint32_t expert) {
  ExpertSampler s;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (assign_expert(model.partition, train.labels[i]) == expert)
      s.positives.push_back(i);
    else
      s.negatives.push_back(i);
  }
  return s;
}

Batch balanced_batch(const EmbeddingSet& train, const MoFEModel& model, std::uint32_t expert,
                     const ExpertSampler& sampler, std::size_t batch_size, Rng& rng) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ValidationError("batch size must be a positive even number");
  if (sampler.positives.empty())
    throw ValidationError("expert " + std::to_string(expert) + " has no positive samples");
  if (sampler.negatives.empty())
    throw ValidationError("expert " + std::to_string(expert) + " has no negative samples");
  const ExpertBlock& x = model.params.experts[expert];
  Batch batch;
  batch.items.reserve(batch_size);
  auto push = [&](std::size_t row) {
    BatchItem it;
    const auto src = train.features.row(row);
    it.z.assign(src.begin(), src.end());
    it.global_class = train.labels[row];
    it.local_label = expert_label(x, it.global_class);
    it.cluster_label = assign_expert(model.partition, it.global_class);
    it.expert = expert;
    batch.items.push_back(std::move(it));
  };
  for (std::size_t i = 0; i < batch_size / 2; ++i)
    push(sampler.positives[rng.below(sampler.positives.size())]);
  for (std::size_t i = 0; i < batch_size / 2; ++i)
    push(sampler.negatives[rng.below(sampler.negatives.size())]);
  return batch;
}

void add_mixup(Batch& batch, const MoFEModel& model, const MixupPolicy& policy, Rng& rng) {
  std::vector<std::size_t> partners;
  for (std::size_t n = 0; n < batch.items.size(); ++n) {
    const BatchItem& anchor = batch.items[n];
    partners.clear();
    for (std::size_t m = 0; m < batch.items.size(); ++m)
      if (batch.items[m].global_class != anchor.global_class) partners.push_back(m);
    MixedItem mixed;
    mixed.expert = anchor.expert;
    mixed.label_i = anchor.local_label;
    if (partners.empty()) {
      mixed.x = anchor.z;
      mixed.label_j = anchor.local_label;
      mixed.lambda_hat = 1.0;
    } else {
      const double s_c = anchor.global_class < policy.s.size() ? policy.s[anchor.global_class] : 0.0;
      mixed.lambda_hat = sample_lambda_hat(sigma_for_class(s_c, policy), rng);
      const BatchItem& partner = batch.items[partners[rng.below(partners.size())]];
      mixed.x = mix_pair(anchor.z, partner.z, mixed.lambda_hat);
      mixed.label_j = expert_label(model.params.experts[anchor.expert], partner.global_class);
    }
    batch.mixed.push_back(std::move(mixed));
  }
}

GradientBundle zero_gradients(const MoFEModel& model) {
  GradientBundle g;
  g.grads.router_w.assign(model.params.router_w.size(), 0.0);
  g.grads.final_ln_gamma.assign(model.dim, 0.0);
  g.grads.final_ln_beta.assign(model.dim, 0.0);
  g.grads.experts.resize(model.num_experts());
  for (std::size_t e = 0; e < model.num_experts(); ++e)
    g.grads.experts[e].class_list = model.params.experts[e].class_list;
  g.expert_touched.assign(model.num_experts(), 0);
  return g;
}

LossBreakdown compute_loss(const MoFEModel& model, const Batch& batch, const LossConfig& cfg) {
  if (batch.items.empty() && batch.mixed.empty()) throw ValidationError("batch is empty");
  const auto specs = flatten(model, batch);
  LossBreakdown out;
  ForwardCache c;
  for (const auto& s : specs) {
    const auto l = sample_loss(model, s, cfg, c);
    out.route += l.route;
    out.expert += l.expert;
    out.mixup += l.mixup;
  }
  if (!batch.items.empty()) {
    out.route /= static_cast<double>(batch.items.size());
    out.expert /= static_cast<double>(batch.items.size());
  }
  if (!batch.mixed.empty()) out.mixup /= static_cast<double>(batch.mixed.size());
  out.total = out.route + out.expert + out.mixup;
  return out;
}

LossBreakdown grad(const MoFEModel& model, const Batch& batch, const LossConfig& cfg,
                   GradientBundle& out) {
  if (batch.items.empty() && batch.mixed.empty()) throw ValidationError("batch is empty");
  const auto specs = flatten(model, batch);
  const double item_w = batch.items.empty() ? 0.0 : 1.0 / static_cast<double>(batch.items.size());
  const double mixed_w = batch.mixed.empty() ? 0.0 : 1.0 / static_cast<double>(batch.mixed.size());

  // Fixed-size chunks reduced in order: the result does not depend on the
  // number of worker threads.
  const std::size_t chunks = (specs.size() + kChunk - 1) / kChunk;
  std::vector<GradientBundle> partial(chunks);
  std::vector<SampleLoss> partial_loss(chunks);
  parallel_for(chunks, [&](std::size_t ci) {
    GradientBundle g = zero_gradients(model);
    SampleLoss acc;
    ForwardCache c;
    const std::size_t end = std::min(specs.size(), (ci + 1) * kChunk);
    for (std::size_t i = ci * kChunk; i < end; ++i) {
      const auto& s = specs[i];
      const auto l = sample_loss(model, s, cfg, c);
      acc.route += l.route;
      acc.expert += l.expert;
      acc.mixup += l.mixup;
      ensure_expert(g, model, c.expert);
      backward_sample(model, s, cfg, c, item_w, s.mixed ? mixed_w : item_w, g);
    }
    partial[ci] = std::move(g);
    partial_loss[ci] = acc;
  });

  out = zero_gradients(model);
  LossBreakdown loss;
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    merge(out, partial[ci]);
    loss.route += partial_loss[ci].route;
    loss.expert += partial_loss[ci].expert;
    loss.mixup += partial_loss[ci].mixup;
  }
  loss.route *= item_w;
  loss.expert *= item_w;
  loss.mixup *= mixed_w;
  loss.total = loss.route + loss.expert + loss.mixup;
  check_finite(loss.total, "total");
  return loss;
}

AdamWState init_adamw(const MoFEModel& model) {
  AdamWState state;
  for_each_tensor(model.params, [&](TensorKind, std::size_t, const char*, const auto& t) {
    state.m.emplace_back(t.size(), 0.0);
    state.v.emplace_back(t.size(), 0.0);
    state.steps.push_back(0);
  });
  return state;
}

double cosine_lr(const TrainConfig& hyper, std::size_t step_count) {
  if (hyper.total_steps <= 1) return hyper.lr;
  const double t = static_cast<double>(std::min(step_count, hyper.total_steps) - 1) /
                   static_cast<double>(hyper.total_steps - 1);
  return hyper.min_lr + 0.5 * (hyper.lr - hyper.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

void adamw_step(MoFEModel& model, const GradientBundle& grads, const TrainConfig& hyper,
                AdamWState& state, std::size_t step_count, bool freeze_blocks) {
  if (step_count < 1) throw ValidationError("step_count must be >= 1");
  const double lr = cosine_lr(hyper, step_count);
  std::vector<const std::vector<double>*> g_list;
  std::vector<char> g_live;
  for_each_tensor(grads.grads, [&](TensorKind kind, std::size_t e, const char*, const auto& t) {
    g_list.push_back(&t);
    const bool expert_tensor = kind == TensorKind::kBlock || kind == TensorKind::kHead;
    g_live.push_back(!expert_tensor || grads.expert_touched[e]);
  });
  std::size_t idx = 0;
  for_each_tensor(model.params, [&](TensorKind kind, std::size_t, const char* name, auto& p) {
    const std::size_t i = idx++;
    if (!g_live[i]) return;
    if (freeze_blocks && (kind == TensorKind::kBlock || kind == TensorKind::kFinalLn)) return;
    const auto& g = *g_list[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const std::size_t t = ++state.steps[i];
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    const std::string_view n(name);
    const bool decay = n == "router_w" || n == "w1" || n == "w2" || n == "head_w";
    const double shrink = decay ? 1.0 - lr * hyper.weight_decay : 1.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] = p[j] * shrink - lr * mhat / (std::sqrt(vhat) + hyper.adam_eps);
    }
  });
}

std::vector<double> update_difficulty(const MoFEModel& model, const EmbeddingSet& val) {
  std::vector<std::uint32_t> preds(val.size());
  parallel_for(val.size(), [&](std::size_t i) {
    preds[i] = predict_class(model, mofe_forward(model, val.features.row(i), Route::predicted()));
  });
  return per_class_accuracy(preds, val.labels, model.num_classes);
}

double router_accuracy(const MoFEModel& model, const EmbeddingSet& set) {
  std::vector<char> hit(set.size());
  parallel_for(set.size(), [&](std::size_t i) {
    const auto probs = router_forward(model, set.features.row(i));
    const auto e = std::max_element(probs.begin(), probs.end()) - probs.begin();
    hit[i] = static_cast<std::uint32_t>(e) == assign_expert(model.partition, set.labels[i]);
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) /
         static_cast<double>(set.size());
}

double classification_accuracy(const MoFEModel& model, const EmbeddingSet& set) {
  std::vector<std::uint32_t> preds(set.size());
  parallel_for(set.size(), [&](std::size_t i) {
    preds[i] = predict_class(model, mofe_forward(model, set.features.row(i), Route::predicted()));
  });
  return id_accuracy(preds, set.labels);
}

TrainHistory train_mofe(MoFEModel& model, const EmbeddingSet& train, const EmbeddingSet& val,
                        TrainConfig config) {
  validate(train);
  validate(val);
  if (train.dim() != model.dim || val.dim() != model.dim)
    throw ValidationError("embedding dimension does not match the model");
  if (train.num_classes() != model.num_classes)
    throw ValidationError("training set has " + std::to_string(train.num_classes()) +
                          " classes but the partition covers " +
                          std::to_string(model.num_classes));
  if (config.batch_size < 2 || config.batch_size % 2 != 0)
    throw ValidationError("batch size must be a positive even number");
  if (config.epochs < 1) throw ValidationError("epochs must be >= 1");
  config.mixup_policy.validate();

  const std::size_t e_count = model.num_experts();
  std::vector<ExpertSampler> samplers;
  for (std::uint32_t e = 0; e < e_count; ++e) {
    samplers.push_back(make_sampler(train, model, e));
    if (samplers.back().positives.empty())
      throw ValidationError("expert " + std::to_string(e) + " has no training samples");
  }
  // Every expert sees roughly twice its positives per epoch (1:1 with negatives).
  const std::size_t rounds = std::max<std::size_t>(
      1, (2 * train.size() + e_count * config.batch_size - 1) / (e_count * config.batch_size));
  config.total_steps = config.epochs * rounds * e_count;
  model.hyper = config;

  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  AdamWState opt = init_adamw(model);
  LossConfig loss_cfg{config.gate, config.stop_gate, config.mixup_policy};
  if (config.mixup) loss_cfg.mixup_policy.s = update_difficulty(model, val);

  TrainHistory history;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool freeze = epoch < config.warmup_epochs;
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t r = 0; r < rounds; ++r) {
      for (std::uint32_t e = 0; e < e_count; ++e) {
        Batch batch;
        if (samplers[e].negatives.empty()) {
          // Single expert owning every class: there is no outside class to sample.
          const ExpertBlock& x = model.params.experts[e];
          for (std::size_t i = 0; i < config.batch_size; ++i) {
            const std::size_t row = samplers[e].positives[rng.below(samplers[e].positives.size())];
            BatchItem it;
            const auto src = train.features.row(row);
            it.z.assign(src.begin(), src.end());
            it.global_class = train.labels[row];
            it.local_label = expert_label(x, it.global_class);
            it.cluster_label = e;
            it.expert = e;
            batch.items.push_back(std::move(it));
          }
        } else {
          batch = balanced_batch(train, model, e, samplers[e], config.batch_size, rng);
        }
        if (config.mixup) add_mixup(batch, model, loss_cfg.mixup_policy, rng);
        GradientBundle g;
        LossBreakdown loss;
        try {
          loss = grad(model, batch, loss_cfg, g);
        } catch (const NumericError& err) {
          throw NumericError(std::string(err.what()) + " at epoch " + std::to_string(epoch + 1) +
                             ", step " + std::to_string(step + 1));
        }
        adamw_step(model, g, config, opt, ++step, freeze);
        rec.route_loss += loss.route;
        rec.expert_loss += loss.expert;
        rec.mixup_loss += loss.mixup;
        ++batches;
      }
    }
    rec.route_loss /= static_cast<double>(batches);
    rec.expert_loss /= static_cast<double>(batches);
    rec.mixup_loss /= static_cast<double>(batches);
    rec.router_accuracy = router_accuracy(model, val);
    const auto s = update_difficulty(model, val);
    std::vector<std::size_t> counts(model.num_classes, 0);
    for (auto l : val.labels) ++counts[l];
    double hits = 0.0;
    for (std::size_t c = 0; c < model.num_classes; ++c) hits += s[c] * static_cast<double>(counts[c]);
    rec.val_accuracy = hits / static_cast<double>(val.size());
    if (config.mixup) {
      loss_cfg.mixup_policy.s = s;
      rec.difficulty = s;
    }
    history.epochs.push_back(std::move(rec));
  }
  return history;
}

std::vector<double> knn_feature(const MoFEModel& model, std::span<const double> z, Route route,
                                BankFeature feature, ForwardResult* fwd) {
  ForwardResult r = mofe_forward(model, z, route);
  std::vector<double> out = feature == BankFeature::kPostLn ? r.f0 : r.z_out;
  if (fwd) *fwd = std::move(r);
  return out;
}

ExpertBanks build_expert_banks(const MoFEModel& model, const EmbeddingSet& train, std::size_t k,
                               BankFeature feature) {
  validate(train);
  const std::size_t e_count = model.num_experts();
  std::vector<std::vector<double>> feats(train.size());
  std::vector<std::uint32_t> owner(train.size());
  parallel_for(train.size(), [&](std::size_t i) {
    owner[i] = assign_expert(model.partition, train.labels[i]);
    feats[i] = unit_vector(knn_feature(model, train.features.row(i), Route::forced(owner[i]), feature));
  });
  ExpertBanks out;
  out.feature = feature;
  out.banks.resize(e_count);
  for (std::uint32_t e = 0; e < e_count; ++e) {
    std::size_t rows = 0;
    for (auto o : owner) rows += o == e;
    if (rows == 0) continue;
    if (k > rows)
      throw ValidationError("knn k = " + std::to_string(k) + " exceeds the " +
                            std::to_string(rows) + " bank rows of expert " + std::to_string(e));
    Matrix m(rows, model.dim);
    std::size_t r = 0;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (owner[i] == e) std::copy(feats[i].begin(), feats[i].end(), m.row(r++).begin());
    out.banks[e].emplace(std::move(m), k);
  }
  return out;
}

double mofe_ood_score(const MoFEModel& model, const ExpertBanks& banks,
                      std::span<const double> query) {
  ForwardResult fwd;
  const auto f = knn_feature(model, query, Route::predicted(), banks.feature, &fwd);
  const auto& bank = banks.banks.at(fwd.expert);
  if (!bank) throw ValidationError("routed expert " + std::to_string(fwd.expert) + " has an empty bank");
  return knn_score(unit_vector(f), *bank);
}

MofeScores mofe_ood_scores(const MoFEModel& model, const ExpertBanks& banks,
                           const Matrix& queries) {
  MofeScores out;
  out.scores.resize(queries.rows());
  out.predictions.resize(queries.rows());
  out.experts.resize(queries.rows());
  parallel_for(queries.rows(), [&](std::size_t i) {
    ForwardResult fwd;
    const auto f = knn_feature(model, queries.row(i), Route::predicted(), banks.feature, &fwd);
    const auto& bank = banks.banks.at(fwd.expert);
    if (!bank)
      throw ValidationError("query " + std::to_string(i) + " routed to expert " +
                            std::to_string(fwd.expert) + " which has an empty bank");
    out.scores[i] = knn_score(unit_vector(f), *bank);
    out.predictions[i] = predict_class(model, fwd);
    out.experts[i] = fwd.expert;
  });
  return out;
}

}  // namespace oodkit
