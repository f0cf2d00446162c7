// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/synth_bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "oodkit/error.hpp"
#include "oodkit/rng.hpp"

namespace oodkit {

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (double& x : v) {
      x = rng.normal();
      sq += x * x;
    }
  } while (sq == 0.0);
  const double norm = std::sqrt(sq);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> offset_point(const std::vector<double>& base, double dist, Rng& rng) {
  auto dir = random_unit(base.size(), rng);
  for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = base[i] + dist * dir[i];
  return dir;
}

void fill_gaussian(std::span<double> out, const std::vector<double>& center, double stddev,
                   Rng& rng) {
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<double>(static_cast<float>(center[i] + stddev * rng.normal()));
}

std::string pad(std::size_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%02zu", v);
  return buf;
}

// OOD classes: per_group fresh class centers around each group center.
EmbeddingSet ood_set(const std::vector<std::vector<double>>& group_centers, std::size_t per_group,
                     const SyntheticSpec& spec, double stddev, const std::string& prefix,
                     Rng& rng) {
  std::vector<std::vector<double>> centers;
  for (const auto& g : group_centers)
    for (std::size_t j = 0; j < per_group; ++j) centers.push_back(offset_point(g, spec.class_offset, rng));
  EmbeddingSet set;
  set.features = Matrix(spec.ood_samples, spec.dim);
  set.labels.resize(spec.ood_samples);
  for (std::size_t i = 0; i < spec.ood_samples; ++i) {
    const std::size_t c = i % centers.size();
    set.labels[i] = static_cast<std::uint32_t>(c);
    fill_gaussian(set.features.row(i), centers[c], stddev, rng);
  }
  for (std::size_t c = 0; c < centers.size(); ++c) set.class_names.push_back(prefix + pad(c));
  return set;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (dim < 1 || num_superclasses < 1 || classes_per_superclass < 1 || samples_per_class < 1)
    throw ValidationError("synthetic spec counts must all be >= 1");
  if (!(superclass_radius > 0.0) || !(class_offset > 0.0) || !(noise_scale > 0.0))
    throw ValidationError("synthetic spec radius, offset and noise scale must be > 0");
  if (!difficulty.empty() && difficulty.size() != num_classes())
    throw ValidationError("difficulty list has " + std::to_string(difficulty.size()) +
                          " entries, expected " + std::to_string(num_classes()));
  for (double m : difficulty)
    if (!(m > 0.0)) throw ValidationError("difficulty multipliers must be > 0");
  if (difficulty.empty() && (!(ramp_low > 0.0) || ramp_low > ramp_high))
    throw ValidationError("difficulty ramp needs 0 < low <= high");
  if ((near_ood || far_ood) && ood_samples < 1)
    throw ValidationError("ood_samples must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ValidationError("val_fraction must lie in (0, 1)");
  if (samples_per_class < 2) throw ValidationError("samples_per_class must be >= 2 for the split");
}

std::vector<double> difficulty_ramp(std::size_t num_classes, double low, double high) {
  if (!(low > 0.0) || low > high) throw ValidationError("difficulty ramp needs 0 < low <= high");
  std::vector<double> out(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i)
    out[i] = num_classes == 1 ? low
                              : low + (high - low) * static_cast<double>(i) /
                                          static_cast<double>(num_classes - 1);
  return out;
}

Benchmark generate_benchmark(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t s_count = spec.num_superclasses, per = spec.classes_per_superclass;
  const std::size_t c_count = spec.num_classes(), d = spec.dim;
  Benchmark bench;

  if (!spec.difficulty.empty()) {
    bench.difficulty = spec.difficulty;
  } else {
    // Ramp ranks are interleaved across superclasses so that every
    // superclass holds both easy and hard classes.
    const auto ramp = difficulty_ramp(c_count, spec.ramp_low, spec.ramp_high);
    bench.difficulty.resize(c_count);
    for (std::size_t c = 0; c < c_count; ++c) bench.difficulty[c] = ramp[(c % per) * s_count + c / per];
  }

  Rng rng(spec.seed);
  std::vector<std::vector<double>> super_centers;
  for (std::size_t s = 0; s < s_count; ++s) {
    auto v = random_unit(d, rng);
    for (double& x : v) x *= spec.superclass_radius;
    super_centers.push_back(std::move(v));
  }
  bench.class_centers = Matrix(c_count, d);
  for (std::size_t c = 0; c < c_count; ++c) {
    const auto center = offset_point(super_centers[c / per], spec.class_offset, rng);
    std::copy(center.begin(), center.end(), bench.class_centers.row(c).begin());
  }

  EmbeddingSet all;
  all.features = Matrix(c_count * spec.samples_per_class, d);
  all.labels.resize(c_count * spec.samples_per_class);
  for (std::size_t c = 0; c < c_count; ++c) {
    const auto row = bench.class_centers.row(c);
    const std::vector<double> center(row.begin(), row.end());
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const std::size_t r = c * spec.samples_per_class + i;
      all.labels[r] = static_cast<std::uint32_t>(c);
      fill_gaussian(all.features.row(r), center, spec.noise_scale * bench.difficulty[c], rng);
    }
  }
  for (std::size_t c = 0; c < c_count; ++c)
    all.class_names.push_back("s" + pad(c / per) + "_c" + pad(c % per));
  all.id_tag = "synthetic-v1";

  auto [train, val] = split(all, spec.val_fraction, spec.seed);
  bench.id_train = std::move(train);
  bench.id_val = std::move(val);

  for (std::size_t s = 0; s < s_count; ++s) bench.hierarchy.superclass_names.push_back("super_" + pad(s));
  for (std::size_t c = 0; c < c_count; ++c)
    bench.hierarchy.superclass_of.push_back(static_cast<std::uint32_t>(c / per));

  const double mean_mult = std::accumulate(bench.difficulty.begin(), bench.difficulty.end(), 0.0) /
                           static_cast<double>(c_count);
  const double ood_std = spec.noise_scale * mean_mult;
  const std::size_t ood_per_group = std::max<std::size_t>(1, per / 2);
  if (spec.near_ood) {
    // Independent stream per OOD mode so enabling one does not perturb the other.
    Rng near_rng(spec.seed ^ 0x6e6561725f6f6f64ull);
    auto set = ood_set(super_centers, ood_per_group, spec, ood_std, "near_", near_rng);
    set.id_tag = "synthetic-v1/ood_near";
    bench.ood_sets.push_back({"ood_near", std::move(set)});
  }
  if (spec.far_ood) {
    Rng far_rng(spec.seed ^ 0x6661725f6f6f6421ull);
    std::vector<std::vector<double>> fresh;
    for (std::size_t s = 0; s < s_count; ++s) {
      auto v = random_unit(d, far_rng);
      for (double& x : v) x *= spec.superclass_radius;
      fresh.push_back(std::move(v));
    }
    auto set = ood_set(fresh, ood_per_group, spec, ood_std, "far_", far_rng);
    set.id_tag = "synthetic-v1/ood_far";
    bench.ood_sets.push_back({"ood_far", std::move(set)});
  }
  return bench;
}

SyntheticSpec spec_from_json(const std::string& text) {
  SyntheticSpec spec;
  try {
    const auto j = nlohmann::json::parse(text);
    static const char* known[] = {"dim", "num_superclasses", "classes_per_superclass",
                                  "samples_per_class", "superclass_radius", "class_offset",
                                  "noise_scale", "difficulty_profile", "ood_modes",
                                  "ood_samples", "seed", "val_fraction"};
    for (const auto& [key, value] : j.items())
      if (std::find(std::begin(known), std::end(known), key) == std::end(known))
        throw ValidationError("unknown synthetic spec field '" + key + "'");
    spec.dim = j.value("dim", spec.dim);
    spec.num_superclasses = j.value("num_superclasses", spec.num_superclasses);
    spec.classes_per_superclass = j.value("classes_per_superclass", spec.classes_per_superclass);
    spec.samples_per_class = j.value("samples_per_class", spec.samples_per_class);
    spec.superclass_radius = j.value("superclass_radius", spec.superclass_radius);
    spec.class_offset = j.value("class_offset", spec.class_offset);
    spec.noise_scale = j.value("noise_scale", spec.noise_scale);
    spec.ood_samples = j.value("ood_samples", spec.ood_samples);
    spec.seed = j.value("seed", spec.seed);
    spec.val_fraction = j.value("val_fraction", spec.val_fraction);
    if (j.contains("difficulty_profile")) {
      const auto& p = j.at("difficulty_profile");
      if (p.is_array()) {
        spec.difficulty = p.get<std::vector<double>>();
      } else if (p.is_object() && p.contains("linear_ramp")) {
        const auto r = p.at("linear_ramp").get<std::vector<double>>();
        if (r.size() != 2) throw ValidationError("linear_ramp needs [low, high]");
        spec.ramp_low = r[0];
        spec.ramp_high = r[1];
      } else {
        throw ValidationError("difficulty_profile must be a list or {\"linear_ramp\": [low, high]}");
      }
    }
    if (j.contains("ood_modes")) {
      spec.near_ood = spec.far_ood = false;
      for (const auto& m : j.at("ood_modes").get<std::vector<std::string>>()) {
        if (m == "near")
          spec.near_ood = true;
        else if (m == "far")
          spec.far_ood = true;
        else
          throw ValidationError("unknown ood mode '" + m + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid synthetic spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string spec_to_json(const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["dim"] = spec.dim;
  j["num_superclasses"] = spec.num_superclasses;
  j["classes_per_superclass"] = spec.classes_per_superclass;
  j["samples_per_class"] = spec.samples_per_class;
  j["superclass_radius"] = spec.superclass_radius;
  j["class_offset"] = spec.class_offset;
  j["noise_scale"] = spec.noise_scale;
  if (spec.difficulty.empty())
    j["difficulty_profile"] = {{"linear_ramp", {spec.ramp_low, spec.ramp_high}}};
  else
    j["difficulty_profile"] = spec.difficulty;
  auto modes = nlohmann::ordered_json::array();
  if (spec.near_ood) modes.push_back("near");
  if (spec.far_ood) modes.push_back("far");
  j["ood_modes"] = modes;
  j["ood_samples"] = spec.ood_samples;
  j["seed"] = spec.seed;
  j["val_fraction"] = spec.val_fraction;
  return j.dump(2) + "\n";
}

void write_benchmark(const Benchmark& bench, const std::filesystem::path& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create directory " + outdir.string() + ": " + ec.message());
  save_embeddings(bench.id_train, outdir / "id_train.emb");
  save_embeddings(bench.id_val, outdir / "id_val.emb");
  for (const auto& o : bench.ood_sets) save_embeddings(o.set, outdir / (o.name + ".emb"));
  save_hierarchy(bench.hierarchy, outdir / "hierarchy.json");
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
  Benchmark bench;
  bench.id_train = load_embeddings(dir / "id_train.emb");
  bench.id_val = load_embeddings(dir / "id_val.emb");
  for (const char* name : {"ood_near", "ood_far"}) {
    const auto path = dir / (std::string(name) + ".emb");
    if (std::filesystem::exists(path)) bench.ood_sets.push_back({name, load_embeddings(path)});
  }
  if (bench.ood_sets.empty()) throw IoError("no ood_*.emb files in " + dir.string());
  bench.hierarchy = load_hierarchy(dir / "hierarchy.json");
  validate(bench.hierarchy, bench.id_train.num_classes());
  return bench;
}

}  // namespace oodkit
