// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "oodkit/error.hpp"
#include "oodkit/scoring.hpp"
#include "oodkit/space_partition.hpp"

namespace oodkit {

namespace {

template <class Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(name) + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(name) + ": " + e.what());
  }
}

}  // namespace

EvalReport evaluate_baseline(const Benchmark& bench, std::size_t knn_k, double tpr) {
  const auto bank = build_knn_bank(bench.id_train, knn_k);
  const auto id_scores = knn_scores(bench.id_val.features, bank);
  std::vector<NamedScores> ood;
  for (const auto& o : bench.ood_sets) ood.push_back({o.name, knn_scores(o.set.features, bank)});
  return evaluate(id_scores, ood, tpr);
}

ArmResult evaluate_mofe_arm(const Benchmark& bench, const ArmConfig& cfg, bool mixup, double tpr) {
  const auto protos = class_prototypes(bench.id_train);
  const auto seeds = hierarchy_seed_centroids(protos, bench.hierarchy, cfg.clusters);
  const auto partition = kmeans(protos, seeds, cfg.kmeans_max_iter, cfg.kmeans_tol);

  TrainConfig tc = cfg.train;
  tc.mixup = mixup;
  MoFEModel model = init_mofe(bench.id_train.dim(), cfg.hidden, partition, tc.seed);
  model.hyper.gate = tc.gate;
  ArmResult out;
  out.history = train_mofe(model, bench.id_train, bench.id_val, tc);
  out.router_accuracy = router_accuracy(model, bench.id_val);

  const auto banks = build_expert_banks(model, bench.id_train, cfg.knn_k, cfg.bank_feature);
  const auto id = mofe_ood_scores(model, banks, bench.id_val.features);
  std::vector<NamedScores> ood;
  for (const auto& o : bench.ood_sets)
    ood.push_back({o.name, mofe_ood_scores(model, banks, o.set.features).scores});
  out.report = evaluate(id.scores, ood, tpr, id_accuracy(id.predictions, bench.id_val.labels));
  return out;
}

AblationResult run_ablation(const Benchmark& bench, const ArmConfig& cfg) {
  AblationResult result;
  result.rows.push_back(
      {"Baseline", stage("baseline", [&] { return evaluate_baseline(bench, cfg.knn_k); })});
  result.rows.push_back(
      {"+ MoFE", stage("+MoFE", [&] { return evaluate_mofe_arm(bench, cfg, false).report; })});
  ArmConfig single = cfg;
  single.clusters = 1;
  result.rows.push_back(
      {"+ D-beta", stage("+D-beta", [&] { return evaluate_mofe_arm(bench, single, true).report; })});
  result.rows.push_back({"+ MoFE+D-beta", stage("+MoFE+D-beta", [&] {
                           return evaluate_mofe_arm(bench, cfg, true).report;
                         })});
  return result;
}

std::string ablation_to_json(const AblationResult& result) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : result.rows) {
    nlohmann::ordered_json r;
    r["setting"] = row.setting;
    r["report"] = nlohmann::ordered_json::parse(report_to_json(row.report));
    rows.push_back(std::move(r));
  }
  nlohmann::ordered_json j;
  j["format"] = "oodkit-ablation/1";
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string format_ablation(const AblationResult& result) {
  std::ostringstream out;
  if (result.rows.empty()) return "";
  const auto& sets = result.rows.front().report.per_ood_set;
  std::size_t width = 8;
  for (const auto& row : result.rows) width = std::max(width, row.setting.size());
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "Setting");
  out << buf;
  for (const auto& s : sets) {
    std::snprintf(buf, sizeof buf, "  %17s", s.name.c_str());
    out << buf;
  }
  out << "  " << "          Average\n";
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "");
  out << buf;
  for (std::size_t i = 0; i <= sets.size(); ++i) out << "     FPR95    AUROC";
  out << "\n";
  for (const auto& row : result.rows) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), row.setting.c_str());
    out << buf;
    for (const auto& s : row.report.per_ood_set) {
      std::snprintf(buf, sizeof buf, "  %8.2f %8.2f", 100.0 * s.fpr95, 100.0 * s.auroc);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %8.2f %8.2f\n", 100.0 * row.report.mean_fpr95,
                  100.0 * row.report.mean_auroc);
    out << buf;
  }
  return out.str();
}

}  // namespace oodkit
