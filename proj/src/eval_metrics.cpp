// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include "oodkit/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "oodkit/error.hpp"

namespace oodkit {

namespace {

void require_scores(std::span<const double> scores, const char* which) {
  if (scores.empty()) throw ValidationError(std::string(which) + " score list is empty");
  for (double s : scores)
    if (!std::isfinite(s))
      throw ValidationError(std::string(which) + " score list has a non-finite entry");
}

}  // namespace

FprResult fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                     double tpr_target) {
  require_scores(id_scores, "ID");
  require_scores(ood_scores, "OOD");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0))
    throw ValidationError("tpr target must lie in (0, 1], got " + std::to_string(tpr_target));
  const std::size_t n = id_scores.size();
  auto rank = static_cast<std::size_t>(std::ceil(tpr_target * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);

  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(sorted.begin(), nth, sorted.end(), std::greater<>());
  const double threshold = *nth;

  std::size_t false_pos = 0;
  for (double s : ood_scores)
    if (s >= threshold) ++false_pos;
  return {static_cast<double>(false_pos) / static_cast<double>(ood_scores.size()), threshold};
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_scores(id_scores, "ID");
  require_scores(ood_scores, "OOD");
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end());
  // Twice the win count, so tie credit stays an integer.
  std::uint64_t twice_wins = 0;
  for (double s : id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(lo, ood.end(), s);
    twice_wins += 2 * static_cast<std::uint64_t>(lo - ood.begin()) +
                  static_cast<std::uint64_t>(hi - lo);
  }
  const double pairs = static_cast<double>(id_scores.size()) * static_cast<double>(ood.size());
  return static_cast<double>(twice_wins) / (2.0 * pairs);
}

double id_accuracy(std::span<const std::uint32_t> predictions,
                   std::span<const std::uint32_t> labels) {
  if (predictions.size() != labels.size())
    throw ValidationError("prediction count " + std::to_string(predictions.size()) +
                          " does not match label count " + std::to_string(labels.size()));
  if (labels.empty()) throw ValidationError("no predictions to score");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<double> per_class_accuracy(std::span<const std::uint32_t> predictions,
                                       std::span<const std::uint32_t> labels,
                                       std::size_t num_classes) {
  if (predictions.size() != labels.size())
    throw ValidationError("prediction count " + std::to_string(predictions.size()) +
                          " does not match label count " + std::to_string(labels.size()));
  std::vector<std::size_t> correct(num_classes, 0), count(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes)
      throw ValidationError("label " + std::to_string(labels[i]) + " is not < " +
                            std::to_string(num_classes));
    ++count[labels[i]];
    correct[labels[i]] += predictions[i] == labels[i];
  }
  std::vector<double> s(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (count[c] > 0) s[c] = static_cast<double>(correct[c]) / static_cast<double>(count[c]);
  return s;
}

EvalReport evaluate(std::span<const double> id_scores, const std::vector<NamedScores>& ood_sets,
                    double tpr_target, std::optional<double> id_acc) {
  if (ood_sets.empty()) throw ValidationError("at least one OOD score set is required");
  EvalReport report;
  report.tpr_target = tpr_target;
  report.id_accuracy = id_acc;
  for (const auto& set : ood_sets) {
    const auto fpr = fpr_at_tpr(id_scores, set.scores, tpr_target);
    report.per_ood_set.push_back({set.name, fpr.fpr, auroc(id_scores, set.scores), fpr.threshold});
  }
  double f = 0.0, a = 0.0;
  for (const auto& r : report.per_ood_set) {
    f += r.fpr95;
    a += r.auroc;
  }
  report.mean_fpr95 = f / static_cast<double>(report.per_ood_set.size());
  report.mean_auroc = a / static_cast<double>(report.per_ood_set.size());
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["format"] = "oodkit-eval-report/1";
  j["tpr_target"] = report.tpr_target;
  j["id_accuracy"] = report.id_accuracy ? nlohmann::ordered_json(*report.id_accuracy)
                                        : nlohmann::ordered_json(nullptr);
  auto sets = nlohmann::ordered_json::array();
  for (const auto& r : report.per_ood_set) {
    nlohmann::ordered_json e;
    e["name"] = r.name;
    e["fpr95"] = r.fpr95;
    e["auroc"] = r.auroc;
    e["threshold"] = r.threshold;
    sets.push_back(std::move(e));
  }
  j["per_ood_set"] = std::move(sets);
  j["average"] = {{"fpr95", report.mean_fpr95}, {"auroc", report.mean_auroc}};
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  EvalReport report;
  try {
    const auto j = nlohmann::json::parse(text);
    report.tpr_target = j.at("tpr_target").get<double>();
    if (!j.at("id_accuracy").is_null()) report.id_accuracy = j.at("id_accuracy").get<double>();
    for (const auto& e : j.at("per_ood_set"))
      report.per_ood_set.push_back({e.at("name").get<std::string>(), e.at("fpr95").get<double>(),
                                    e.at("auroc").get<double>(), e.at("threshold").get<double>()});
    report.mean_fpr95 = j.at("average").at("fpr95").get<double>();
    report.mean_auroc = j.at("average").at("auroc").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid report JSON: ") + e.what());
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::size_t width = 7;
  for (const auto& r : report.per_ood_set) width = std::max(width, r.name.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %8s  %8s\n", static_cast<int>(width), "OOD set",
                "FPR95", "AUROC");
  out << line;
  for (const auto& r : report.per_ood_set) {
    std::snprintf(line, sizeof line, "%-*s  %8.2f  %8.2f\n", static_cast<int>(width),
                  r.name.c_str(), 100.0 * r.fpr95, 100.0 * r.auroc);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-*s  %8.2f  %8.2f\n", static_cast<int>(width), "Average",
                100.0 * report.mean_fpr95, 100.0 * report.mean_auroc);
  out << line;
  if (report.id_accuracy) {
    std::snprintf(line, sizeof line, "ID accuracy: %.2f\n", 100.0 * *report.id_accuracy);
    out << line;
  }
  return out.str();
}

}  // namespace oodkit
