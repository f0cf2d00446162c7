// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oodkit/oodkit.h"

namespace {

// Exit codes: 0 ok, 1 validation (bad flags or data), 2 runtime (I/O, format, numeric).
class Failure : public std::exception {
 public:
  Failure(int code, std::string msg) : code_(code), msg_(std::move(msg)) {}
  int code() const noexcept { return code_; }
  const char* what() const noexcept override { return msg_.c_str(); }

 private:
  int code_;
  std::string msg_;
};

void check(oodkit_status st, const std::string& context) {
  if (st == OODKIT_OK) return;
  const int code = st == OODKIT_ERR_INVALID ? 1 : 2;
  throw Failure(code, context + ": " + oodkit_last_error());
}

[[noreturn]] void invalid(const std::string& msg) { throw Failure(1, msg); }

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Embeddings = std::unique_ptr<oodkit_embeddings, Deleter<oodkit_embeddings, oodkit_embeddings_free>>;
using Hierarchy = std::unique_ptr<oodkit_hierarchy, Deleter<oodkit_hierarchy, oodkit_hierarchy_free>>;
using Partition = std::unique_ptr<oodkit_partition, Deleter<oodkit_partition, oodkit_partition_free>>;
using Model = std::unique_ptr<oodkit_model, Deleter<oodkit_model, oodkit_model_free>>;
using CString = std::unique_ptr<char, Deleter<char, oodkit_string_free>>;

Embeddings load_set(const std::string& path) {
  oodkit_embeddings* raw = nullptr;
  check(oodkit_embeddings_load(path.c_str(), &raw), path);
  return Embeddings(raw);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure(2, "cannot open for writing: " + path);
  out << text;
  if (!out) throw Failure(2, "write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure(2, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_scores(const std::string& path, const std::vector<double>& scores) {
  std::string text = "index,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) text += std::to_string(i) + "," + fmt(scores[i]) + "\n";
  write_file(path, text);
}

// Reads an index,<column> CSV written by this tool.
std::vector<std::string> read_column(const std::string& path, const std::string& column) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw Failure(2, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "index," + column) throw Failure(2, path + ": expected header 'index," + column + "'");
  std::vector<std::string> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw Failure(2, path + ": parse error at line " + std::to_string(lineno));
    if (line.substr(0, comma) != std::to_string(out.size()))
      throw Failure(2, path + ": index out of sequence at line " + std::to_string(lineno));
    out.push_back(line.substr(comma + 1));
  }
  return out;
}

std::vector<double> read_scores(const std::string& path) {
  std::vector<double> out;
  std::size_t row = 0;
  for (const auto& cell : read_column(path, "score")) {
    ++row;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || *end != '\0' || errno == ERANGE)
      throw Failure(2, path + ": bad score at line " + std::to_string(row + 1));
    out.push_back(v);
  }
  return out;
}

std::vector<std::uint32_t> read_predictions(const std::string& path) {
  std::vector<std::uint32_t> out;
  std::size_t row = 0;
  for (const auto& cell : read_column(path, "prediction")) {
    ++row;
    char* end = nullptr;
    const unsigned long v = std::strtoul(cell.c_str(), &end, 10);
    if (cell.empty() || *end != '\0' || v > 0xffffffffUL)
      throw Failure(2, path + ": bad prediction at line " + std::to_string(row + 1));
    out.push_back(static_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void add_train_flags(CLI::App* cmd, oodkit_train_options& t, std::string* mixup, std::string& reg,
                     std::string& gate) {
  cmd->add_option("--hidden", t.hidden, "Expert hidden width")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--warmup", t.warmup_epochs, "Epochs that train only the router and heads")->capture_default_str();
  cmd->add_option("--lr", t.lr, "Peak learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--wd", t.weight_decay, "AdamW weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--batch", t.batch_size, "Batch size (even)")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--seed", t.seed, "Random seed")->capture_default_str();
  if (mixup)
    cmd->add_option("--mixup", *mixup, "Dynamic-beta mixup")->capture_default_str()->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--mixup-w", t.mixup_w, "Difficulty weight w in sigma = 1 - w*s")->capture_default_str();
  cmd->add_option("--mixup-sigma-min", t.mixup_sigma_min, "Lower clamp for sigma")->capture_default_str();
  cmd->add_option("--reg", reg, "Mixup regularizer")->capture_default_str()->check(CLI::IsMember({"l2", "smooth"}));
  cmd->add_option("--reg-weight", t.reg_weight, "L2 weight or smoothing epsilon")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--gate", gate, "Expert output gating")->capture_default_str()->check(CLI::IsMember({"scaled", "unscaled"}));
  cmd->add_flag("--stop-gate", t.stop_gate, "Block expert-loss gradients through the gate");
}

void finish_train_flags(oodkit_train_options& t, const std::string& mixup, const std::string& reg,
                        const std::string& gate) {
  t.mixup = mixup == "on";
  t.reg = reg == "smooth" ? OODKIT_REG_SMOOTH : OODKIT_REG_L2;
  t.gate = gate == "unscaled" ? OODKIT_GATE_UNSCALED : OODKIT_GATE_SCALED;
  if (t.batch_size % 2 != 0) invalid("--batch must be even");
}

int run(int argc, char** argv) {
  CLI::App app{"oodkit: out-of-distribution detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", oodkit_version());

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
  std::string spec_path, outdir;
  synth->add_option("--spec", spec_path, "Benchmark spec JSON (default spec if omitted)");
  synth->add_option("--outdir", outdir, "Output directory")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert a CSV file to the binary embedding format");
  std::string ingest_in, ingest_out, ingest_val_out;
  bool ingest_header = false;
  double ingest_val_fraction = 0.0;
  std::uint64_t ingest_seed = 0;
  ingest->add_option("--input", ingest_in, "CSV with the label in the last column")->required();
  ingest->add_option("--output", ingest_out, "Output .emb (training part when splitting)")->required();
  ingest->add_flag("--header", ingest_header, "Skip the first row");
  auto* vf = ingest->add_option("--val-fraction", ingest_val_fraction, "Stratified validation share")
                 ->check(CLI::Range(0.0, 1.0));
  auto* vo = ingest->add_option("--val-output", ingest_val_out, "Output .emb for the validation part");
  vf->needs(vo);
  vo->needs(vf);
  ingest->add_option("--seed", ingest_seed, "Split seed")->capture_default_str();

  // partition
  auto* part = app.add_subcommand("partition", "Hierarchy-seeded K-Means over class prototypes");
  std::string part_in, part_h, part_out;
  std::size_t part_k = 5, part_iter = 100;
  double part_tol = 1e-6;
  part->add_option("--input", part_in, "Training embeddings")->required();
  part->add_option("--hierarchy", part_h, "Semantic hierarchy JSON")->required();
  part->add_option("--k", part_k, "Number of clusters")->capture_default_str()->check(CLI::PositiveNumber);
  part->add_option("--max-iter", part_iter, "Lloyd iteration cap")->capture_default_str();
  part->add_option("--tol", part_tol, "Inertia improvement threshold")->capture_default_str()->check(CLI::NonNegativeNumber);
  part->add_option("--output", part_out, "Output partition JSON")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a MoFE layer");
  oodkit_train_options topts;
  oodkit_train_options_init(&topts);
  std::string train_in, val_in, train_part, train_out, train_hist;
  std::string t_mixup = "off", t_reg = "l2", t_gate = "scaled";
  train->add_option("--train", train_in, "Training embeddings")->required();
  train->add_option("--val", val_in, "Validation embeddings")->required();
  train->add_option("--partition", train_part, "Partition JSON")->required();
  train->add_option("--output", train_out, "Output model file")->required();
  train->add_option("--history", train_hist, "Optional per-epoch history JSON");
  add_train_flags(train, topts, &t_mixup, t_reg, t_gate);

  // score
  auto* score = app.add_subcommand("score", "Post-hoc OOD scores");
  std::string metric, score_bank, score_in, score_out;
  double temperature = 1.0;
  std::size_t score_k = 10;
  score->add_option("--metric", metric, "Score function")->required()->check(
      CLI::IsMember({"msp", "maxlogit", "energy", "knn"}));
  score->add_option("--temperature", temperature, "Energy temperature")->capture_default_str()->check(CLI::PositiveNumber);
  score->add_option("--k", score_k, "KNN neighbour rank")->capture_default_str()->check(CLI::PositiveNumber);
  score->add_option("--bank", score_bank, "KNN bank embeddings (knn only)");
  score->add_option("--input", score_in, "Query embeddings, or logit rows for msp/maxlogit/energy")->required();
  score->add_option("--output", score_out, "Output scores CSV")->required();

  // mofe-score
  auto* mscore = app.add_subcommand("mofe-score", "Subspace KNN scores through a trained MoFE");
  std::string ms_model, ms_bank, ms_in, ms_out, ms_pred, ms_feature = "post";
  std::size_t ms_k = 10;
  mscore->add_option("--model", ms_model, "Model file")->required();
  mscore->add_option("--bank-src", ms_bank, "Embeddings used to build the per-expert banks")->required();
  mscore->add_option("--input", ms_in, "Query embeddings")->required();
  mscore->add_option("--k", ms_k, "KNN neighbour rank")->capture_default_str()->check(CLI::PositiveNumber);
  mscore->add_option("--bank-feature", ms_feature, "KNN on features after (post) or before (pre) the final layer norm")
      ->capture_default_str()
      ->check(CLI::IsMember({"post", "pre"}));
  mscore->add_option("--output", ms_out, "Output scores CSV")->required();
  mscore->add_option("--predictions", ms_pred, "Optional class predictions CSV");

  // eval
  auto* eval = app.add_subcommand("eval", "FPR at fixed TPR and AUROC");
  std::string id_scores, ood_scores, eval_out, id_pred, id_labels;
  double tpr = 0.95;
  eval->add_option("--id-scores", id_scores, "ID scores CSV")->required();
  eval->add_option("--ood-scores", ood_scores, "Comma-separated OOD score CSVs")->required();
  eval->add_option("--tpr", tpr, "Target true-positive rate")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  eval->add_option("--output", eval_out, "Output report JSON")->required();
  auto* ip = eval->add_option("--id-predictions", id_pred, "Class predictions CSV for the ID set");
  auto* il = eval->add_option("--id-labels", id_labels, "Embeddings holding the ID labels");
  ip->needs(il);
  il->needs(ip);

  // mixup-demo
  auto* demo = app.add_subcommand("mixup-demo", "Monte-Carlo statistics of the folded mixup weight");
  std::string grid = "0.05,0.1,0.5,1.0", demo_out;
  std::size_t draws = 1000000;
  std::uint64_t demo_seed = 0;
  demo->add_option("--sigma-grid", grid, "Comma-separated sigma values")->capture_default_str();
  demo->add_option("--draws", draws, "Draws per sigma")->capture_default_str()->check(CLI::PositiveNumber);
  demo->add_option("--seed", demo_seed, "Random seed")->capture_default_str();
  demo->add_option("--output", demo_out, "Output CSV")->required();

  // report
  auto* report = app.add_subcommand("report", "Render a report JSON as a text table");
  std::string rep_in, rep_out;
  report->add_option("--input", rep_in, "Report JSON")->required();
  report->add_option("--output", rep_out, "Output text file (stdout if omitted)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Four-arm component ablation on a benchmark");
  oodkit_ablate_options aopts;
  oodkit_ablate_options_init(&aopts);
  std::string bench, abl_out, abl_table;
  std::string a_mixup = "on", a_reg = "l2", a_gate = "scaled";
  ablate->add_option("--bench", bench, "Benchmark directory written by synth")->required();
  ablate->add_option("--k", aopts.clusters, "Clusters for the MoFE arms")->capture_default_str()->check(CLI::PositiveNumber);
  ablate->add_option("--knn-k", aopts.knn_k, "KNN neighbour rank")->capture_default_str()->check(CLI::PositiveNumber);
  ablate->add_option("--output", abl_out, "Output ablation JSON")->required();
  ablate->add_option("--table", abl_table, "Output text table (stdout if omitted)");
  add_train_flags(ablate, aopts.train, nullptr, a_reg, a_gate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*synth) {
    std::string spec = "{}";
    if (!spec_path.empty()) spec = read_file(spec_path);
    std::error_code ec;
    std::filesystem::create_directories(outdir, ec);
    if (ec) throw Failure(2, "cannot create " + outdir + ": " + ec.message());
    check(oodkit_synth_write(spec.c_str(), outdir.c_str()), "synth");
  } else if (*ingest) {
    oodkit_embeddings* raw = nullptr;
    check(oodkit_embeddings_ingest_csv(ingest_in.c_str(), ingest_header, &raw), ingest_in);
    Embeddings set(raw);
    if (ingest_val_out.empty()) {
      check(oodkit_embeddings_save(set.get(), ingest_out.c_str()), ingest_out);
    } else {
      oodkit_embeddings *tr = nullptr, *va = nullptr;
      check(oodkit_embeddings_split(set.get(), ingest_val_fraction, ingest_seed, &tr, &va), "split");
      Embeddings t(tr), v(va);
      check(oodkit_embeddings_save(t.get(), ingest_out.c_str()), ingest_out);
      check(oodkit_embeddings_save(v.get(), ingest_val_out.c_str()), ingest_val_out);
    }
  } else if (*part) {
    auto set = load_set(part_in);
    oodkit_hierarchy* h = nullptr;
    check(oodkit_hierarchy_load(part_h.c_str(), &h), part_h);
    Hierarchy hier(h);
    oodkit_partition* p = nullptr;
    check(oodkit_partition_build(set.get(), hier.get(), part_k, part_iter, part_tol, &p), "partition");
    Partition pm(p);
    check(oodkit_partition_save(pm.get(), part_out.c_str()), part_out);
  } else if (*train) {
    finish_train_flags(topts, t_mixup, t_reg, t_gate);
    auto tr = load_set(train_in);
    auto va = load_set(val_in);
    oodkit_partition* p = nullptr;
    check(oodkit_partition_load(train_part.c_str(), &p), train_part);
    Partition pm(p);
    oodkit_model* m = nullptr;
    char* hist = nullptr;
    check(oodkit_mofe_train(tr.get(), va.get(), pm.get(), &topts, &m, train_hist.empty() ? nullptr : &hist),
          "train");
    Model model(m);
    CString h(hist);
    check(oodkit_model_save(model.get(), train_out.c_str()), train_out);
    if (h) write_file(train_hist, h.get());
  } else if (*score) {
    if (metric == "knn" && score_bank.empty()) invalid("--bank is required for --metric knn");
    auto q = load_set(score_in);
    std::vector<double> s(oodkit_embeddings_rows(q.get()));
    if (metric == "knn") {
      auto bank = load_set(score_bank);
      check(oodkit_score_knn(bank.get(), score_k, q.get(), s.data(), s.size()), "score");
    } else {
      const oodkit_metric m = metric == "msp"        ? OODKIT_METRIC_MSP
                              : metric == "maxlogit" ? OODKIT_METRIC_MAXLOGIT
                                                     : OODKIT_METRIC_ENERGY;
      check(oodkit_score_logits(q.get(), m, temperature, s.data(), s.size()), "score");
    }
    write_scores(score_out, s);
  } else if (*mscore) {
    oodkit_model* m = nullptr;
    check(oodkit_model_load(ms_model.c_str(), &m), ms_model);
    Model model(m);
    auto bank = load_set(ms_bank);
    auto q = load_set(ms_in);
    const std::size_t n = oodkit_embeddings_rows(q.get());
    std::vector<double> s(n);
    std::vector<std::uint32_t> pred(n);
    check(oodkit_mofe_score(model.get(), bank.get(), ms_k,
                            ms_feature == "pre" ? OODKIT_BANK_PRE_LN : OODKIT_BANK_POST_LN, q.get(),
                            s.data(), pred.data(), n),
          "mofe-score");
    write_scores(ms_out, s);
    if (!ms_pred.empty()) {
      std::string text = "index,prediction\n";
      for (std::size_t i = 0; i < n; ++i) text += std::to_string(i) + "," + std::to_string(pred[i]) + "\n";
      write_file(ms_pred, text);
    }
  } else if (*eval) {
    const auto id = read_scores(id_scores);
    std::vector<std::string> names;
    std::vector<std::vector<double>> sets;
    for (const auto& path : split_list(ood_scores)) {
      if (path.empty()) invalid("--ood-scores has an empty entry");
      names.push_back(std::filesystem::path(path).stem().string());
      sets.push_back(read_scores(path));
    }
    std::vector<const char*> name_ptrs;
    std::vector<const double*> set_ptrs;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      name_ptrs.push_back(names[i].c_str());
      set_ptrs.push_back(sets[i].data());
      counts.push_back(sets[i].size());
    }
    std::vector<std::uint32_t> preds, labels;
    if (!id_pred.empty()) {
      preds = read_predictions(id_pred);
      auto lab = load_set(id_labels);
      labels.resize(oodkit_embeddings_rows(lab.get()));
      check(oodkit_embeddings_labels(lab.get(), labels.data(), labels.size()), id_labels);
      if (preds.size() != id.size() || labels.size() != id.size())
        invalid("--id-predictions and --id-labels must have one row per ID score");
    }
    char* json = nullptr;
    check(oodkit_eval_report(id.data(), id.size(), sets.size(), name_ptrs.data(), set_ptrs.data(),
                             counts.data(), tpr, preds.empty() ? nullptr : preds.data(),
                             preds.empty() ? nullptr : labels.data(), &json),
          "eval");
    CString j(json);
    write_file(eval_out, j.get());
  } else if (*demo) {
    std::vector<double> sigmas;
    for (const auto& tok : split_list(grid)) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (tok.empty() || *end != '\0') invalid("--sigma-grid: cannot parse '" + tok + "'");
      sigmas.push_back(v);
    }
    if (sigmas.empty()) invalid("--sigma-grid is empty");
    std::vector<double> means(sigmas.size()), vars(sigmas.size());
    check(oodkit_lambda_stats(sigmas.data(), sigmas.size(), draws, demo_seed, means.data(), vars.data()),
          "mixup-demo");
    std::string text = "sigma,mean,variance\n";
    for (std::size_t i = 0; i < sigmas.size(); ++i)
      text += fmt(sigmas[i]) + "," + fmt(means[i]) + "," + fmt(vars[i]) + "\n";
    write_file(demo_out, text);
  } else if (*report) {
    const auto json = read_file(rep_in);
    char* text = nullptr;
    check(oodkit_report_format(json.c_str(), &text), rep_in);
    CString t(text);
    if (rep_out.empty())
      std::cout << t.get();
    else
      write_file(rep_out, t.get());
  } else if (*ablate) {
    finish_train_flags(aopts.train, a_mixup, a_reg, a_gate);
    char *json = nullptr, *table = nullptr;
    check(oodkit_ablate(bench.c_str(), &aopts, &json, &table), "ablate");
    CString j(json), t(table);
    write_file(abl_out, j.get());
    if (abl_table.empty())
      std::cout << t.get();
    else
      write_file(abl_table, t.get());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Failure& f) {
    std::cerr << "oodkit: " << f.what() << "\n";
    return f.code();
  } catch (const std::exception& e) {
    std::cerr << "oodkit: " << e.what() << "\n";
    return 2;
  }
}
