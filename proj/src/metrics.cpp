#include "gtnrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <nlohmann/json.hpp>

#include "gtnrec/error.hpp"
#include "gtnrec/tape.hpp"

namespace gtnrec {

namespace {

void check_lengths(std::span<const double> pred, std::span<const double> targets,
                   const char* op) {
  if (pred.empty() || pred.size() != targets.size()) {
    fail(ErrorKind::contract, std::string(op) + ": need equal nonzero lengths, got " +
                                  std::to_string(pred.size()) + " and " +
                                  std::to_string(targets.size()));
  }
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> targets) {
  check_lengths(pred, targets, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - targets[i]);
  return acc / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> targets) {
  check_lengths(pred, targets, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - targets[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

MetricsValues score_pairs(Model& model, const SparseMatrix& adj_norm, const PairBatch& batch,
                          bool clamp) {
  Tape tape;
  Predictions fwd = model_forward(tape, model, adj_norm, {}, batch);
  const Tensor& p = tape.value(fwd.pred);
  std::vector<double> pred(p.data().begin(), p.data().end());
  if (clamp) {
    for (double& v : pred) v = std::clamp(v, 1.0, 5.0);
  }
  return MetricsValues{mae(pred, batch.targets), rmse(pred, batch.targets)};
}

MetricsReport evaluate(Model& model, const Graph& g, const std::vector<RatingRecord>& ratings,
                       std::span<const std::size_t> eval_indices,
                       const EvaluateOptions& options) {
  if (eval_indices.empty()) fail(ErrorKind::contract, "evaluate: empty rating set");
  PairBatch batch;
  batch.pairs.reserve(eval_indices.size());
  batch.targets.reserve(eval_indices.size());
  std::size_t cold = 0;
  for (std::size_t idx : eval_indices) {
    const RatingRecord& r = ratings[idx];
    std::uint32_t u = g.index.user_id(r.user);
    std::uint32_t i = g.index.item_id(r.item);
    if (u == NodeIndex::npos || i == NodeIndex::npos) {
      fail(ErrorKind::index, "evaluate: rating (" + r.user + ", " + r.item +
                                 ") references a node missing from the graph universe");
    }
    if (g.degrees[u] == 0.0 || g.degrees[i] == 0.0) ++cold;
    batch.pairs.emplace_back(u, i);
    batch.targets.push_back(r.rating);
  }
  SparseMatrix adj_norm = normalize_adjacency(g);
  MetricsValues values = score_pairs(model, adj_norm, batch, options.clamp);

  MetricsReport report;
  report.dataset = options.dataset;
  report.model = options.model_name.empty() ? model_kind(model) : options.model_name;
  report.seed = options.seed;
  report.n = batch.size();
  report.cold_pairs = cold;
  report.mae = values.mae;
  report.rmse = values.rmse;
  report.clamped = options.clamp;
  report.config_digest = options.config_digest;
  report.split_digest = options.split_digest;
  return report;
}

std::span<const ReferenceRow> reference_results() {
  static const ReferenceRow rows[] = {
      {"ciao", "pmf", 0.8184, 1.0581},      {"ciao", "neumf", 0.8052, 1.0439},
      {"ciao", "graphrec", 0.7834, 1.0090}, {"ciao", "gcn", 0.8270, 1.0605},
      {"ciao", "gtn", 0.7641, 0.9732},      {"epinions", "pmf", 0.9713, 1.1829},
      {"epinions", "neumf", 0.9072, 1.1411}, {"epinions", "graphrec", 0.8524, 1.1078},
      {"epinions", "gcn", 0.8956, 1.1680},  {"epinions", "gtn", 0.8436, 1.0139},
  };
  return rows;
}

namespace {

std::string csv_row(const std::string& dataset, const std::string& model,
                    const std::string& seed, std::size_t n, std::size_t cold, double mae_v,
                    double rmse_v, const std::string& config_digest,
                    const std::string& split_digest, const std::string& source) {
  char metrics[64];
  std::snprintf(metrics, sizeof(metrics), "%.6f,%.6f", mae_v, rmse_v);
  return dataset + "," + model + "," + seed + "," + std::to_string(n) + "," +
         std::to_string(cold) + "," + metrics + "," + config_digest + "," + split_digest +
         "," + source + "\n";
}

}  // namespace

std::string comparison_csv(std::span<const MetricsReport> reports) {
  if (reports.empty()) fail(ErrorKind::contract, "comparison_csv: no reports");
  std::string out =
      "dataset,model,seed,n,cold_pairs,mae,rmse,config_digest,split_digest,source\n";

  std::vector<const MetricsReport*> sorted;
  sorted.reserve(reports.size());
  for (const auto& r : reports) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const MetricsReport* a, const MetricsReport* b) {
                     return a->rmse < b->rmse;
                   });
  for (const MetricsReport* r : sorted) {
    out += csv_row(r->dataset, r->model, std::to_string(r->seed), r->n, r->cold_pairs,
                   r->mae, r->rmse, r->config_digest, r->split_digest, "run");
  }

  // Per-(dataset, model) means, in first-appearance order of the sorted rows
  std::vector<std::pair<std::string, std::string>> groups;
  std::map<std::pair<std::string, std::string>, std::vector<const MetricsReport*>> by_group;
  for (const MetricsReport* r : sorted) {
    auto key = std::make_pair(r->dataset, r->model);
    auto& bucket = by_group[key];
    if (bucket.empty()) groups.push_back(key);
    bucket.push_back(r);
  }
  for (const auto& key : groups) {
    const auto& bucket = by_group[key];
    if (bucket.size() < 2) continue;
    double mean_mae = 0.0, mean_rmse = 0.0;
    std::size_t n = 0, cold = 0;
    for (const MetricsReport* r : bucket) {
      mean_mae += r->mae;
      mean_rmse += r->rmse;
      n += r->n;
      cold += r->cold_pairs;
    }
    mean_mae /= static_cast<double>(bucket.size());
    mean_rmse /= static_cast<double>(bucket.size());
    out += csv_row(key.first, key.second, "mean", n, cold, mean_mae, mean_rmse,
                   bucket.front()->config_digest, bucket.front()->split_digest, "mean");
  }

  // Context rows from the published full-scale results, when the dataset
  // names line up
  for (const ReferenceRow& ref : reference_results()) {
    bool relevant = false;
    for (const auto& r : reports) {
      if (r.dataset == ref.dataset) {
        relevant = true;
        break;
      }
    }
    if (relevant) {
      out += csv_row(ref.dataset, ref.model, "-", 0, 0, ref.mae, ref.rmse, "-", "-",
                     "reported");
    }
  }
  return out;
}

std::string report_json(const MetricsReport& report) {
  nlohmann::json j;
  j["dataset"] = report.dataset;
  j["model"] = report.model;
  j["seed"] = report.seed;
  j["n"] = report.n;
  j["cold_pairs"] = report.cold_pairs;
  j["mae"] = report.mae;
  j["rmse"] = report.rmse;
  j["clamped"] = report.clamped;
  j["config_digest"] = report.config_digest;
  j["split_digest"] = report.split_digest;
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    MetricsReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n = j.at("n").get<std::size_t>();
    r.cold_pairs = j.at("cold_pairs").get<std::size_t>();
    r.mae = j.at("mae").get<double>();
    r.rmse = j.at("rmse").get<double>();
    r.clamped = j.at("clamped").get<bool>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.split_digest = j.at("split_digest").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, origin + ": not a metrics report: " + e.what());
  }
}

}  // namespace gtnrec
