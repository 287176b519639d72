#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gtnrec/graph.hpp"
#include "gtnrec/model.hpp"

namespace gtnrec {

/// Mean absolute error. Inputs must be equal-length and nonempty.
double mae(std::span<const double> pred, std::span<const double> targets);

/// Root mean squared error. Same contract as mae; always >= mae.
double rmse(std::span<const double> pred, std::span<const double> targets);

struct MetricsValues {
  double mae = 0.0;
  double rmse = 0.0;
};

/// Inference-mode scoring of a pair batch against a prepared normalized
/// adjacency (no gradients are consumed). Optionally clamps predictions
/// to the [1, 5] rating scale first.
MetricsValues score_pairs(Model& model, const SparseMatrix& adj_norm, const PairBatch& batch,
                          bool clamp);

/// One evaluation run over a held-out rating set, plus the provenance
/// needed to line rows up across models and seeds.
struct MetricsReport {
  std::string dataset;
  std::string model;
  std::uint64_t seed = 0;
  std::size_t n = 0;           // evaluated rating count
  std::size_t cold_pairs = 0;  // pairs touching a node with no train edges
  double mae = 0.0;
  double rmse = 0.0;
  bool clamped = false;
  std::string config_digest;
  std::string split_digest;
};

struct EvaluateOptions {
  bool clamp = false;
  std::string dataset;
  std::string model_name;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string split_digest;
};

/// Scores the given rating indices (typically the test split) on the full
/// graph. Cold nodes are scored from their initialized embeddings and
/// counted, never rejected.
MetricsReport evaluate(Model& model, const Graph& g, const std::vector<RatingRecord>& ratings,
                       std::span<const std::size_t> eval_indices,
                       const EvaluateOptions& options = {});

/// Published full-scale results kept for context columns in comparison
/// tables; these are reported values, not something a desk-scale run is
/// expected to reproduce.
struct ReferenceRow {
  std::string dataset;
  std::string model;
  double mae;
  double rmse;
};
std::span<const ReferenceRow> reference_results();

/// Comparison table: one row per report sorted by RMSE ascending, then
/// per-(dataset, model) mean rows, then any matching reference rows.
/// Metric columns use %.6f.
std::string comparison_csv(std::span<const MetricsReport> reports);

std::string report_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text, const std::string& origin);

}  // namespace gtnrec
