#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gtnrec/train.hpp"

namespace gtnrec {

/// Resolved run configuration: the JSON config file with any CLI flag
/// overrides already applied (flags win).
struct AppConfig {
  std::string dataset_name = "dataset";
  std::string ratings_path;
  std::string trust_path;
  std::string out_dir = ".";
  std::string splits_path;  // empty -> out_dir + "/splits.json"
  TrainConfig train;
  GridAxes grid;

  std::string resolved_splits_path() const {
    return splits_path.empty() ? out_dir + "/splits.json" : splits_path;
  }
};

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<std::string> out;
};

AppConfig load_config(const std::string& path, const CliOverrides& overrides = {});

/// Canonical JSON rendering of the resolved config; digest input.
std::string config_json(const AppConfig& config);

/// Loads both CSVs, prints dataset statistics, writes splits.json,
/// graph_stats.json and the run manifest into out_dir.
int cmd_ingest(const AppConfig& config, std::ostream& log);

/// Trains config.train.model and writes ckpt_best.bin + model.json (on
/// each validation improvement), history.csv and the run manifest into
/// out_dir. Requires the ingest artifacts (splits.json).
int cmd_train(const AppConfig& config, std::ostream& log);

/// Evaluates a finished run directory (checkpoint + manifest) on the test
/// split recorded in its manifest; writes report.json next to it.
int cmd_evaluate(const std::string& run_dir, std::ostream& log);

/// Grid search over config.grid; writes gridsearch.csv into out_dir.
int cmd_gridsearch(const AppConfig& config, std::ostream& log);

/// Merges report.json files into comparison.csv under out_dir. Reports
/// from different split digests are refused unless force is set.
int cmd_compare(const std::vector<std::string>& report_paths, const std::string& out_dir,
                bool force, std::ostream& log);

}  // namespace gtnrec
