#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gtnrec/commands.hpp"
#include "gtnrec/error.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<std::string> out;

  gtnrec::AppConfig load() const {
    gtnrec::CliOverrides overrides;
    overrides.seed = seed;
    overrides.model = model;
    overrides.out = out;
    return gtnrec::load_config(config_path, overrides);
  }
};

void attach_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config_path, "JSON run configuration");
  if (config_required) opt->required();
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&flags](std::uint64_t v) { flags.seed = v; }, "override the config seed");
  cmd->add_option_function<std::string>(
         "--model", [&flags](const std::string& v) { flags.model = v; },
         "override the model kind")
      ->check(CLI::IsMember({"gtn", "gcn", "pmf"}));
  cmd->add_option_function<std::string>(
      "--out", [&flags](const std::string& v) { flags.out = v; },
      "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"social rating prediction with graph convolution + transformer encoders"};
  app.require_subcommand(1);

  CommonFlags ingest_flags, train_flags, grid_flags;
  std::string eval_run_dir;
  std::vector<std::string> compare_reports;
  std::string compare_out = ".";
  bool compare_force = false;

  CLI::App* ingest = app.add_subcommand("ingest", "load CSVs, print statistics, write splits");
  attach_common(ingest, ingest_flags, true);

  CLI::App* train = app.add_subcommand("train", "train a model against the ingested split");
  attach_common(train, train_flags, true);

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a run directory on its test split");
  evaluate->add_option("run_dir", eval_run_dir, "directory written by `train`")->required();

  CLI::App* gridsearch = app.add_subcommand("gridsearch", "train every config in the grid");
  attach_common(gridsearch, grid_flags, true);

  CLI::App* compare = app.add_subcommand("compare", "merge report.json files into a table");
  compare->add_option("reports", compare_reports, "report.json paths")->required();
  compare->add_option("--out", compare_out, "output directory for comparison.csv");
  compare->add_flag("--force", compare_force, "merge reports from different splits");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return gtnrec::cmd_ingest(ingest_flags.load(), std::cout);
    if (train->parsed()) return gtnrec::cmd_train(train_flags.load(), std::cout);
    if (evaluate->parsed()) return gtnrec::cmd_evaluate(eval_run_dir, std::cout);
    if (gridsearch->parsed()) return gtnrec::cmd_gridsearch(grid_flags.load(), std::cout);
    if (compare->parsed()) {
      return gtnrec::cmd_compare(compare_reports, compare_out, compare_force, std::cout);
    }
  } catch (const gtnrec::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.kind() == gtnrec::ErrorKind::divergence) {
      std::cerr << "hint: lower the learning rate\n";
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
