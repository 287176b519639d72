#include "gtnrec/commands.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "gtnrec/checkpoint.hpp"
#include "gtnrec/digest.hpp"
#include "gtnrec/error.hpp"
#include "gtnrec/metrics.hpp"

namespace gtnrec {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  out << content;
}

std::string timestamp_utc() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

/// Digest over the resolved config and every input file the command read.
std::string input_digest(const AppConfig& config, bool with_splits) {
  Digest d;
  d.update(config_json(config));
  d.update_file(config.ratings_path);
  d.update_file(config.trust_path);
  if (with_splits) d.update_file(config.resolved_splits_path());
  return d.hex();
}

std::string split_digest(const AppConfig& config) {
  Digest d;
  d.update_file(config.ratings_path);
  d.update_file(config.trust_path);
  d.update_file(config.resolved_splits_path());
  return d.hex();
}

void write_manifest(const AppConfig& config, const std::string& command,
                    const std::string& digest, const std::string& dir) {
  json j;
  j["command"] = command;
  j["dataset"] = config.dataset_name;
  j["ratings"] = config.ratings_path;
  j["trust"] = config.trust_path;
  j["splits"] = config.resolved_splits_path();
  j["out"] = config.out_dir;
  j["seed"] = config.train.seed;
  j["config"] = json::parse(config_json(config));
  j["input_digest"] = digest;
  j["created_at"] = timestamp_utc();
  write_file(dir + "/run_manifest.json", j.dump(2) + "\n");
}

TrainConfig train_config_from_json(const json& j, TrainConfig base) {
  if (j.contains("model")) base.model = j.at("model").get<std::string>();
  if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("hidden_dim")) base.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  if (j.contains("gc_layers")) base.gc_layers = j.at("gc_layers").get<std::size_t>();
  if (j.contains("encoder_layers")) {
    base.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  }
  if (j.contains("heads")) base.heads = j.at("heads").get<std::size_t>();
  if (j.contains("d_ff")) base.d_ff = j.at("d_ff").get<std::size_t>();
  if (j.contains("residual")) base.residual = j.at("residual").get<bool>();
  if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("learning_rate")) base.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("epochs")) base.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("patience")) base.patience = j.at("patience").get<std::size_t>();
  if (j.contains("pmf_k")) base.pmf_k = j.at("pmf_k").get<std::size_t>();
  if (j.contains("pmf_lambda")) base.pmf_lambda = j.at("pmf_lambda").get<double>();
  if (j.contains("clamp_eval")) base.clamp_eval = j.at("clamp_eval").get<bool>();
  return base;
}

json train_config_to_json(const TrainConfig& c) {
  json j;
  j["model"] = c.model;
  j["seed"] = c.seed;
  j["hidden_dim"] = c.hidden_dim;
  j["gc_layers"] = c.gc_layers;
  j["encoder_layers"] = c.encoder_layers;
  j["heads"] = c.heads;
  j["d_ff"] = c.d_ff;
  j["residual"] = c.residual;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["pmf_k"] = c.pmf_k;
  j["pmf_lambda"] = c.pmf_lambda;
  j["clamp_eval"] = c.clamp_eval;
  return j;
}

struct LoadedDataset {
  std::vector<RatingRecord> ratings;
  std::vector<TrustRecord> trust;
  LoadStats stats;
};

LoadedDataset load_dataset(const AppConfig& config, std::ostream& log) {
  LoadedDataset data;
  data.ratings = load_ratings(config.ratings_path, &data.stats);
  data.trust = load_trust(config.trust_path, &data.stats);
  if (data.stats.duplicate_ratings > 0) {
    log << "warning: " << data.stats.duplicate_ratings
        << " duplicate (user, item) ratings collapsed to their last value\n";
  }
  if (data.stats.self_trust > 0) {
    log << "warning: " << data.stats.self_trust << " self-trust edges dropped\n";
  }
  return data;
}

std::vector<RatingRecord> select_ratings(const std::vector<RatingRecord>& all,
                                         const std::vector<std::size_t>& indices) {
  std::vector<RatingRecord> out;
  out.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= all.size()) {
      fail(ErrorKind::format, "splits reference rating index " + std::to_string(idx) +
                                  " beyond " + std::to_string(all.size()) +
                                  " ratings; splits.json belongs to another dataset");
    }
    out.push_back(all[idx]);
  }
  return out;
}

}  // namespace

AppConfig load_config(const std::string& path, const CliOverrides& overrides) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path + ": invalid config json: " + e.what());
  }
  AppConfig config;
  try {
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      if (d.contains("name")) config.dataset_name = d.at("name").get<std::string>();
      if (d.contains("ratings")) config.ratings_path = d.at("ratings").get<std::string>();
      if (d.contains("trust")) config.trust_path = d.at("trust").get<std::string>();
    }
    if (j.contains("out")) config.out_dir = j.at("out").get<std::string>();
    if (j.contains("splits")) config.splits_path = j.at("splits").get<std::string>();
    config.train = train_config_from_json(j, TrainConfig{});
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      if (g.contains("hidden_dim")) {
        config.grid.hidden_dims = g.at("hidden_dim").get<std::vector<std::size_t>>();
      }
      if (g.contains("batch_size")) {
        config.grid.batch_sizes = g.at("batch_size").get<std::vector<std::size_t>>();
      }
      if (g.contains("learning_rate")) {
        config.grid.learning_rates = g.at("learning_rate").get<std::vector<double>>();
      }
      if (g.contains("gc_layers")) {
        config.grid.gc_layers = g.at("gc_layers").get<std::vector<std::size_t>>();
      }
      if (g.contains("heads")) {
        config.grid.heads = g.at("heads").get<std::vector<std::size_t>>();
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path + ": bad config value: " + e.what());
  }
  if (overrides.seed) config.train.seed = *overrides.seed;
  if (overrides.model) config.train.model = *overrides.model;
  if (overrides.out) config.out_dir = *overrides.out;
  return config;
}

std::string config_json(const AppConfig& config) {
  json j;
  j["dataset"] = {{"name", config.dataset_name},
                  {"ratings", config.ratings_path},
                  {"trust", config.trust_path}};
  j["out"] = config.out_dir;
  j["splits"] = config.resolved_splits_path();
  j["train"] = train_config_to_json(config.train);
  json grid;
  grid["hidden_dim"] = config.grid.hidden_dims;
  grid["batch_size"] = config.grid.batch_sizes;
  grid["learning_rate"] = config.grid.learning_rates;
  grid["gc_layers"] = config.grid.gc_layers;
  grid["heads"] = config.grid.heads;
  j["grid"] = grid;
  return j.dump();
}

int cmd_ingest(const AppConfig& config, std::ostream& log) {
  LoadedDataset data = load_dataset(config, log);

  std::set<std::string> users, items;
  double rating_sum = 0.0;
  for (const auto& r : data.ratings) {
    users.insert(r.user);
    items.insert(r.item);
    rating_sum += r.rating;
  }
  for (const auto& t : data.trust) {
    users.insert(t.trustor);
    users.insert(t.trustee);
  }
  std::size_t n_users = users.size();
  std::size_t n_items = items.size();
  std::size_t n_ratings = data.ratings.size();
  std::size_t n_connections = data.trust.size();
  double mean_rating = n_ratings ? rating_sum / static_cast<double>(n_ratings) : 0.0;
  double rating_density =
      n_users && n_items
          ? 100.0 * static_cast<double>(n_ratings) /
                (static_cast<double>(n_users) * static_cast<double>(n_items))
          : 0.0;
  double social_density =
      n_users > 1 ? 100.0 * static_cast<double>(n_connections) /
                        (static_cast<double>(n_users) * static_cast<double>(n_users - 1))
                  : 0.0;

  char line[128];
  log << "dataset statistics (" << config.dataset_name << ")\n";
  std::snprintf(line, sizeof(line), "  %-28s %10zu\n", "users", n_users);
  log << line;
  std::snprintf(line, sizeof(line), "  %-28s %10zu\n", "items", n_items);
  log << line;
  std::snprintf(line, sizeof(line), "  %-28s %10zu\n", "ratings", n_ratings);
  log << line;
  std::snprintf(line, sizeof(line), "  %-28s %9.4f%%\n", "density (ratings)", rating_density);
  log << line;
  std::snprintf(line, sizeof(line), "  %-28s %10zu\n", "social connections", n_connections);
  log << line;
  std::snprintf(line, sizeof(line), "  %-28s %9.4f%%\n", "density (social)", social_density);
  log << line;
  std::snprintf(line, sizeof(line), "  %-28s %10.2f\n", "mean rating", mean_rating);
  log << line;

  fs::create_directories(config.out_dir);
  SplitSet splits = split(data.ratings, config.train.seed);
  save_splits(splits, config.resolved_splits_path());

  json stats;
  stats["dataset"] = config.dataset_name;
  stats["users"] = n_users;
  stats["items"] = n_items;
  stats["ratings"] = n_ratings;
  stats["rating_density_pct"] = rating_density;
  stats["social_connections"] = n_connections;
  stats["social_density_pct"] = social_density;
  stats["mean_rating"] = mean_rating;
  stats["duplicate_ratings"] = data.stats.duplicate_ratings;
  stats["self_trust_dropped"] = data.stats.self_trust;
  stats["split_sizes"] = {splits.train.size(), splits.val.size(), splits.test.size()};
  write_file(config.out_dir + "/graph_stats.json", stats.dump(2) + "\n");

  write_manifest(config, "ingest", input_digest(config, true), config.out_dir);
  log << "wrote " << config.resolved_splits_path() << "\n";
  return 0;
}

int cmd_train(const AppConfig& config, std::ostream& log) {
  LoadedDataset data = load_dataset(config, log);
  std::string splits_path = config.resolved_splits_path();
  if (!fs::exists(splits_path)) {
    fail(ErrorKind::io,
         "missing " + splits_path + "; run `gtnrec ingest` first to create the split");
  }
  SplitSet splits = load_splits(splits_path);

  NodeIndex index = build_node_index(data.ratings, data.trust);
  std::vector<RatingRecord> train_ratings = select_ratings(data.ratings, splits.train);
  Graph g = build_graph(std::move(index), train_ratings, data.trust,
                        config.train.hidden_dim, config.train.seed);

  fs::create_directories(config.out_dir);
  Model model = init_model_for(config.train, g);

  TrainCallbacks callbacks;
  callbacks.on_improve = [&](const Model& m, std::size_t epoch, double val_rmse) {
    save_model(config.out_dir, m, config.train.seed);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "epoch %zu: val rmse %.6f (checkpoint saved)\n", epoch,
                  val_rmse);
    log << buf;
  };

  RunHistory history = train(model, g, splits, data.ratings, config.train, &callbacks);

  write_file(config.out_dir + "/history.csv", history_csv(history));
  write_manifest(config, "train", input_digest(config, true), config.out_dir);

  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "done: %zu epochs, best epoch %zu, best val rmse %.6f\n",
                history.stopped_epoch, history.best_epoch, history.best_val_rmse);
  log << buf;
  return 0;
}

int cmd_evaluate(const std::string& run_dir, std::ostream& log) {
  std::string manifest_path = run_dir + "/run_manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, manifest_path + ": " + e.what());
  }

  AppConfig config;
  try {
    config.dataset_name = manifest.at("dataset").get<std::string>();
    config.ratings_path = manifest.at("ratings").get<std::string>();
    config.trust_path = manifest.at("trust").get<std::string>();
    config.splits_path = manifest.at("splits").get<std::string>();
    config.out_dir = run_dir;
    config.train = train_config_from_json(manifest.at("config").at("train"), TrainConfig{});
  } catch (const json::exception& e) {
    fail(ErrorKind::format, manifest_path + ": missing fields: " + e.what());
  }

  LoadedDataset data = load_dataset(config, log);
  SplitSet splits = load_splits(config.resolved_splits_path());
  NodeIndex index = build_node_index(data.ratings, data.trust);
  std::vector<RatingRecord> train_ratings = select_ratings(data.ratings, splits.train);
  Graph g = build_graph(std::move(index), train_ratings, data.trust,
                        config.train.hidden_dim, config.train.seed);

  Model model = load_model(run_dir);

  EvaluateOptions options;
  options.clamp = config.train.clamp_eval;
  options.dataset = config.dataset_name;
  options.model_name = model_kind(model);
  options.seed = config.train.seed;
  options.config_digest = digest_of(config_json(config));
  options.split_digest = split_digest(config);
  MetricsReport report = evaluate(model, g, data.ratings, splits.test, options);

  write_file(run_dir + "/report.json", report_json(report));
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s/%s: test mae %.6f rmse %.6f (n=%zu, cold=%zu)\n",
                report.dataset.c_str(), report.model.c_str(), report.mae, report.rmse,
                report.n, report.cold_pairs);
  log << buf;
  return 0;
}

int cmd_gridsearch(const AppConfig& config, std::ostream& log) {
  if (config.grid.empty()) {
    fail(ErrorKind::contract, "gridsearch: config has no \"grid\" axes");
  }
  LoadedDataset data = load_dataset(config, log);
  std::string splits_path = config.resolved_splits_path();
  if (!fs::exists(splits_path)) {
    fail(ErrorKind::io,
         "missing " + splits_path + "; run `gtnrec ingest` first to create the split");
  }
  SplitSet splits = load_splits(splits_path);
  NodeIndex index = build_node_index(data.ratings, data.trust);
  std::vector<RatingRecord> train_ratings = select_ratings(data.ratings, splits.train);
  Graph g = build_graph(std::move(index), train_ratings, data.trust,
                        config.train.hidden_dim, config.train.seed);

  GridOutcome outcome = grid_search(g, splits, data.ratings, config.train, config.grid);

  std::string csv =
      "model,seed,hidden_dim,batch_size,learning_rate,gc_layers,heads,encoder_layers,"
      "best_epoch,stopped_epoch,best_val_rmse\n";
  char buf[256];
  for (const GridEntry& e : outcome.entries) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%zu,%zu,%.6f,%zu,%zu,%zu,%zu,%zu,%.6f\n",
                  e.config.model.c_str(),
                  static_cast<unsigned long long>(e.config.seed), e.config.hidden_dim,
                  e.config.batch_size, e.config.learning_rate, e.config.gc_layers,
                  e.config.heads, e.config.encoder_layers, e.best_epoch, e.stopped_epoch,
                  e.best_val_rmse);
    csv += buf;
  }
  fs::create_directories(config.out_dir);
  write_file(config.out_dir + "/gridsearch.csv", csv);
  write_manifest(config, "gridsearch", input_digest(config, true), config.out_dir);

  const GridEntry& best = outcome.entries[outcome.best_index];
  std::snprintf(buf, sizeof(buf),
                "best config: hidden=%zu batch=%zu lr=%.6f gc_layers=%zu heads=%zu "
                "(val rmse %.6f)\n",
                best.config.hidden_dim, best.config.batch_size, best.config.learning_rate,
                best.config.gc_layers, best.config.heads, best.best_val_rmse);
  log << buf;
  return 0;
}

int cmd_compare(const std::vector<std::string>& report_paths, const std::string& out_dir,
                bool force, std::ostream& log) {
  if (report_paths.empty()) fail(ErrorKind::contract, "compare: no reports given");
  std::vector<MetricsReport> reports;
  reports.reserve(report_paths.size());
  for (const std::string& path : report_paths) {
    reports.push_back(report_from_json(read_file(path), path));
  }
  for (const MetricsReport& r : reports) {
    if (r.split_digest != reports.front().split_digest && !force) {
      fail(ErrorKind::contract,
           "compare: reports come from different splits (digest " + r.split_digest +
               " vs " + reports.front().split_digest + "); pass --force to merge anyway");
    }
  }
  std::string csv = comparison_csv(reports);
  fs::create_directories(out_dir);
  write_file(out_dir + "/comparison.csv", csv);
  log << csv;
  return 0;
}

}  // namespace gtnrec
