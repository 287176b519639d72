#include <doctest.h>

#include <cmath>

#include "gtnrec/error.hpp"
#include "gtnrec/metrics.hpp"
#include "gtnrec/train.hpp"
#include "support.hpp"

using namespace gtnrec;
using namespace testsupport;

TEST_CASE("mae and rmse: hand values, degeneracies, contracts") {
  std::vector<double> perfect = {1.0, 2.0, 3.0};
  CHECK(mae(perfect, perfect) == 0.0);
  CHECK(rmse(perfect, perfect) == 0.0);

  std::vector<double> pred = {1.0, 3.0}, targets = {2.0, 5.0};
  CHECK(mae(pred, targets) == 1.5);
  CHECK(rmse(pred, targets) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));

  // constant offset on perfect predictions costs exactly |c|
  std::vector<double> shifted = {1.7, 2.7, 3.7};
  CHECK(mae(shifted, perfect) == doctest::Approx(0.7).epsilon(1e-12));

  // single pair: rmse == mae
  std::vector<double> one_p = {4.2}, one_t = {1.1};
  CHECK(rmse(one_p, one_t) == doctest::Approx(mae(one_p, one_t)).epsilon(1e-15));

  std::vector<double> empty, two = {1.0, 2.0}, one = {1.0};
  CHECK_THROWS_AS(mae(empty, empty), Error);
  CHECK_THROWS_AS(rmse(one, two), Error);
}

TEST_CASE("mae <= rmse on random vectors; both symmetric and permutation-invariant") {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 1000; ++round) {
    std::size_t n = 1 + rng() % 12;
    std::vector<double> p(n), t(n);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = dist(rng);
      t[i] = dist(rng);
    }
    CHECK(mae(p, t) <= rmse(p, t) + 1e-15);
    CHECK(mae(p, t) == mae(t, p));
    CHECK(rmse(p, t) == rmse(t, p));

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pp(n), tt(n);
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = p[perm[i]];
      tt[i] = t[perm[i]];
    }
    CHECK(mae(pp, tt) == doctest::Approx(mae(p, t)).epsilon(1e-12));
    CHECK(rmse(pp, tt) == doctest::Approx(rmse(p, t)).epsilon(1e-12));
  }
}

TEST_CASE("evaluate: memorized model scores its own train set; cold pairs counted") {
  SynthDataset data = make_additive_synth(10, 16, 70, 91);
  SplitSet splits;
  splits.seed = 91;
  for (std::size_t i = 0; i + 6 < data.ratings.size(); ++i) splits.train.push_back(i);
  for (std::size_t i = data.ratings.size() - 6; i < data.ratings.size(); ++i) {
    splits.test.push_back(i);
  }
  splits.val = splits.train;

  std::vector<RatingRecord> train_r;
  for (std::size_t i : splits.train) train_r.push_back(data.ratings[i]);
  Graph g = build_graph(build_node_index(data.ratings, data.trust), train_r, data.trust, 8,
                        91);

  TrainConfig cfg;
  cfg.model = "gcn";
  cfg.seed = 91;
  cfg.hidden_dim = 8;
  cfg.gc_layers = 2;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.03;
  cfg.epochs = 300;
  cfg.patience = 300;
  Model model = init_model_for(cfg, g);
  train(model, g, splits, data.ratings, cfg);

  EvaluateOptions opts;
  opts.dataset = "syntopic";
  opts.seed = 91;
  MetricsReport on_train = evaluate(model, g, data.ratings, splits.train, opts);
  CHECK(on_train.mae < 0.1);
  CHECK(on_train.rmse < 0.1);
  CHECK(on_train.mae <= on_train.rmse);
  CHECK(on_train.n == splits.train.size());
  CHECK(on_train.model == "gcn");

  MetricsReport on_test = evaluate(model, g, data.ratings, splits.test, opts);
  CHECK(on_test.mae <= on_test.rmse);

  // a pair with a node that has no train edges counts as cold
  std::size_t cold_expected = 0;
  for (std::size_t idx : splits.test) {
    const RatingRecord& r = data.ratings[idx];
    std::uint32_t u = g.index.user_id(r.user);
    std::uint32_t i = g.index.item_id(r.item);
    if (g.degrees[u] == 0.0 || g.degrees[i] == 0.0) ++cold_expected;
  }
  CHECK(on_test.cold_pairs == cold_expected);

  // determinism of evaluation
  MetricsReport again = evaluate(model, g, data.ratings, splits.test, opts);
  CHECK(again.mae == on_test.mae);
  CHECK(again.rmse == on_test.rmse);
}

TEST_CASE("evaluate: clamping bounds predictions into the rating scale") {
  // a bias-only predictor far outside [1, 5]
  Graph g = build_graph({{"u", "i", 5.0}, {"u", "j", 5.0}, {"v", "i", 5.0},
                         {"v", "j", 5.0}, {"w", "i", 5.0}},
                        {}, 4, 1);
  TrainConfig cfg;
  cfg.model = "pmf";
  cfg.pmf_k = 1;
  Model model = init_model_for(cfg, g);
  auto& pmf = std::get<PMFModel>(model);
  pmf.U = Tensor::full(pmf.U.rows(), 1, 10.0);
  pmf.V = Tensor::full(pmf.V.rows(), 1, 10.0);  // predicts 100 everywhere

  std::vector<RatingRecord> ratings = {{"u", "i", 5.0}};
  std::vector<std::size_t> idx = {0};
  EvaluateOptions raw;
  MetricsReport unclamped = evaluate(model, g, ratings, idx, raw);
  CHECK(unclamped.mae == doctest::Approx(95.0));
  EvaluateOptions clamp;
  clamp.clamp = true;
  MetricsReport clamped = evaluate(model, g, ratings, idx, clamp);
  CHECK(clamped.mae == doctest::Approx(0.0));
  CHECK(clamped.clamped);
}

TEST_CASE("comparison_csv: ordering, means, provenance, reference rows") {
  auto report = [](const std::string& model, std::uint64_t seed, double m, double r) {
    MetricsReport rep;
    rep.dataset = "ciao";
    rep.model = model;
    rep.seed = seed;
    rep.n = 100;
    rep.mae = m;
    rep.rmse = r;
    rep.config_digest = "cfg" + model;
    rep.split_digest = "splitX";
    return rep;
  };
  std::vector<MetricsReport> reports = {
      report("gtn", 1, 0.80, 1.00), report("gtn", 2, 0.82, 1.02), report("gtn", 3, 0.78, 0.98),
      report("gcn", 1, 0.90, 1.10), report("gcn", 2, 0.88, 1.08), report("gcn", 3, 0.92, 1.12),
  };
  std::string csv = comparison_csv(reports);

  // header + 6 run rows + 2 mean rows + 5 ciao reference rows
  std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
  CHECK(lines == 1 + 6 + 2 + 5);
  CHECK(csv.find("dataset,model,seed,n,cold_pairs,mae,rmse,config_digest,split_digest,source") == 0);

  // sorted ascending by rmse: first run row is gtn seed 3
  std::string first_row = csv.substr(csv.find('\n') + 1);
  first_row = first_row.substr(0, first_row.find('\n'));
  CHECK(first_row.find("ciao,gtn,3") == 0);

  // mean rows carry the group means
  CHECK(csv.find("ciao,gtn,mean,300,0,0.800000,1.000000") != std::string::npos);
  CHECK(csv.find("ciao,gcn,mean,300,0,0.900000,1.100000") != std::string::npos);

  // reference rows are flagged as reported
  CHECK(csv.find(",reported") != std::string::npos);
  CHECK(csv.find("ciao,gtn,-,0,0,0.764100,0.973200,-,-,reported") != std::string::npos);

  // unknown dataset name brings no reference rows
  std::vector<MetricsReport> other = {report("gtn", 1, 0.5, 0.6)};
  other[0].dataset = "synthetic";
  CHECK(comparison_csv(other).find("reported") == std::string::npos);
}

TEST_CASE("report json round-trip") {
  MetricsReport r;
  r.dataset = "ciao";
  r.model = "gtn";
  r.seed = 5;
  r.n = 42;
  r.cold_pairs = 3;
  r.mae = 0.5;
  r.rmse = 0.75;
  r.clamped = true;
  r.config_digest = "abc";
  r.split_digest = "def";
  MetricsReport back = report_from_json(report_json(r), "mem");
  CHECK(back.dataset == r.dataset);
  CHECK(back.model == r.model);
  CHECK(back.seed == r.seed);
  CHECK(back.n == r.n);
  CHECK(back.cold_pairs == r.cold_pairs);
  CHECK(back.mae == r.mae);
  CHECK(back.rmse == r.rmse);
  CHECK(back.clamped == r.clamped);
  CHECK(back.config_digest == r.config_digest);
  CHECK(back.split_digest == r.split_digest);

  CHECK_THROWS_AS(report_from_json("{\"model\": \"x\"}", "mem"), Error);
}

TEST_CASE("published reference table matches the recorded full-scale numbers") {
  auto refs = reference_results();
  bool found_ciao_gtn = false, found_epinions_gcn = false;
  for (const auto& row : refs) {
    if (row.dataset == "ciao" && row.model == "gtn") {
      CHECK(row.mae == 0.7641);
      CHECK(row.rmse == 0.9732);
      found_ciao_gtn = true;
    }
    if (row.dataset == "epinions" && row.model == "gcn") {
      CHECK(row.mae == 0.8956);
      CHECK(row.rmse == 1.1680);
      found_epinions_gcn = true;
    }
  }
  CHECK(found_ciao_gtn);
  CHECK(found_epinions_gcn);
}
