#include "gtnrec/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

#include "gtnrec/error.hpp"
#include "gtnrec/metrics.hpp"
#include "gtnrec/rng.hpp"

namespace gtnrec {

AdamState AdamState::for_model(Model& model, AdamConfig config) {
  AdamState st;
  st.config = config;
  visit_params(model, [&](const std::string&, Tensor& t) {
    st.m.emplace_back(t.rows(), t.cols());
    st.v.emplace_back(t.rows(), t.cols());
  });
  return st;
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t,
                 double lr, const AdamConfig& cfg) {
  if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v)) {
    fail(ErrorKind::dimension, "adam_update: param " + param.shape_str() + ", grad " +
                                   grad.shape_str() + ", state " + m.shape_str());
  }
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    double g = grad.data()[i];
    double mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
    double vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
    m.data()[i] = mi;
    v.data()[i] = vi;
    double m_hat = mi / bc1;
    double v_hat = vi / bc2;
    param.data()[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void adam_step(const std::vector<ParamBinding>& bindings, const Tape& tape, AdamState& state,
               double lr) {
  if (bindings.size() != state.m.size()) {
    fail(ErrorKind::dimension, "adam_step: " + std::to_string(bindings.size()) +
                                   " bindings vs " + std::to_string(state.m.size()) +
                                   " state slots");
  }
  ++state.t;
  for (std::size_t i = 0; i < bindings.size(); ++i) {
    adam_update(*bindings[i].param, tape.grad(bindings[i].ref), state.m[i], state.v[i],
                state.t, lr, state.config);
  }
}

SubBatch make_subbatch(const Graph& g, const PairBatch& global_batch, std::size_t depth) {
  const SparseMatrix& a = g.adjacency;
  std::size_t n = a.rows();
  std::vector<std::uint32_t> local_of(n, NodeIndex::npos);
  std::vector<std::uint32_t> nodes;

  auto visit = [&](std::uint32_t global) {
    if (local_of[global] == NodeIndex::npos) {
      local_of[global] = static_cast<std::uint32_t>(nodes.size());
      nodes.push_back(global);
    }
  };
  for (const auto& [u, i] : global_batch.pairs) {
    if (u >= n || i >= n) {
      fail(ErrorKind::index, "make_subbatch: node id out of range");
    }
    visit(u);
    visit(i);
  }
  // BFS closure: depth hops away from any batch endpoint
  std::size_t frontier_begin = 0;
  for (std::size_t hop = 0; hop < depth; ++hop) {
    std::size_t frontier_end = nodes.size();
    for (std::size_t idx = frontier_begin; idx < frontier_end; ++idx) {
      std::uint32_t global = nodes[idx];
      for (std::size_t k = a.row_begin(global); k < a.row_end(global); ++k) {
        visit(a.col_at(k));
      }
    }
    frontier_begin = frontier_end;
    if (frontier_end == nodes.size()) break;  // closure saturated
  }

  // Induced subgraph in local ids, then renormalize on it
  std::size_t n_local = nodes.size();
  std::vector<std::size_t> ptr(n_local + 1, 0);
  std::vector<std::uint32_t> col;
  std::vector<double> degrees(n_local, 0.0);
  for (std::size_t li = 0; li < n_local; ++li) {
    std::uint32_t global = nodes[li];
    for (std::size_t k = a.row_begin(global); k < a.row_end(global); ++k) {
      if (local_of[a.col_at(k)] != NodeIndex::npos) ++ptr[li + 1];
    }
  }
  for (std::size_t li = 0; li < n_local; ++li) ptr[li + 1] += ptr[li];
  col.resize(ptr.back());
  std::vector<double> val(ptr.back());
  {
    std::vector<std::size_t> cursor(ptr.begin(), ptr.end() - 1);
    for (std::size_t li = 0; li < n_local; ++li) {
      std::uint32_t global = nodes[li];
      for (std::size_t k = a.row_begin(global); k < a.row_end(global); ++k) {
        std::uint32_t lj = local_of[a.col_at(k)];
        if (lj == NodeIndex::npos) continue;
        col[cursor[li]] = lj;
        val[cursor[li]] = a.value_at(k);
        degrees[li] += a.value_at(k);
        ++cursor[li];
      }
      std::sort(col.begin() + static_cast<std::ptrdiff_t>(ptr[li]),
                col.begin() + static_cast<std::ptrdiff_t>(cursor[li]));
    }
  }

  std::vector<double> inv_sqrt(n_local);
  for (std::size_t i = 0; i < n_local; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degrees[i] + 1.0);
  std::vector<std::size_t> nptr(n_local + 1, 0);
  std::vector<std::uint32_t> ncol;
  std::vector<double> nval;
  ncol.reserve(col.size() + n_local);
  nval.reserve(col.size() + n_local);
  for (std::size_t i = 0; i < n_local; ++i) {
    bool diag_done = false;
    for (std::size_t k = ptr[i]; k < ptr[i + 1]; ++k) {
      std::uint32_t j = col[k];
      if (!diag_done && j > i) {
        ncol.push_back(static_cast<std::uint32_t>(i));
        nval.push_back(inv_sqrt[i] * inv_sqrt[i]);
        diag_done = true;
      }
      ncol.push_back(j);
      nval.push_back(val[k] * inv_sqrt[i] * inv_sqrt[j]);
    }
    if (!diag_done) {
      ncol.push_back(static_cast<std::uint32_t>(i));
      nval.push_back(inv_sqrt[i] * inv_sqrt[i]);
    }
    nptr[i + 1] = ncol.size();
  }

  SubBatch sub;
  sub.adj_norm = SparseMatrix(n_local, n_local, std::move(nptr), std::move(ncol),
                              std::move(nval));
  sub.node_rows = std::move(nodes);
  sub.batch.targets = global_batch.targets;
  sub.batch.pairs.reserve(global_batch.pairs.size());
  for (const auto& [u, i] : global_batch.pairs) {
    sub.batch.pairs.emplace_back(local_of[u], local_of[i]);
  }
  return sub;
}

std::string history_csv(const RunHistory& history) {
  std::string out = "epoch,train_loss,val_mae,val_rmse,seconds\n";
  char buf[160];
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const EpochStats& s = history.epochs[e];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f\n", e + 1, s.train_loss,
                  s.val_mae, s.val_rmse, s.seconds);
    out += buf;
  }
  return out;
}

namespace {

PairBatch gather_pairs(const std::vector<RatingRecord>& ratings,
                       const std::vector<std::size_t>& indices, const NodeIndex& index) {
  PairBatch b;
  b.pairs.reserve(indices.size());
  b.targets.reserve(indices.size());
  for (std::size_t idx : indices) {
    const RatingRecord& r = ratings[idx];
    std::uint32_t u = index.user_id(r.user);
    std::uint32_t i = index.item_id(r.item);
    if (u == NodeIndex::npos || i == NodeIndex::npos) {
      fail(ErrorKind::index, "rating (" + r.user + ", " + r.item +
                                 ") references a node missing from the graph universe");
    }
    b.pairs.emplace_back(u, i);
    b.targets.push_back(r.rating);
  }
  return b;
}

std::size_t model_depth(const TrainConfig& cfg) {
  if (cfg.model == "gcn") return cfg.gc_layers;
  return cfg.gc_layers + cfg.encoder_layers;
}

std::vector<Tensor> snapshot_params(Model& m) {
  std::vector<Tensor> snap;
  visit_params(m, [&](const std::string&, Tensor& t) { snap.push_back(t); });
  return snap;
}

void restore_params(Model& m, const std::vector<Tensor>& snap) {
  std::size_t i = 0;
  visit_params(m, [&](const std::string&, Tensor& t) { t = snap[i++]; });
}

}  // namespace

RunHistory train(Model& model, const Graph& g, const SplitSet& splits,
                 const std::vector<RatingRecord>& ratings, const TrainConfig& cfg,
                 const TrainCallbacks* callbacks) {
  if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.patience < 1 ||
      !(cfg.learning_rate > 0.0)) {
    fail(ErrorKind::contract,
         "train: batch_size, epochs, patience and learning_rate must be positive");
  }
  const bool is_pmf = std::holds_alternative<PMFModel>(model);
  PairBatch train_pairs = gather_pairs(ratings, splits.train, g.index);
  PairBatch val_pairs = gather_pairs(ratings, splits.val, g.index);
  if (train_pairs.size() == 0 || val_pairs.size() == 0) {
    fail(ErrorKind::too_small, "train: empty train or val split");
  }
  SparseMatrix adj_norm = normalize_adjacency(g);
  std::size_t depth = model_depth(cfg);

  AdamState adam = AdamState::for_model(model);
  RunHistory history;
  std::vector<Tensor> best = snapshot_params(model);
  double best_rmse = std::numeric_limits<double>::infinity();
  std::size_t epochs_without_improvement = 0;
  std::size_t n_train = train_pairs.size();

  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto rng = make_rng(cfg.seed, mix_seed(kStreamEpochShuffle, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      std::size_t end = std::min(n_train, start + cfg.batch_size);
      PairBatch batch;
      batch.pairs.reserve(end - start);
      batch.targets.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.pairs.push_back(train_pairs.pairs[order[i]]);
        batch.targets.push_back(train_pairs.targets[order[i]]);
      }

      Tape tape;
      TapeRef loss;
      double mse_value = 0.0;
      std::vector<ParamBinding> bindings;
      SubBatch sub;  // must outlive the tape: spmm closures point into it
      if (is_pmf) {
        PMFModel& pmf = std::get<PMFModel>(model);
        Predictions fwd = pmf_forward(tape, pmf, batch);
        // spread the full L2 penalty over the epoch's batches
        double reg_scale = static_cast<double>(batch.size()) / static_cast<double>(n_train);
        TapeRef mse;
        loss = pmf_loss(tape, fwd, batch.targets, pmf.lambda, reg_scale, &mse);
        mse_value = tape.value(mse).at(0, 0);
        bindings = std::move(fwd.bindings);
      } else {
        sub = make_subbatch(g, batch, depth);
        Predictions fwd = model_forward(tape, model, sub.adj_norm, sub.node_rows, sub.batch);
        loss = mse_loss(tape, fwd.pred, sub.batch.targets);
        mse_value = tape.value(loss).at(0, 0);
        bindings = std::move(fwd.bindings);
      }

      double loss_value = tape.value(loss).at(0, 0);
      if (!std::isfinite(loss_value)) {
        fail(ErrorKind::divergence, "train: loss diverged at epoch " +
                                        std::to_string(epoch) + " (lr " +
                                        std::to_string(cfg.learning_rate) + ")");
      }
      loss_sum += mse_value * static_cast<double>(end - start);

      tape.backward(loss);
      adam_step(bindings, tape, adam, cfg.learning_rate);
    }

    MetricsValues val = score_pairs(model, adj_norm, val_pairs, cfg.clamp_eval);
    auto t1 = std::chrono::steady_clock::now();

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(n_train);
    stats.val_mae = val.mae;
    stats.val_rmse = val.rmse;
    stats.seconds = std::chrono::duration<double>(t1 - t0).count();
    history.epochs.push_back(stats);
    history.stopped_epoch = epoch;

    if (stats.val_rmse < best_rmse) {
      best_rmse = stats.val_rmse;
      best = snapshot_params(model);
      history.best_epoch = epoch;
      epochs_without_improvement = 0;
      if (callbacks && callbacks->on_improve) {
        callbacks->on_improve(model, epoch, stats.val_rmse);
      }
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= cfg.patience) break;
    }
  }

  restore_params(model, best);
  history.best_val_rmse = best_rmse;
  return history;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("GTNREC_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

GridOutcome grid_search(const Graph& g, const SplitSet& splits,
                        const std::vector<RatingRecord>& ratings, const TrainConfig& base,
                        const GridAxes& axes, std::size_t threads) {
  auto axis_or = [](const std::vector<std::size_t>& axis, std::size_t fallback) {
    return axis.empty() ? std::vector<std::size_t>{fallback} : axis;
  };
  std::vector<std::size_t> hiddens = axis_or(axes.hidden_dims, base.hidden_dim);
  std::vector<std::size_t> batches = axis_or(axes.batch_sizes, base.batch_size);
  std::vector<double> lrs =
      axes.learning_rates.empty() ? std::vector<double>{base.learning_rate}
                                  : axes.learning_rates;
  std::vector<std::size_t> gcs = axis_or(axes.gc_layers, base.gc_layers);
  std::vector<std::size_t> heads = axis_or(axes.heads, base.heads);

  std::vector<TrainConfig> configs;
  for (std::size_t h : hiddens) {
    for (std::size_t b : batches) {
      for (double lr : lrs) {
        for (std::size_t gc : gcs) {
          for (std::size_t hd : heads) {
            TrainConfig c = base;
            c.hidden_dim = h;
            c.batch_size = b;
            c.learning_rate = lr;
            c.gc_layers = gc;
            c.heads = hd;
            configs.push_back(c);
          }
        }
      }
    }
  }
  if (configs.empty()) fail(ErrorKind::contract, "grid_search: empty grid");

  GridOutcome outcome;
  outcome.entries.resize(configs.size());
  if (threads == 0) threads = worker_threads();
  threads = std::min(threads, configs.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      try {
        Model model = init_model_for(configs[i], g);
        RunHistory hist = train(model, g, splits, ratings, configs[i]);
        outcome.entries[i] =
            GridEntry{configs[i], hist.best_val_rmse, hist.best_epoch, hist.stopped_epoch};
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  outcome.best_index = 0;
  for (std::size_t i = 1; i < outcome.entries.size(); ++i) {
    if (outcome.entries[i].best_val_rmse < outcome.entries[outcome.best_index].best_val_rmse) {
      outcome.best_index = i;
    }
  }
  return outcome;
}

Model init_model_for(const TrainConfig& cfg, const Graph& g) {
  ModelDims dims;
  dims.n_nodes = g.n_nodes();
  dims.n_users = g.index.n_users();
  dims.n_items = g.index.n_items();
  dims.hidden = cfg.hidden_dim;
  dims.gc_layers = cfg.gc_layers;
  dims.encoder_layers = cfg.encoder_layers;
  dims.heads = cfg.heads;
  dims.d_ff = cfg.d_ff;
  dims.residual = cfg.residual;
  if (cfg.model == "gtn") return GTNModel::init(dims, cfg.seed);
  if (cfg.model == "gcn") return GCNModel::init(dims, cfg.seed);
  if (cfg.model == "pmf") {
    return PMFModel::init(dims.n_users, dims.n_items, cfg.pmf_k, cfg.pmf_lambda, cfg.seed);
  }
  fail(ErrorKind::contract, "unknown model kind '" + cfg.model + "'");
}

}  // namespace gtnrec
