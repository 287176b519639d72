#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gtnrec/graph.hpp"
#include "gtnrec/model.hpp"

namespace gtnrec {

struct TrainConfig {
  std::string model = "gtn";  // gtn | gcn | pmf
  std::uint64_t seed = 42;

  std::size_t hidden_dim = 16;
  std::size_t gc_layers = 2;
  std::size_t encoder_layers = 1;
  std::size_t heads = 3;
  std::size_t d_ff = 0;  // 0 -> 4 * hidden
  bool residual = false;

  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  std::size_t epochs = 50;
  std::size_t patience = 5;

  std::size_t pmf_k = 16;
  double pmf_lambda = 0.01;

  bool clamp_eval = false;  // clamp predictions to [1, 5] during evaluation
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter first/second moment estimates plus the shared step
/// counter. Slots follow the model's visit_params order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
  AdamConfig config;

  static AdamState for_model(Model& model, AdamConfig config = {});
};

/// One Adam update on a single tensor. `t` is the already-incremented step
/// count used for bias correction.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t,
                 double lr, const AdamConfig& cfg);

/// Applies one Adam step to every bound parameter using the gradients
/// accumulated on `tape` (backward must have run).
void adam_step(const std::vector<ParamBinding>& bindings, const Tape& tape, AdamState& state,
               double lr);

/// Receptive-field closure of a batch's endpoints, re-indexed to dense
/// local ids (BFS discovery order), with the renormalized adjacency
/// recomputed on the induced subgraph.
struct SubBatch {
  SparseMatrix adj_norm;                 // n_local x n_local
  std::vector<std::uint32_t> node_rows;  // local id -> global feature row
  PairBatch batch;                       // pair ids in local space
};

SubBatch make_subbatch(const Graph& g, const PairBatch& global_batch, std::size_t depth);

struct EpochStats {
  double train_loss = 0.0;  // mean squared error over the epoch's batches
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double seconds = 0.0;  // wall clock; the one nondeterministic column
};

struct RunHistory {
  std::vector<EpochStats> epochs;
  std::size_t stopped_epoch = 0;  // last epoch that actually ran (1-based)
  std::size_t best_epoch = 0;     // epoch whose parameters the model keeps
  double best_val_rmse = 0.0;
};

/// history.csv rows: epoch,train_loss,val_mae,val_rmse,seconds with %.6f
/// metric formatting.
std::string history_csv(const RunHistory& history);

struct TrainCallbacks {
  /// Fired whenever validation RMSE improves (after the model's parameters
  /// were snapshot). Used to write ckpt_best.* incrementally.
  std::function<void(const Model&, std::size_t epoch, double val_rmse)> on_improve;
};

/// Minibatch Adam training with per-epoch validation and early stopping on
/// validation RMSE. The model is left holding the best epoch's parameters.
RunHistory train(Model& model, const Graph& g, const SplitSet& splits,
                 const std::vector<RatingRecord>& ratings, const TrainConfig& cfg,
                 const TrainCallbacks* callbacks = nullptr);

/// Hyperparameter grid. Empty axes inherit the base config's value.
struct GridAxes {
  std::vector<std::size_t> hidden_dims;
  std::vector<std::size_t> batch_sizes;
  std::vector<double> learning_rates;
  std::vector<std::size_t> gc_layers;
  std::vector<std::size_t> heads;

  bool empty() const {
    return hidden_dims.empty() && batch_sizes.empty() && learning_rates.empty() &&
           gc_layers.empty() && heads.empty();
  }
};

struct GridEntry {
  TrainConfig config;
  double best_val_rmse = 0.0;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
};

struct GridOutcome {
  std::vector<GridEntry> entries;  // lexicographic enumeration order
  std::size_t best_index = 0;      // min val RMSE; ties keep the earliest entry
};

/// Trains every combination (hidden, batch, lr, gc_layers, heads) in
/// lexicographic order. Combinations run on up to `threads` workers;
/// results are position-stable so the outcome is thread-count invariant.
GridOutcome grid_search(const Graph& g, const SplitSet& splits,
                        const std::vector<RatingRecord>& ratings, const TrainConfig& base,
                        const GridAxes& axes, std::size_t threads = 0);

/// GTNREC_THREADS env override, defaulting to the hardware concurrency.
std::size_t worker_threads();

/// Fresh model of cfg.model's kind sized for the graph, seeded by cfg.seed.
Model init_model_for(const TrainConfig& cfg, const Graph& g);

}  // namespace gtnrec
