#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "gtnrec/graph.hpp"
#include "gtnrec/layers.hpp"
#include "gtnrec/sparse.hpp"
#include "gtnrec/tape.hpp"

namespace gtnrec {

/// Per-pair supervision: (user node id, item node id) with target ratings.
/// Ids are interpreted against whatever node space the forward pass runs
/// in (global graph or a re-indexed subgraph).
struct PairBatch {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<double> targets;

  std::size_t size() const noexcept { return pairs.size(); }
};

struct ModelDims {
  std::size_t n_nodes = 0;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t hidden = 16;
  std::size_t gc_layers = 2;
  std::size_t encoder_layers = 1;
  std::size_t heads = 3;
  std::size_t d_head = 0;  // 0 -> max(1, hidden / heads)
  std::size_t d_ff = 0;    // 0 -> 4 * hidden
  bool residual = false;

  std::size_t head_dim() const { return d_head ? d_head : std::max<std::size_t>(1, hidden / heads); }
  std::size_t ffn_dim() const { return d_ff ? d_ff : 4 * hidden; }
};

/// Graph transformer: embedding table -> GC stack -> encoder blocks ->
/// per-pair concat -> scalar linear head.
struct GTNModel {
  ModelDims dims;
  Tensor features;
  std::vector<GCLayerParams> gc;
  std::vector<EncoderBlockParams> encoders;
  LinearParams head;

  static GTNModel init(ModelDims dims, std::uint64_t seed);
};

/// Plain GCN baseline: GTN minus the encoder blocks.
struct GCNModel {
  ModelDims dims;
  Tensor features;
  std::vector<GCLayerParams> gc;
  LinearParams head;

  static GCNModel init(ModelDims dims, std::uint64_t seed);
};

/// Matrix-factorization baseline: rating(u, i) = U_u . V_i, squared-error
/// objective with optional L2 pull on the factors.
struct PMFModel {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t k = 8;
  double lambda = 0.01;
  Tensor U;  // n_users x k
  Tensor V;  // n_items x k

  static PMFModel init(std::size_t n_users, std::size_t n_items, std::size_t k,
                       double lambda, std::uint64_t seed);
};

using Model = std::variant<GTNModel, GCNModel, PMFModel>;

/// Enumerates every learnable tensor with its stable checkpoint name, in a
/// fixed order shared by initialization, forward binding, the optimizer
/// and checkpoints.
void visit_params(GTNModel& m, const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(GCNModel& m, const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(PMFModel& m, const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn);

std::string model_kind(const Model& m);

struct ParamBinding {
  std::string name;
  Tensor* param;  // the model's tensor, updated by the optimizer
  TapeRef ref;    // its leaf on the tape, source of the gradient
};

struct Predictions {
  TapeRef pred;  // batch x 1
  std::vector<ParamBinding> bindings;
  std::unordered_map<std::string, TapeRef> refs;
};

/// Forward through GC layers (and encoders for GTN) over the given
/// normalized adjacency, then per-pair concat and linear head. When
/// `node_rows` is nonempty the feature table is row-gathered first (the
/// re-indexed subgraph case) and pair ids address the gathered rows.
Predictions gtn_forward(Tape& tape, GTNModel& m, const SparseMatrix& adj_norm,
                        std::span<const std::uint32_t> node_rows, const PairBatch& batch);
Predictions gcn_forward(Tape& tape, GCNModel& m, const SparseMatrix& adj_norm,
                        std::span<const std::uint32_t> node_rows, const PairBatch& batch);
/// PMF ignores graph structure entirely; pair ids are global node ids
/// (items offset by n_users).
Predictions pmf_forward(Tape& tape, PMFModel& m, const PairBatch& batch);

Predictions model_forward(Tape& tape, Model& m, const SparseMatrix& adj_norm,
                          std::span<const std::uint32_t> node_rows, const PairBatch& batch);

/// Mean squared error between predictions (batch x 1) and targets.
TapeRef mse_loss(Tape& tape, TapeRef pred, const std::vector<double>& targets);

/// mse + lambda * reg_scale * (|U|^2 + |V|^2). reg_scale lets minibatch
/// training spread the full penalty over an epoch. `mse_out`, when given,
/// receives the plain mse component.
TapeRef pmf_loss(Tape& tape, const Predictions& fwd, const std::vector<double>& targets,
                 double lambda, double reg_scale, TapeRef* mse_out = nullptr);

}  // namespace gtnrec
