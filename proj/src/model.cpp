#include "gtnrec/model.hpp"

#include <random>

#include "gtnrec/error.hpp"
#include "gtnrec/rng.hpp"

namespace gtnrec {

namespace {

constexpr double kInitStd = 0.1;

Tensor gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor t(rows, cols);
  std::normal_distribution<double> gauss(0.0, kInitStd);
  for (double& x : t.data()) x = gauss(rng);
  return t;
}

EncoderBlockParams init_encoder_block(const ModelDims& d, std::mt19937_64& rng) {
  EncoderBlockParams p;
  std::size_t dh = d.head_dim();
  std::size_t dff = d.ffn_dim();
  p.mha.heads.resize(d.heads);
  for (auto& h : p.mha.heads) {
    h.Q = gaussian(d.hidden, dh, rng);
    h.K = gaussian(d.hidden, dh, rng);
    h.V = gaussian(d.hidden, dh, rng);
  }
  p.mha.O = gaussian(d.heads * dh, d.hidden, rng);
  p.ln1_gain = Tensor::full(1, d.hidden, 1.0);
  p.ln1_bias = Tensor(1, d.hidden);
  p.ln2_gain = Tensor::full(1, d.hidden, 1.0);
  p.ln2_bias = Tensor(1, d.hidden);
  p.ffn_w1 = gaussian(d.hidden, dff, rng);
  p.ffn_b1 = Tensor(1, dff);
  p.ffn_w2 = gaussian(dff, d.hidden, rng);
  p.ffn_b2 = Tensor(1, d.hidden);
  return p;
}

void check_dims(const ModelDims& d, const char* kind) {
  if (d.n_nodes == 0 || d.hidden == 0) {
    fail(ErrorKind::contract, std::string(kind) + ": n_nodes and hidden must be positive");
  }
  if (d.gc_layers < 1 || d.gc_layers > 3) {
    fail(ErrorKind::contract, std::string(kind) + ": gc_layers must be in [1, 3], got " +
                                  std::to_string(d.gc_layers));
  }
  if (d.ffn_dim() < d.hidden) {
    fail(ErrorKind::contract, std::string(kind) + ": d_ff must be >= hidden");
  }
}

void visit_encoder(EncoderBlockParams& e, const std::string& prefix,
                   const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t k = 0; k < e.mha.heads.size(); ++k) {
    auto& h = e.mha.heads[k];
    fn(prefix + ".head." + std::to_string(k) + ".Q", h.Q);
    fn(prefix + ".head." + std::to_string(k) + ".K", h.K);
    fn(prefix + ".head." + std::to_string(k) + ".V", h.V);
  }
  fn(prefix + ".O", e.mha.O);
  fn(prefix + ".ln1.gain", e.ln1_gain);
  fn(prefix + ".ln1.bias", e.ln1_bias);
  fn(prefix + ".ffn.W1", e.ffn_w1);
  fn(prefix + ".ffn.b1", e.ffn_b1);
  fn(prefix + ".ffn.W2", e.ffn_w2);
  fn(prefix + ".ffn.b2", e.ffn_b2);
  fn(prefix + ".ln2.gain", e.ln2_gain);
  fn(prefix + ".ln2.bias", e.ln2_bias);
}

struct BoundParams {
  std::vector<ParamBinding> bindings;
  std::unordered_map<std::string, TapeRef> refs;
};

template <typename M>
BoundParams bind_params(Tape& tape, M& m) {
  BoundParams out;
  visit_params(m, [&](const std::string& name, Tensor& t) {
    TapeRef r = tape.leaf(t);
    out.bindings.push_back(ParamBinding{name, &t, r});
    out.refs.emplace(name, r);
  });
  return out;
}

void check_batch(const PairBatch& batch, std::size_t n_nodes) {
  if (batch.pairs.size() != batch.targets.size()) {
    fail(ErrorKind::contract, "pair batch: " + std::to_string(batch.pairs.size()) +
                                  " pairs vs " + std::to_string(batch.targets.size()) +
                                  " targets");
  }
  for (const auto& [u, i] : batch.pairs) {
    if (u >= n_nodes || i >= n_nodes) {
      fail(ErrorKind::index, "pair batch: node id " + std::to_string(std::max(u, i)) +
                                 " out of range [0, " + std::to_string(n_nodes) + ")");
    }
  }
}

// Shared GTN/GCN pipeline; GCN passes an empty encoder span.
Predictions graph_model_forward(Tape& tape, BoundParams bound, const ModelDims& dims,
                                std::size_t n_gc, std::size_t n_enc,
                                const SparseMatrix& adj_norm,
                                std::span<const std::uint32_t> node_rows,
                                const PairBatch& batch) {
  check_batch(batch, adj_norm.rows());
  TapeRef h = bound.refs.at("features");
  if (!node_rows.empty()) {
    h = tape.gather_rows(h, std::vector<std::uint32_t>(node_rows.begin(), node_rows.end()));
  }
  if (tape.value(h).rows() != adj_norm.rows()) {
    fail(ErrorKind::dimension, "graph forward: adjacency " +
                                   std::to_string(adj_norm.rows()) + " nodes vs features " +
                                   tape.value(h).shape_str());
  }
  for (std::size_t l = 0; l < n_gc; ++l) {
    h = gc_forward(tape, adj_norm, h, bound.refs.at("gc." + std::to_string(l) + ".W"));
  }
  for (std::size_t e = 0; e < n_enc; ++e) {
    std::string prefix = "enc." + std::to_string(e);
    EncoderBlockRefs refs;
    refs.mha.heads.resize(dims.heads);
    for (std::size_t k = 0; k < dims.heads; ++k) {
      std::string hp = prefix + ".head." + std::to_string(k);
      refs.mha.heads[k] = AttentionHeadRefs{bound.refs.at(hp + ".Q"),
                                            bound.refs.at(hp + ".K"),
                                            bound.refs.at(hp + ".V")};
    }
    refs.mha.o = bound.refs.at(prefix + ".O");
    refs.ln1_gain = bound.refs.at(prefix + ".ln1.gain");
    refs.ln1_bias = bound.refs.at(prefix + ".ln1.bias");
    refs.ln2_gain = bound.refs.at(prefix + ".ln2.gain");
    refs.ln2_bias = bound.refs.at(prefix + ".ln2.bias");
    refs.ffn_w1 = bound.refs.at(prefix + ".ffn.W1");
    refs.ffn_b1 = bound.refs.at(prefix + ".ffn.b1");
    refs.ffn_w2 = bound.refs.at(prefix + ".ffn.W2");
    refs.ffn_b2 = bound.refs.at(prefix + ".ffn.b2");
    h = encoder_block_forward(tape, adj_norm, h, refs, dims.residual);
  }
  std::vector<std::uint32_t> users, items;
  users.reserve(batch.size());
  items.reserve(batch.size());
  for (const auto& [u, i] : batch.pairs) {
    users.push_back(u);
    items.push_back(i);
  }
  TapeRef hu = tape.gather_rows(h, std::move(users));
  TapeRef hi = tape.gather_rows(h, std::move(items));
  TapeRef pair_feats = tape.concat_cols(hu, hi);  // user-first concat
  TapeRef pred = linear_forward(tape, pair_feats,
                                LinearRefs{bound.refs.at("out.W"), bound.refs.at("out.b")});
  return Predictions{pred, std::move(bound.bindings), std::move(bound.refs)};
}

}  // namespace

GTNModel GTNModel::init(ModelDims dims, std::uint64_t seed) {
  check_dims(dims, "gtn");
  if (dims.encoder_layers < 1) {
    fail(ErrorKind::contract, "gtn: needs at least one encoder layer");
  }
  if (dims.heads < 1) fail(ErrorKind::contract, "gtn: needs at least one head");
  GTNModel m;
  m.dims = dims;
  m.features = init_features(dims.n_nodes, dims.hidden, seed);
  auto rng = make_rng(seed, kStreamWeights);
  for (std::size_t l = 0; l < dims.gc_layers; ++l) {
    m.gc.push_back(GCLayerParams{gaussian(dims.hidden, dims.hidden, rng)});
  }
  for (std::size_t e = 0; e < dims.encoder_layers; ++e) {
    m.encoders.push_back(init_encoder_block(dims, rng));
  }
  m.head.W = gaussian(2 * dims.hidden, 1, rng);
  m.head.b = Tensor(1, 1);
  return m;
}

GCNModel GCNModel::init(ModelDims dims, std::uint64_t seed) {
  check_dims(dims, "gcn");
  dims.encoder_layers = 0;
  GCNModel m;
  m.dims = dims;
  m.features = init_features(dims.n_nodes, dims.hidden, seed);
  auto rng = make_rng(seed, kStreamWeights);
  for (std::size_t l = 0; l < dims.gc_layers; ++l) {
    m.gc.push_back(GCLayerParams{gaussian(dims.hidden, dims.hidden, rng)});
  }
  m.head.W = gaussian(2 * dims.hidden, 1, rng);
  m.head.b = Tensor(1, 1);
  return m;
}

PMFModel PMFModel::init(std::size_t n_users, std::size_t n_items, std::size_t k,
                        double lambda, std::uint64_t seed) {
  if (k < 1) fail(ErrorKind::contract, "pmf: k must be >= 1");
  PMFModel m;
  m.n_users = n_users;
  m.n_items = n_items;
  m.k = k;
  m.lambda = lambda;
  auto rng = make_rng(seed, kStreamWeights);
  m.U = gaussian(n_users, k, rng);
  m.V = gaussian(n_items, k, rng);
  return m;
}

void visit_params(GTNModel& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("features", m.features);
  for (std::size_t l = 0; l < m.gc.size(); ++l) {
    fn("gc." + std::to_string(l) + ".W", m.gc[l].W);
  }
  for (std::size_t e = 0; e < m.encoders.size(); ++e) {
    visit_encoder(m.encoders[e], "enc." + std::to_string(e), fn);
  }
  fn("out.W", m.head.W);
  fn("out.b", m.head.b);
}

void visit_params(GCNModel& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("features", m.features);
  for (std::size_t l = 0; l < m.gc.size(); ++l) {
    fn("gc." + std::to_string(l) + ".W", m.gc[l].W);
  }
  fn("out.W", m.head.W);
  fn("out.b", m.head.b);
}

void visit_params(PMFModel& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("pmf.U", m.U);
  fn("pmf.V", m.V);
}

void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  std::visit([&](auto& inner) { visit_params(inner, fn); }, m);
}

std::string model_kind(const Model& m) {
  if (std::holds_alternative<GTNModel>(m)) return "gtn";
  if (std::holds_alternative<GCNModel>(m)) return "gcn";
  return "pmf";
}

Predictions gtn_forward(Tape& tape, GTNModel& m, const SparseMatrix& adj_norm,
                        std::span<const std::uint32_t> node_rows, const PairBatch& batch) {
  return graph_model_forward(tape, bind_params(tape, m), m.dims, m.gc.size(),
                             m.encoders.size(), adj_norm, node_rows, batch);
}

Predictions gcn_forward(Tape& tape, GCNModel& m, const SparseMatrix& adj_norm,
                        std::span<const std::uint32_t> node_rows, const PairBatch& batch) {
  return graph_model_forward(tape, bind_params(tape, m), m.dims, m.gc.size(), 0, adj_norm,
                             node_rows, batch);
}

Predictions pmf_forward(Tape& tape, PMFModel& m, const PairBatch& batch) {
  check_batch(batch, m.n_users + m.n_items);
  std::vector<std::uint32_t> users, items;
  users.reserve(batch.size());
  items.reserve(batch.size());
  for (const auto& [u, i] : batch.pairs) {
    if (u >= m.n_users || i < m.n_users) {
      fail(ErrorKind::index, "pmf: pair (" + std::to_string(u) + ", " + std::to_string(i) +
                                 ") is not a (user, item) pair for n_users " +
                                 std::to_string(m.n_users));
    }
    users.push_back(u);
    items.push_back(i - static_cast<std::uint32_t>(m.n_users));
  }
  BoundParams bound = bind_params(tape, m);
  TapeRef uu = tape.gather_rows(bound.refs.at("pmf.U"), std::move(users));
  TapeRef vv = tape.gather_rows(bound.refs.at("pmf.V"), std::move(items));
  TapeRef pred = tape.row_sum(tape.mul(uu, vv));
  return Predictions{pred, std::move(bound.bindings), std::move(bound.refs)};
}

Predictions model_forward(Tape& tape, Model& m, const SparseMatrix& adj_norm,
                          std::span<const std::uint32_t> node_rows, const PairBatch& batch) {
  if (auto* gtn = std::get_if<GTNModel>(&m)) {
    return gtn_forward(tape, *gtn, adj_norm, node_rows, batch);
  }
  if (auto* gcn = std::get_if<GCNModel>(&m)) {
    return gcn_forward(tape, *gcn, adj_norm, node_rows, batch);
  }
  return pmf_forward(tape, std::get<PMFModel>(m), batch);
}

TapeRef mse_loss(Tape& tape, TapeRef pred, const std::vector<double>& targets) {
  const Tensor& pv = tape.value(pred);
  if (targets.empty()) fail(ErrorKind::contract, "mse_loss: empty batch");
  if (pv.rows() != targets.size() || pv.cols() != 1) {
    fail(ErrorKind::dimension, "mse_loss: predictions " + pv.shape_str() + " vs " +
                                   std::to_string(targets.size()) + " targets");
  }
  Tensor t(targets.size(), 1, std::vector<double>(targets));
  TapeRef residual = tape.sub(pred, tape.constant(std::move(t)));
  return tape.reduce_mean(tape.mul(residual, residual));
}

TapeRef pmf_loss(Tape& tape, const Predictions& fwd, const std::vector<double>& targets,
                 double lambda, double reg_scale, TapeRef* mse_out) {
  TapeRef loss = mse_loss(tape, fwd.pred, targets);
  if (mse_out) *mse_out = loss;
  if (lambda == 0.0 || reg_scale == 0.0) return loss;
  TapeRef reg = tape.add(tape.sum_squares(fwd.refs.at("pmf.U")),
                         tape.sum_squares(fwd.refs.at("pmf.V")));
  return tape.add(loss, tape.scale(reg, lambda * reg_scale));
}

}  // namespace gtnrec
