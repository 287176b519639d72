#pragma once

// Shared helpers for the unit and acceptance suites: independent naive
// oracles (plain loops, no tape), finite-difference gradient checking,
// random instance generators, synthetic datasets and temp directories.
// Everything here is test-only and deliberately avoids the library's own
// computation paths wherever it serves as an oracle for them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gtnrec/graph.hpp"
#include "gtnrec/model.hpp"
#include "gtnrec/rng.hpp"
#include "gtnrec/tape.hpp"

namespace testsupport {

using gtnrec::PairBatch;
using gtnrec::RatingRecord;
using gtnrec::SparseMatrix;
using gtnrec::Tape;
using gtnrec::TapeRef;
using gtnrec::Tensor;
using gtnrec::TrustRecord;

// ---------------------------------------------------------------------------
// random instances
// ---------------------------------------------------------------------------

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& x : t.data()) x = dist(rng);
  return t;
}

/// Uniform in [lo, hi] but at least `margin` away from zero; keeps
/// finite-difference probes away from the relu kink.
inline Tensor random_tensor_off_zero(std::size_t rows, std::size_t cols,
                                     std::mt19937_64& rng, double margin = 5e-3) {
  Tensor t = random_tensor(rows, cols, rng);
  for (double& x : t.data()) {
    if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
  }
  return t;
}

/// Random boolean pattern with at least one active entry per row; with
/// `include_diag` every (i, i) is active (requires square dims).
inline SparseMatrix random_pattern(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                   double density = 0.4, bool include_diag = false) {
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> coo;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::uint32_t i = 0; i < rows; ++i) {
    bool any = false;
    for (std::uint32_t j = 0; j < cols; ++j) {
      bool on = (include_diag && i == j) || u01(rng) < density;
      if (on) {
        coo.emplace_back(i, j, 1.0);
        any = true;
      }
    }
    if (!any) {
      std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(cols - 1));
      coo.emplace_back(i, pick(rng), 1.0);
    }
  }
  return SparseMatrix::from_coo(rows, cols, std::move(coo));
}

/// Random symmetric zero-diagonal binary adjacency (an undirected graph).
inline SparseMatrix random_adjacency(std::size_t n, std::mt19937_64& rng,
                                     double density = 0.2) {
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> coo;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) {
      if (u01(rng) < density) {
        coo.emplace_back(i, j, 1.0);
        coo.emplace_back(j, i, 1.0);
      }
    }
  }
  return SparseMatrix::from_coo(n, n, std::move(coo));
}

inline SparseMatrix random_csr(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                               double density = 0.2) {
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> coo;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      if (u01(rng) < density) coo.emplace_back(i, j, val(rng));
    }
  }
  return SparseMatrix::from_coo(rows, cols, std::move(coo));
}

// ---------------------------------------------------------------------------
// naive oracles
// ---------------------------------------------------------------------------

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

inline Tensor naive_densify(const SparseMatrix& s) {
  Tensor d(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t k = s.row_begin(i); k < s.row_end(i); ++k) {
      d.at(i, s.col_at(k)) += s.value_at(k);
    }
  }
  return d;
}

/// Dense evaluation of the renormalization: D^(-1/2) (A + I) D^(-1/2)
/// with D the degree matrix of A + I.
inline Tensor naive_normalized_adjacency(const Tensor& adj) {
  std::size_t n = adj.rows();
  Tensor a_hat(n, n);
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) deg[i] += adj.at(i, j) + (i == j ? 1.0 : 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double aij = adj.at(i, j) + (i == j ? 1.0 : 0.0);
      a_hat.at(i, j) = aij / (std::sqrt(deg[i]) * std::sqrt(deg[j]));
    }
  }
  return a_hat;
}

/// Direct per-node evaluation of one attention head: for every node i,
/// logits over its mask row, plain softmax, weighted sum of value rows.
inline Tensor naive_masked_attention(const Tensor& h, const SparseMatrix& mask,
                                     const Tensor& q_w, const Tensor& k_w,
                                     const Tensor& v_w) {
  Tensor q = naive_matmul(h, q_w);
  Tensor k = naive_matmul(h, k_w);
  Tensor v = naive_matmul(h, v_w);
  double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor out(h.rows(), v.cols());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    std::vector<std::uint32_t> nbrs;
    for (std::size_t e = mask.row_begin(i); e < mask.row_end(i); ++e) {
      nbrs.push_back(mask.col_at(e));
    }
    std::vector<double> logits(nbrs.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < nbrs.size(); ++t) {
      double acc = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) acc += q.at(i, c) * k.at(nbrs[t], c);
      logits[t] = acc * scale;
      mx = std::max(mx, logits[t]);
    }
    double z = 0.0;
    std::vector<double> w(nbrs.size());
    for (std::size_t t = 0; t < nbrs.size(); ++t) {
      w[t] = std::exp(logits[t] - mx);
      z += w[t];
    }
    for (std::size_t t = 0; t < nbrs.size(); ++t) {
      double weight = w[t] / z;
      for (std::size_t c = 0; c < v.cols(); ++c) out.at(i, c) += weight * v.at(nbrs[t], c);
    }
  }
  return out;
}

inline Tensor naive_layer_norm(const Tensor& h, const Tensor& gain, const Tensor& bias,
                               double eps = 1e-5) {
  Tensor out(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < h.cols(); ++j) mean += h.at(i, j);
    mean /= static_cast<double>(h.cols());
    double var = 0.0;
    for (std::size_t j = 0; j < h.cols(); ++j) {
      double d = h.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(h.cols());
    for (std::size_t j = 0; j < h.cols(); ++j) {
      out.at(i, j) = (h.at(i, j) - mean) / std::sqrt(var + eps) * gain.at(0, j) +
                     bias.at(0, j);
    }
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double mx = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
  }
  return mx;
}

// ---------------------------------------------------------------------------
// finite-difference gradient oracle
// ---------------------------------------------------------------------------

/// A differentiable computation under test: `build` wires the leaves into
/// an output of any shape. The harness scalarizes with a fixed random
/// weighting so every output entry participates.
struct FdCase {
  std::string name;
  std::vector<Tensor> leaves;
  std::function<TapeRef(Tape&, const std::vector<TapeRef>&)> build;
  unsigned weight_seed = 1234;
};

struct FdOutcome {
  double max_rel_err = 0.0;
  std::string worst;  // "<leaf>[i]" of the worst entry
};

inline double fd_scalar(const FdCase& c, const std::vector<Tensor>& leaf_values,
                        const Tensor& weights) {
  Tape tape;
  std::vector<TapeRef> refs;
  refs.reserve(leaf_values.size());
  for (const Tensor& t : leaf_values) refs.push_back(tape.leaf(t));
  TapeRef out = c.build(tape, refs);
  TapeRef loss = tape.reduce_sum(tape.mul(out, tape.constant(weights)));
  return tape.value(loss).at(0, 0);
}

inline FdOutcome check_gradients(const FdCase& c, double step = 1e-6) {
  // fixed weighting matched to the output shape
  Tensor weights;
  {
    Tape probe;
    std::vector<TapeRef> refs;
    for (const Tensor& t : c.leaves) refs.push_back(probe.leaf(t));
    const Tensor& out = probe.value(c.build(probe, refs));
    std::mt19937_64 wrng(c.weight_seed);
    weights = random_tensor(out.rows(), out.cols(), wrng, 0.25, 1.0);
  }

  // analytic gradients
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<TapeRef> refs;
    for (const Tensor& t : c.leaves) refs.push_back(tape.leaf(t));
    TapeRef out = c.build(tape, refs);
    TapeRef loss = tape.reduce_sum(tape.mul(out, tape.constant(weights)));
    tape.backward(loss);
    for (TapeRef r : refs) analytic.push_back(tape.grad(r));
  }

  FdOutcome outcome;
  std::vector<Tensor> perturbed = c.leaves;
  for (std::size_t l = 0; l < c.leaves.size(); ++l) {
    for (std::size_t i = 0; i < c.leaves[l].size(); ++i) {
      double original = perturbed[l].data()[i];
      perturbed[l].data()[i] = original + step;
      double up = fd_scalar(c, perturbed, weights);
      perturbed[l].data()[i] = original - step;
      double down = fd_scalar(c, perturbed, weights);
      perturbed[l].data()[i] = original;
      double numeric = (up - down) / (2.0 * step);
      double a = analytic[l].data()[i];
      double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > outcome.max_rel_err) {
        outcome.max_rel_err = err;
        outcome.worst = c.name + ":" + std::to_string(l) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return outcome;
}

/// One FdCase per differentiable primitive, with fresh random shapes and
/// values drawn from `seed`. Shared by the unit suite and the acceptance
/// gradient criterion.
inline std::vector<FdCase> primitive_fd_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FdCase> cases;

  {
    std::size_t n = 1 + rng() % 8, m = 1 + rng() % 8;
    cases.push_back({"add",
                     {random_tensor(n, m, rng), random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.add(l[0], l[1]); },
                     1234});
    cases.push_back({"sub",
                     {random_tensor(n, m, rng), random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.sub(l[0], l[1]); },
                     1235});
    cases.push_back({"mul",
                     {random_tensor(n, m, rng), random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.mul(l[0], l[1]); },
                     1236});
    cases.push_back({"mul_same_ref",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.mul(l[0], l[0]); },
                     1237});
    cases.push_back({"scale",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.scale(l[0], -1.7); },
                     1238});
    cases.push_back({"transpose",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.transpose(l[0]); },
                     1239});
    cases.push_back({"relu",
                     {random_tensor_off_zero(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.relu(l[0]); },
                     1240});
    cases.push_back({"rsqrt",
                     {random_tensor(n, m, rng, 0.2, 2.0)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.rsqrt(l[0], 1e-5); },
                     1241});
  }
  {
    std::size_t n = 1 + rng() % 6, k = 1 + rng() % 6, m = 1 + rng() % 6;
    cases.push_back({"matmul",
                     {random_tensor(n, k, rng), random_tensor(k, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.matmul(l[0], l[1]); },
                     1242});
  }
  {
    std::size_t n = 2 + rng() % 6, m = 2 + rng() % 6, c = 1 + rng() % 4;
    auto s = std::make_shared<SparseMatrix>(random_csr(n, m, rng, 0.4));
    cases.push_back({"spmm",
                     {random_tensor(m, c, rng)},
                     [s](Tape& t, const std::vector<TapeRef>& l) { return t.spmm(*s, l[0]); },
                     1243});
  }
  {
    std::size_t n = 3 + rng() % 5, m = 1 + rng() % 6;
    std::vector<std::uint32_t> rows = {0, 2, 2, static_cast<std::uint32_t>(n - 1)};
    cases.push_back({"gather_rows",
                     {random_tensor(n, m, rng)},
                     [rows](Tape& t, const std::vector<TapeRef>& l) {
                       return t.gather_rows(l[0], rows);
                     },
                     1244});
  }
  {
    std::size_t n = 1 + rng() % 6;
    cases.push_back({"concat_cols",
                     {random_tensor(n, 1 + rng() % 4, rng), random_tensor(n, 1 + rng() % 4, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) {
                       return t.concat_cols(l[0], l[1]);
                     },
                     1245});
  }
  {
    std::size_t n = 1 + rng() % 6, m = 2 + rng() % 6;
    cases.push_back({"row_mean",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.row_mean(l[0]); },
                     1246});
    cases.push_back({"row_var",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.row_var(l[0]); },
                     1247});
    cases.push_back({"row_sum",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.row_sum(l[0]); },
                     1248});
    cases.push_back({"reduce_mean",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.reduce_mean(l[0]); },
                     1249});
    cases.push_back({"reduce_sum",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.reduce_sum(l[0]); },
                     1250});
    cases.push_back({"sum_squares",
                     {random_tensor(n, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) { return t.sum_squares(l[0]); },
                     1251});
    cases.push_back({"sub_colvec",
                     {random_tensor(n, m, rng), random_tensor(n, 1, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) {
                       return t.sub_colvec(l[0], l[1]);
                     },
                     1252});
    cases.push_back({"mul_colvec",
                     {random_tensor(n, m, rng), random_tensor(n, 1, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) {
                       return t.mul_colvec(l[0], l[1]);
                     },
                     1253});
    cases.push_back({"mul_rowvec",
                     {random_tensor(n, m, rng), random_tensor(1, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) {
                       return t.mul_rowvec(l[0], l[1]);
                     },
                     1254});
    cases.push_back({"add_rowvec",
                     {random_tensor(n, m, rng), random_tensor(1, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) {
                       return t.add_rowvec(l[0], l[1]);
                     },
                     1255});
  }
  {
    std::size_t n = 2 + rng() % 5, m = 2 + rng() % 5;
    auto mask = std::make_shared<SparseMatrix>(random_pattern(n, m, rng, 0.5));
    cases.push_back({"softmax_rows",
                     {random_tensor(n, m, rng, -2.0, 2.0)},
                     [mask](Tape& t, const std::vector<TapeRef>& l) {
                       return t.softmax_rows(l[0], *mask);
                     },
                     1256});
  }
  {
    std::size_t n = 3 + rng() % 4, d = 2 + rng() % 4;
    auto pattern = std::make_shared<SparseMatrix>(random_pattern(n, n, rng, 0.4, true));
    cases.push_back({"edge_dot",
                     {random_tensor(n, d, rng), random_tensor(n, d, rng)},
                     [pattern](Tape& t, const std::vector<TapeRef>& l) {
                       return t.edge_dot(*pattern, l[0], l[1], 0.7);
                     },
                     1257});
    Tensor edge_vals = random_tensor(pattern->nnz(), 1, rng, -2.0, 2.0);
    cases.push_back({"edge_softmax",
                     {edge_vals},
                     [pattern](Tape& t, const std::vector<TapeRef>& l) {
                       return t.edge_softmax(*pattern, l[0]);
                     },
                     1258});
    cases.push_back({"edge_aggregate",
                     {edge_vals, random_tensor(n, d, rng)},
                     [pattern](Tape& t, const std::vector<TapeRef>& l) {
                       return t.edge_aggregate(*pattern, l[0], l[1]);
                     },
                     1259});
  }
  {
    std::size_t n = 2 + rng() % 5, m = 2 + rng() % 6;
    cases.push_back({"layer_norm",
                     {random_tensor(n, m, rng), random_tensor(1, m, rng),
                      random_tensor(1, m, rng)},
                     [](Tape& t, const std::vector<TapeRef>& l) {
                       return gtnrec::layer_norm(t, l[0], l[1], l[2]);
                     },
                     1260});
  }
  return cases;
}

// ---------------------------------------------------------------------------
// smooth GTN instances for gradient checking
// ---------------------------------------------------------------------------

/// Smallest |relu input| across the whole GTN pipeline. Central finite
/// differences are only valid away from the relu kink, so FD instances
/// must keep a margin well above the probe step.
inline double gtn_relu_margin(gtnrec::GTNModel& m, const SparseMatrix& adj) {
  using gtnrec::AttentionHeadRefs;
  using gtnrec::EncoderBlockRefs;
  double margin = std::numeric_limits<double>::infinity();
  auto track = [&margin](const Tensor& pre) {
    for (double v : pre.data()) margin = std::min(margin, std::abs(v));
  };
  Tape t;
  TapeRef h = t.leaf(m.features);
  for (auto& gc : m.gc) {
    TapeRef pre = t.matmul(t.spmm(adj, h), t.leaf(gc.W));
    track(t.value(pre));
    h = t.relu(pre);
  }
  for (auto& e : m.encoders) {
    gtnrec::MultiHeadRefs mha;
    for (auto& head : e.mha.heads) {
      mha.heads.push_back(AttentionHeadRefs{t.leaf(head.Q), t.leaf(head.K), t.leaf(head.V)});
    }
    mha.o = t.leaf(e.mha.O);
    TapeRef attn = gtnrec::multi_head_forward(t, adj, h, mha);
    TapeRef z = gtnrec::layer_norm(t, attn, t.leaf(e.ln1_gain), t.leaf(e.ln1_bias));
    TapeRef pre = t.add_rowvec(t.matmul(z, t.leaf(e.ffn_w1)), t.leaf(e.ffn_b1));
    track(t.value(pre));
    TapeRef f = t.add_rowvec(t.matmul(t.relu(pre), t.leaf(e.ffn_w2)), t.leaf(e.ffn_b2));
    h = gtnrec::layer_norm(t, f, t.leaf(e.ln2_gain), t.leaf(e.ln2_bias));
  }
  return margin;
}

struct GtnFdInstance {
  gtnrec::GTNModel model;
  std::shared_ptr<SparseMatrix> adj;
  std::shared_ptr<PairBatch> batch;
  std::uint64_t seed = 0;
};

/// Deterministically picks the first seed at or above `base_seed` whose
/// model keeps every relu input at least `margin` away from zero.
inline GtnFdInstance make_smooth_gtn_instance(const gtnrec::Graph& g,
                                              gtnrec::ModelDims dims,
                                              const PairBatch& batch,
                                              std::uint64_t base_seed,
                                              double margin = 1e-4) {
  auto adj = std::make_shared<SparseMatrix>(gtnrec::normalize_adjacency(g));
  for (std::uint64_t seed = base_seed; seed < base_seed + 200; ++seed) {
    gtnrec::GTNModel model = gtnrec::GTNModel::init(dims, seed);
    if (gtn_relu_margin(model, *adj) > margin) {
      return GtnFdInstance{std::move(model), adj, std::make_shared<PairBatch>(batch), seed};
    }
  }
  throw std::runtime_error("no kink-free instance found near seed " +
                           std::to_string(base_seed));
}

// ---------------------------------------------------------------------------
// synthetic datasets
// ---------------------------------------------------------------------------

struct SynthDataset {
  std::vector<RatingRecord> ratings;
  std::vector<TrustRecord> trust;
};

/// Community-structured social rating data. The rating signal is additive
/// (user effect + item effect), which is the structure a concat-then-
/// linear rating head can express. User effects are shared within a
/// community and item effects within a category, so the trust graph and
/// co-rating structure carry most of the signal; hub items are rated by
/// everyone with pure noise, and a slice of trust edges crosses
/// communities, rewarding models that can discount uninformative
/// neighbors.
struct SynthSpec {
  std::size_t users = 737;
  std::size_t items = 2000;
  std::size_t ratings = 28832;
  std::size_t communities = 25;
  double trust_per_user = 15.0;
  double within_community_trust = 0.7;
  double within_community_rating = 0.8;
  double base_score = 4.2;
  double effect_scale = 0.9;    // community / category effect range
  double personal_scale = 0.12; // per-user and per-item idiosyncrasy
  double noise = 0.35;
  std::size_t hub_items = 20;
  double hub_rating_share = 0.08;
  bool round_to_stars = true;
  std::uint64_t seed = 7;
};

inline SynthDataset make_synth(const SynthSpec& spec) {
  std::mt19937_64 rng(gtnrec::mix_seed(spec.seed, 77));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::size_t g = std::max<std::size_t>(1, spec.communities);
  std::vector<std::size_t> user_comm(spec.users), item_comm(spec.items);
  std::uniform_int_distribution<std::size_t> comm_pick(0, g - 1);
  for (auto& c : user_comm) c = comm_pick(rng);
  for (auto& c : item_comm) c = comm_pick(rng);

  std::vector<double> comm_effect(g), cat_effect(g);
  std::uniform_real_distribution<double> effect(-spec.effect_scale, spec.effect_scale);
  for (auto& e : comm_effect) e = effect(rng);
  for (auto& e : cat_effect) e = effect(rng);

  std::vector<std::vector<std::size_t>> items_of(g);
  for (std::size_t i = spec.hub_items; i < spec.items; ++i) {
    items_of[item_comm[i]].push_back(i);
  }
  for (std::size_t c = 0; c < g; ++c) {
    if (items_of[c].empty()) items_of[c].push_back(spec.hub_items % spec.items);
  }

  // skewed user activity, inverse-cdf sampling over fixed weights
  std::vector<double> cumulative(spec.users);
  {
    std::vector<double> weight(spec.users);
    for (std::size_t u = 0; u < spec.users; ++u) {
      weight[u] = 1.0 / std::pow(static_cast<double>(u % 97 + 1), 0.6);
    }
    double acc = 0.0;
    for (std::size_t u = 0; u < spec.users; ++u) {
      acc += weight[u];
      cumulative[u] = acc;
    }
    for (double& x : cumulative) x /= acc;
  }
  auto sample_user = [&]() {
    double x = u01(rng);
    return static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), x) - cumulative.begin());
  };

  std::vector<double> personal(spec.users), quirk(spec.items);
  for (auto& b : personal) b = spec.personal_scale * gauss(rng);
  for (auto& b : quirk) b = spec.personal_scale * gauss(rng);

  SynthDataset data;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::uniform_int_distribution<std::size_t> any_item(spec.hub_items, spec.items - 1);
  std::uniform_int_distribution<int> star(1, 5);
  std::size_t guard = 0;
  while (data.ratings.size() < spec.ratings && guard < spec.ratings * 40) {
    ++guard;
    std::size_t u = std::min(sample_user(), spec.users - 1);
    std::size_t i;
    double score;
    if (spec.hub_items > 0 && u01(rng) < spec.hub_rating_share) {
      std::uniform_int_distribution<std::size_t> hub(0, spec.hub_items - 1);
      i = hub(rng);
      score = star(rng);  // hubs carry no preference signal
    } else {
      if (u01(rng) < spec.within_community_rating) {
        const auto& pool = items_of[user_comm[u]];
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        i = pool[pick(rng)];
      } else {
        i = any_item(rng);
      }
      score = spec.base_score + comm_effect[user_comm[u]] + cat_effect[item_comm[i]] +
              personal[u] + quirk[i] + spec.noise * gauss(rng);
    }
    if (!seen.emplace(u, i).second) continue;
    double value = spec.round_to_stars ? std::round(score) : score;
    value = std::clamp(value, 1.0, 5.0);
    data.ratings.push_back(RatingRecord{"u" + std::to_string(u), "i" + std::to_string(i),
                                        value});
  }

  std::set<std::pair<std::size_t, std::size_t>> trust_seen;
  std::vector<std::vector<std::size_t>> users_of(g);
  for (std::size_t u = 0; u < spec.users; ++u) users_of[user_comm[u]].push_back(u);
  std::uniform_int_distribution<std::size_t> any_user(0, spec.users - 1);
  for (std::size_t u = 0; u < spec.users; ++u) {
    double want = spec.trust_per_user;
    std::size_t count = static_cast<std::size_t>(want);
    if (u01(rng) < want - static_cast<double>(count)) ++count;
    for (std::size_t e = 0; e < count; ++e) {
      std::size_t v;
      const auto& pool = users_of[user_comm[u]];
      if (u01(rng) < spec.within_community_trust && pool.size() > 1) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        v = pool[pick(rng)];
      } else {
        v = any_user(rng);
      }
      if (v == u) continue;
      if (!trust_seen.emplace(u, v).second) continue;
      data.trust.push_back(TrustRecord{"u" + std::to_string(u), "u" + std::to_string(v)});
    }
  }
  return data;
}

/// Noiseless additive ratings (user effect + item effect, continuous in
/// [1, 5]) over a random bipartite graph plus a user trust chain. This is
/// the memorization oracle: a concat-linear rating head can drive the
/// training error to zero on it.
inline SynthDataset make_additive_synth(std::size_t users, std::size_t items,
                                        std::size_t ratings, std::uint64_t seed,
                                        double noise = 0.0) {
  std::mt19937_64 rng(gtnrec::mix_seed(seed, 123));
  std::uniform_real_distribution<double> eff(-0.9, 0.9);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> user_effect(users), item_effect(items);
  for (auto& v : user_effect) v = eff(rng);
  for (auto& v : item_effect) v = eff(rng);

  SynthDataset data;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::uniform_int_distribution<std::size_t> pu(0, users - 1), pi(0, items - 1);
  std::size_t guard = 0;
  while (data.ratings.size() < ratings && guard < ratings * 50) {
    ++guard;
    std::size_t u = pu(rng), i = pi(rng);
    if (!seen.emplace(u, i).second) continue;
    double value = 3.0 + user_effect[u] + item_effect[i] + noise * gauss(rng);
    data.ratings.push_back(RatingRecord{"u" + std::to_string(u), "i" + std::to_string(i),
                                        std::clamp(value, 1.0, 5.0)});
  }
  for (std::size_t u = 0; u + 1 < users; ++u) {
    data.trust.push_back(TrustRecord{"u" + std::to_string(u), "u" + std::to_string(u + 1)});
  }
  return data;
}

inline void write_dataset_csvs(const std::string& dir, const SynthDataset& data) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/ratings.csv");
    out << "user,item,rating\n";
    for (const auto& r : data.ratings) {
      out << r.user << ',' << r.item << ',' << r.rating << '\n';
    }
  }
  {
    std::ofstream out(dir + "/trust.csv");
    out << "trustor,trustee\n";
    for (const auto& t : data.trust) out << t.trustor << ',' << t.trustee << '\n';
  }
}

/// Small unstructured dataset for plumbing tests.
inline SynthDataset tiny_dataset(std::size_t users, std::size_t items, std::size_t ratings,
                                 std::uint64_t seed) {
  SynthSpec spec;
  spec.users = users;
  spec.items = items;
  spec.ratings = ratings;
  spec.communities = std::max<std::size_t>(2, users / 8);
  spec.trust_per_user = 3.0;
  spec.hub_items = 0;
  spec.seed = seed;
  return make_synth(spec);
}

// ---------------------------------------------------------------------------
// temp dirs
// ---------------------------------------------------------------------------

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() / ("gtnrec_" + tag);
    std::filesystem::remove_all(base);
    std::filesystem::create_directories(base);
    path_ = base.string();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace testsupport
