#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "gtnrec/sparse.hpp"
#include "gtnrec/tensor.hpp"

namespace gtnrec {

/// Handle to a node recorded on a Tape. Default-constructed refs are
/// detached. The tape serial lets a Tape reject refs minted by another
/// tape instead of silently aliasing node ids.
struct TapeRef {
  std::int32_t id = -1;
  std::uint64_t tape = 0;

  bool attached() const noexcept { return id >= 0; }
};

/// Reverse-mode autodiff tape. Records every forward operation in
/// topological order (inputs always precede their consumers) and replays
/// the recorded backward rules in reverse to accumulate gradients.
///
/// A tape is built fresh for each forward/backward pass and owned by one
/// thread. Tensors referenced through a TapeRef live inside the tape;
/// SparseMatrix arguments are captured by pointer and must outlive the
/// tape (graph structures always do, they belong to the Graph/SubBatch).
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Differentiable leaf (a model parameter). Gradient is available after
  /// backward().
  TapeRef leaf(Tensor value);
  /// Non-differentiable leaf (targets, fixed coefficients).
  TapeRef constant(Tensor value);

  // -- elementwise and structural operations ------------------------------
  TapeRef add(TapeRef a, TapeRef b);
  TapeRef sub(TapeRef a, TapeRef b);
  TapeRef mul(TapeRef a, TapeRef b);
  TapeRef scale(TapeRef a, double factor);
  TapeRef transpose(TapeRef a);
  TapeRef relu(TapeRef a);
  /// Elementwise 1/sqrt(x + shift); x + shift must stay positive.
  TapeRef rsqrt(TapeRef a, double shift);

  // -- products ------------------------------------------------------------
  TapeRef matmul(TapeRef a, TapeRef b);
  /// Sparse-dense product s * d. s is a constant; the backward rule for d
  /// is s^T * grad.
  TapeRef spmm(const SparseMatrix& s, TapeRef d);

  // -- shape manipulation ---------------------------------------------------
  /// Selects rows by index, in order; indices may repeat (their gradients
  /// accumulate).
  TapeRef gather_rows(TapeRef a, std::vector<std::uint32_t> rows);
  TapeRef concat_cols(TapeRef a, TapeRef b);

  // -- reductions ------------------------------------------------------------
  TapeRef row_mean(TapeRef a);   // n x c -> n x 1
  TapeRef row_var(TapeRef a);    // population variance, n x c -> n x 1
  TapeRef row_sum(TapeRef a);    // n x c -> n x 1
  TapeRef reduce_mean(TapeRef a);  // -> 1 x 1
  TapeRef reduce_sum(TapeRef a);   // -> 1 x 1
  TapeRef sum_squares(TapeRef a);  // -> 1 x 1

  // -- broadcasts ------------------------------------------------------------
  TapeRef sub_colvec(TapeRef a, TapeRef v);  // a: n x c, v: n x 1
  TapeRef mul_colvec(TapeRef a, TapeRef v);  // a: n x c, v: n x 1
  TapeRef mul_rowvec(TapeRef a, TapeRef v);  // a: n x c, v: 1 x c
  TapeRef add_rowvec(TapeRef a, TapeRef v);  // a: n x c, v: 1 x c

  // -- masked softmax ---------------------------------------------------------
  /// Per-row softmax over the entries active in mask's pattern; inactive
  /// outputs are exactly zero. Stabilized by subtracting the row max over
  /// active entries. A row whose mask is empty raises empty_neighborhood.
  TapeRef softmax_rows(TapeRef logits, const SparseMatrix& mask);

  // -- edge-indexed operations over a shared CSR pattern ----------------------
  // These express neighbor-masked attention without materializing an
  // n x n matrix: a value vector of shape nnz x 1 holds one scalar per
  // pattern entry (i, j), ordered as the pattern's CSR storage.

  /// Per edge (i, j): scale * dot(a.row(i), b.row(j)). Output nnz x 1.
  TapeRef edge_dot(const SparseMatrix& pattern, TapeRef a, TapeRef b, double scale);
  /// Softmax over each row's segment of edge values. Output nnz x 1.
  TapeRef edge_softmax(const SparseMatrix& pattern, TapeRef edge_vals);
  /// out.row(i) = sum over edges (i, j) of edge_vals[e] * d.row(j).
  TapeRef edge_aggregate(const SparseMatrix& pattern, TapeRef edge_vals, TapeRef d);

  // -- access ------------------------------------------------------------------
  const Tensor& value(TapeRef r) const;
  /// Gradient of the last backward()'s loss w.r.t. this node. Only valid
  /// after backward(); unreachable nodes hold all-zero gradients.
  const Tensor& grad(TapeRef r) const;

  /// Accumulates gradients of `loss` (must be 1 x 1 and recorded on this
  /// tape) into every node. Calling backward twice on one tape is an
  /// error: the tape is single-shot by design.
  void backward(TapeRef loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void()> backprop;  // adds into parents' grads
  };

  Node& node(TapeRef r);
  const Node& node(TapeRef r) const;
  void check_ref(TapeRef r, const char* op) const;
  TapeRef push(Tensor value, bool needs_grad, std::function<void()> backprop);

  std::uint64_t serial_;
  std::deque<Node> nodes_;  // deque: stable addresses for backward closures
  bool backward_done_ = false;
};

}  // namespace gtnrec
