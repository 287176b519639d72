#pragma once

#include <cstddef>
#include <vector>

#include "gtnrec/sparse.hpp"
#include "gtnrec/tape.hpp"
#include "gtnrec/tensor.hpp"

namespace gtnrec {

inline constexpr double kLayerNormEps = 1e-5;

// Parameter records. Values are plain tensors; a forward pass binds them
// onto a tape as leaves and wires the layer through the refs below.

struct GCLayerParams {
  Tensor W;  // c_in x c_out
};

struct AttentionHeadParams {
  Tensor Q, K, V;  // d_model x d_head
};

struct MultiHeadParams {
  std::vector<AttentionHeadParams> heads;
  Tensor O;  // (K * d_head) x d_model
};

struct EncoderBlockParams {
  MultiHeadParams mha;
  Tensor ln1_gain, ln1_bias;  // 1 x d_model
  Tensor ln2_gain, ln2_bias;  // 1 x d_model
  Tensor ffn_w1;              // d_model x d_ff
  Tensor ffn_b1;              // 1 x d_ff
  Tensor ffn_w2;              // d_ff x d_model
  Tensor ffn_b2;              // 1 x d_model
};

struct LinearParams {
  Tensor W;  // in x out
  Tensor b;  // 1 x out
};

// Tape-bound views of the records above.

struct AttentionHeadRefs {
  TapeRef q, k, v;
};

struct MultiHeadRefs {
  std::vector<AttentionHeadRefs> heads;
  TapeRef o;
};

struct EncoderBlockRefs {
  MultiHeadRefs mha;
  TapeRef ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  TapeRef ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct LinearRefs {
  TapeRef w, b;
};

/// One graph convolution: relu(adj_norm * h * w).
TapeRef gc_forward(Tape& tape, const SparseMatrix& adj_norm, TapeRef h, TapeRef w);

struct AttentionResult {
  TapeRef out;      // n x d_head
  TapeRef weights;  // nnz x 1, aligned with mask's CSR storage
};

/// Scaled dot-product attention where node i attends only to the nodes
/// active in row i of `mask` (the mask must include the diagonal so every
/// node attends at least to itself). Logits are dot(q_i, k_j)/sqrt(d_head).
AttentionResult masked_attention_with_weights(Tape& tape, const SparseMatrix& mask,
                                              TapeRef h, const AttentionHeadRefs& p);
TapeRef masked_attention_forward(Tape& tape, const SparseMatrix& mask, TapeRef h,
                                 const AttentionHeadRefs& p);

/// Concatenation of all head outputs, projected by O back to d_model.
TapeRef multi_head_forward(Tape& tape, const SparseMatrix& mask, TapeRef h,
                           const MultiHeadRefs& p);

/// Per-row feature normalization with affine: (x - mean)/sqrt(var + eps)
/// * gain + bias. Population variance; requires at least two columns.
TapeRef layer_norm(Tape& tape, TapeRef h, TapeRef gain, TapeRef bias);

/// Encoder block: multi-head attention, then LN -> 2-layer relu MLP -> LN.
/// The printed composition has no skip connections; `residual` adds the
/// two standard ones around attention and the MLP.
TapeRef encoder_block_forward(Tape& tape, const SparseMatrix& mask, TapeRef h,
                              const EncoderBlockRefs& p, bool residual = false);

/// Affine map h * W + b.
TapeRef linear_forward(Tape& tape, TapeRef h, const LinearRefs& p);

}  // namespace gtnrec
