#include "gtnrec/layers.hpp"

#include <cmath>
#include <string>

#include "gtnrec/error.hpp"

namespace gtnrec {

TapeRef gc_forward(Tape& tape, const SparseMatrix& adj_norm, TapeRef h, TapeRef w) {
  return tape.relu(tape.matmul(tape.spmm(adj_norm, h), w));
}

AttentionResult masked_attention_with_weights(Tape& tape, const SparseMatrix& mask,
                                              TapeRef h, const AttentionHeadRefs& p) {
  for (std::size_t i = 0; i < mask.rows(); ++i) {
    if (mask.row_begin(i) == mask.row_end(i)) {
      fail(ErrorKind::empty_neighborhood,
           "masked_attention: node " + std::to_string(i) +
               " has no neighbors and no self-loop in the mask");
    }
  }
  TapeRef q = tape.matmul(h, p.q);
  TapeRef k = tape.matmul(h, p.k);
  TapeRef v = tape.matmul(h, p.v);
  double d_head = static_cast<double>(tape.value(q).cols());
  TapeRef logits = tape.edge_dot(mask, q, k, 1.0 / std::sqrt(d_head));
  TapeRef weights = tape.edge_softmax(mask, logits);
  TapeRef out = tape.edge_aggregate(mask, weights, v);
  return AttentionResult{out, weights};
}

TapeRef masked_attention_forward(Tape& tape, const SparseMatrix& mask, TapeRef h,
                                 const AttentionHeadRefs& p) {
  return masked_attention_with_weights(tape, mask, h, p).out;
}

TapeRef multi_head_forward(Tape& tape, const SparseMatrix& mask, TapeRef h,
                           const MultiHeadRefs& p) {
  if (p.heads.empty()) fail(ErrorKind::contract, "multi_head_forward: no heads");
  TapeRef cat = masked_attention_forward(tape, mask, h, p.heads[0]);
  for (std::size_t k = 1; k < p.heads.size(); ++k) {
    cat = tape.concat_cols(cat, masked_attention_forward(tape, mask, h, p.heads[k]));
  }
  return tape.matmul(cat, p.o);
}

TapeRef layer_norm(Tape& tape, TapeRef h, TapeRef gain, TapeRef bias) {
  if (tape.value(h).cols() < 2) {
    fail(ErrorKind::contract, "layer_norm: needs >= 2 features, got " +
                                  tape.value(h).shape_str());
  }
  TapeRef mu = tape.row_mean(h);
  TapeRef centered = tape.sub_colvec(h, mu);
  TapeRef inv_std = tape.rsqrt(tape.row_var(h), kLayerNormEps);
  TapeRef normed = tape.mul_colvec(centered, inv_std);
  return tape.add_rowvec(tape.mul_rowvec(normed, gain), bias);
}

TapeRef encoder_block_forward(Tape& tape, const SparseMatrix& mask, TapeRef h,
                              const EncoderBlockRefs& p, bool residual) {
  TapeRef attn = multi_head_forward(tape, mask, h, p.mha);
  if (residual) attn = tape.add(attn, h);
  TapeRef z = layer_norm(tape, attn, p.ln1_gain, p.ln1_bias);
  TapeRef hidden = tape.relu(tape.add_rowvec(tape.matmul(z, p.ffn_w1), p.ffn_b1));
  TapeRef f = tape.add_rowvec(tape.matmul(hidden, p.ffn_w2), p.ffn_b2);
  if (residual) f = tape.add(f, z);
  return layer_norm(tape, f, p.ln2_gain, p.ln2_bias);
}

TapeRef linear_forward(Tape& tape, TapeRef h, const LinearRefs& p) {
  return tape.add_rowvec(tape.matmul(h, p.w), p.b);
}

}  // namespace gtnrec
