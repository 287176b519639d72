#include "gtnrec/tape.hpp"

#include <atomic>
#include <cmath>
#include <utility>

#include "gtnrec/error.hpp"

namespace gtnrec {

namespace {

std::uint64_t next_serial() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::dimension, std::string(op) + ": shapes " + a.shape_str() + " and " +
                                   b.shape_str() + " differ");
  }
}

}  // namespace

Tape::Tape() : serial_(next_serial()) {}

Tape::Node& Tape::node(TapeRef r) { return nodes_[static_cast<std::size_t>(r.id)]; }
const Tape::Node& Tape::node(TapeRef r) const {
  return nodes_[static_cast<std::size_t>(r.id)];
}

void Tape::check_ref(TapeRef r, const char* op) const {
  if (!r.attached()) {
    fail(ErrorKind::not_on_tape, std::string(op) + ": detached tensor (not on tape)");
  }
  if (r.tape != serial_ || static_cast<std::size_t>(r.id) >= nodes_.size()) {
    fail(ErrorKind::not_on_tape, std::string(op) + ": ref does not belong to this tape");
  }
}

TapeRef Tape::push(Tensor value, bool needs_grad, std::function<void()> backprop) {
  nodes_.push_back(Node{std::move(value), Tensor(), needs_grad, std::move(backprop)});
  return TapeRef{static_cast<std::int32_t>(nodes_.size() - 1), serial_};
}

TapeRef Tape::leaf(Tensor value) { return push(std::move(value), true, nullptr); }

TapeRef Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

const Tensor& Tape::value(TapeRef r) const {
  check_ref(r, "value");
  return node(r).value;
}

const Tensor& Tape::grad(TapeRef r) const {
  check_ref(r, "grad");
  if (!backward_done_) {
    fail(ErrorKind::contract, "grad: backward has not been run on this tape");
  }
  return node(r).grad;
}

void Tape::backward(TapeRef loss) {
  check_ref(loss, "backward");
  if (backward_done_) {
    fail(ErrorKind::contract, "backward: tape already differentiated; build a fresh tape");
  }
  const Tensor& lv = node(loss).value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    fail(ErrorKind::contract, "backward: loss must be 1x1, got " + lv.shape_str());
  }
  for (Node& n : nodes_) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
  }
  node(loss).grad.at(0, 0) = 1.0;
  backward_done_ = true;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop && n.needs_grad) n.backprop();
  }
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

TapeRef Tape::add(TapeRef a, TapeRef b) {
  check_ref(a, "add");
  check_ref(b, "add");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require_same_shape(av, bv, "add");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] + bv.data()[i];
  bool ng = node(a).needs_grad || node(b).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, b]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    Tensor& gb = node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data()[i] += g.data()[i];
      gb.data()[i] += g.data()[i];
    }
  });
}

TapeRef Tape::sub(TapeRef a, TapeRef b) {
  check_ref(a, "sub");
  check_ref(b, "sub");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require_same_shape(av, bv, "sub");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] - bv.data()[i];
  bool ng = node(a).needs_grad || node(b).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, b]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    Tensor& gb = node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data()[i] += g.data()[i];
      gb.data()[i] -= g.data()[i];
    }
  });
}

TapeRef Tape::mul(TapeRef a, TapeRef b) {
  check_ref(a, "mul");
  check_ref(b, "mul");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  require_same_shape(av, bv, "mul");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
  bool ng = node(a).needs_grad || node(b).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, b]() {
    const Tensor& g = node(self).grad;
    const Tensor& av2 = node(a).value;
    const Tensor& bv2 = node(b).value;
    Tensor& ga = node(a).grad;
    Tensor& gb = node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data()[i] += g.data()[i] * bv2.data()[i];
      gb.data()[i] += g.data()[i] * av2.data()[i];
    }
  });
}

TapeRef Tape::scale(TapeRef a, double factor) {
  check_ref(a, "scale");
  const Tensor& av = node(a).value;
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] * factor;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a, factor]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * factor;
  });
}

TapeRef Tape::transpose(TapeRef a) {
  check_ref(a, "transpose");
  const Tensor& av = node(a).value;
  Tensor out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out.at(j, i) = av.at(i, j);
  }
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
    }
  });
}

TapeRef Tape::relu(TapeRef a) {
  check_ref(a, "relu");
  const Tensor& av = node(a).value;
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = av.data()[i] > 0.0 ? av.data()[i] : 0.0;
  }
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a]() {
    const Tensor& g = node(self).grad;
    const Tensor& av2 = node(a).value;
    Tensor& ga = node(a).grad;
    // subgradient at exactly 0 is 0: only strictly positive inputs pass
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av2.data()[i] > 0.0) ga.data()[i] += g.data()[i];
    }
  });
}

TapeRef Tape::rsqrt(TapeRef a, double shift) {
  check_ref(a, "rsqrt");
  const Tensor& av = node(a).value;
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = 1.0 / std::sqrt(av.data()[i] + shift);
  }
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a]() {
    const Tensor& g = node(self).grad;
    const Tensor& y = node(self).value;
    Tensor& ga = node(a).grad;
    // d/dx (x+s)^(-1/2) = -1/2 (x+s)^(-3/2) = -y^3 / 2
    for (std::size_t i = 0; i < g.size(); ++i) {
      double yi = y.data()[i];
      ga.data()[i] += g.data()[i] * (-0.5 * yi * yi * yi);
    }
  });
}

TapeRef Tape::matmul(TapeRef a, TapeRef b) {
  check_ref(a, "matmul");
  check_ref(b, "matmul");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (av.cols() != bv.rows()) {
    fail(ErrorKind::dimension,
         "matmul: inner dimensions disagree, " + av.shape_str() + " x " + bv.shape_str());
  }
  Tensor out(av.rows(), bv.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const double* arow = av.row(i);
    double* orow = out.row(i);
    for (std::size_t k = 0; k < av.cols(); ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = bv.row(k);
      for (std::size_t j = 0; j < bv.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  bool ng = node(a).needs_grad || node(b).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, b]() {
    const Tensor& g = node(self).grad;
    const Tensor& av2 = node(a).value;
    const Tensor& bv2 = node(b).value;
    Tensor& ga = node(a).grad;
    Tensor& gb = node(b).grad;
    // ga += g * b^T
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double* grow = g.row(i);
      double* garow = ga.row(i);
      for (std::size_t k = 0; k < bv2.rows(); ++k) {
        const double* brow = bv2.row(k);
        double acc = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) acc += grow[j] * brow[j];
        garow[k] += acc;
      }
    }
    // gb += a^T * g
    for (std::size_t i = 0; i < av2.rows(); ++i) {
      const double* arow = av2.row(i);
      const double* grow = g.row(i);
      for (std::size_t k = 0; k < av2.cols(); ++k) {
        double aik = arow[k];
        if (aik == 0.0) continue;
        double* gbrow = gb.row(k);
        for (std::size_t j = 0; j < g.cols(); ++j) gbrow[j] += aik * grow[j];
      }
    }
  });
}

TapeRef Tape::spmm(const SparseMatrix& s, TapeRef d) {
  check_ref(d, "spmm");
  const Tensor& dv = node(d).value;
  if (s.cols() != dv.rows()) {
    fail(ErrorKind::dimension, "spmm: sparse " + std::to_string(s.rows()) + "x" +
                                   std::to_string(s.cols()) + " against dense " +
                                   dv.shape_str());
  }
  Tensor out(s.rows(), dv.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double* orow = out.row(i);
    for (std::size_t k = s.row_begin(i); k < s.row_end(i); ++k) {
      double v = s.value_at(k);
      const double* drow = dv.row(s.col_at(k));
      for (std::size_t j = 0; j < dv.cols(); ++j) orow[j] += v * drow[j];
    }
  }
  const SparseMatrix* sp = &s;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(d).needs_grad, [this, self, d, sp]() {
    const Tensor& g = node(self).grad;
    Tensor& gd = node(d).grad;
    // gd += s^T * g, accumulated by scattering each row of g
    for (std::size_t i = 0; i < sp->rows(); ++i) {
      const double* grow = g.row(i);
      for (std::size_t k = sp->row_begin(i); k < sp->row_end(i); ++k) {
        double v = sp->value_at(k);
        double* gdrow = gd.row(sp->col_at(k));
        for (std::size_t j = 0; j < g.cols(); ++j) gdrow[j] += v * grow[j];
      }
    }
  });
}

TapeRef Tape::gather_rows(TapeRef a, std::vector<std::uint32_t> rows) {
  check_ref(a, "gather_rows");
  const Tensor& av = node(a).value;
  for (std::uint32_t r : rows) {
    if (r >= av.rows()) {
      fail(ErrorKind::index, "gather_rows: row " + std::to_string(r) + " out of range [0, " +
                                 std::to_string(av.rows()) + ")");
    }
  }
  Tensor out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = av.row(rows[i]);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) dst[j] = src[j];
  }
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad,
              [this, self, a, idx = std::move(rows)]() {
                const Tensor& g = node(self).grad;
                Tensor& ga = node(a).grad;
                for (std::size_t i = 0; i < idx.size(); ++i) {
                  const double* grow = g.row(i);
                  double* garow = ga.row(idx[i]);
                  for (std::size_t j = 0; j < g.cols(); ++j) garow[j] += grow[j];
                }
              });
}

TapeRef Tape::concat_cols(TapeRef a, TapeRef b) {
  check_ref(a, "concat_cols");
  check_ref(b, "concat_cols");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (av.rows() != bv.rows()) {
    fail(ErrorKind::dimension,
         "concat_cols: row counts differ, " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor out(av.rows(), av.cols() + bv.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double* dst = out.row(i);
    const double* sa = av.row(i);
    const double* sb = bv.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) dst[j] = sa[j];
    for (std::size_t j = 0; j < bv.cols(); ++j) dst[av.cols() + j] = sb[j];
  }
  bool ng = node(a).needs_grad || node(b).needs_grad;
  std::size_t ac = av.cols();
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, b, ac]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    Tensor& gb = node(b).grad;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double* grow = g.row(i);
      double* garow = ga.row(i);
      double* gbrow = gb.row(i);
      for (std::size_t j = 0; j < ac; ++j) garow[j] += grow[j];
      for (std::size_t j = 0; j < gb.cols(); ++j) gbrow[j] += grow[ac + j];
    }
  });
}

TapeRef Tape::row_mean(TapeRef a) {
  check_ref(a, "row_mean");
  const Tensor& av = node(a).value;
  Tensor out(av.rows(), 1);
  double inv = 1.0 / static_cast<double>(av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double acc = 0.0;
    const double* arow = av.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) acc += arow[j];
    out.at(i, 0) = acc * inv;
  }
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a, inv]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    for (std::size_t i = 0; i < ga.rows(); ++i) {
      double gi = g.at(i, 0) * inv;
      double* garow = ga.row(i);
      for (std::size_t j = 0; j < ga.cols(); ++j) garow[j] += gi;
    }
  });
}

TapeRef Tape::row_var(TapeRef a) {
  check_ref(a, "row_var");
  const Tensor& av = node(a).value;
  Tensor out(av.rows(), 1);
  double inv = 1.0 / static_cast<double>(av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const double* arow = av.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) mean += arow[j];
    mean *= inv;
    double acc = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      double d = arow[j] - mean;
      acc += d * d;
    }
    out.at(i, 0) = acc * inv;
  }
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a, inv]() {
    const Tensor& g = node(self).grad;
    const Tensor& av2 = node(a).value;
    Tensor& ga = node(a).grad;
    // d var_i / d x_ij = 2 (x_ij - mean_i) / c  (mean's own derivative cancels)
    for (std::size_t i = 0; i < ga.rows(); ++i) {
      const double* arow = av2.row(i);
      double mean = 0.0;
      for (std::size_t j = 0; j < ga.cols(); ++j) mean += arow[j];
      mean *= inv;
      double gi = g.at(i, 0);
      double* garow = ga.row(i);
      for (std::size_t j = 0; j < ga.cols(); ++j) {
        garow[j] += gi * 2.0 * (arow[j] - mean) * inv;
      }
    }
  });
}

TapeRef Tape::row_sum(TapeRef a) {
  check_ref(a, "row_sum");
  const Tensor& av = node(a).value;
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double acc = 0.0;
    const double* arow = av.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) acc += arow[j];
    out.at(i, 0) = acc;
  }
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    for (std::size_t i = 0; i < ga.rows(); ++i) {
      double gi = g.at(i, 0);
      double* garow = ga.row(i);
      for (std::size_t j = 0; j < ga.cols(); ++j) garow[j] += gi;
    }
  });
}

TapeRef Tape::reduce_mean(TapeRef a) {
  check_ref(a, "reduce_mean");
  const Tensor& av = node(a).value;
  if (av.size() == 0) fail(ErrorKind::contract, "reduce_mean: empty tensor");
  double inv = 1.0 / static_cast<double>(av.size());
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  Tensor out(1, 1);
  out.at(0, 0) = acc * inv;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a, inv]() {
    double g = node(self).grad.at(0, 0) * inv;
    Tensor& ga = node(a).grad;
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
  });
}

TapeRef Tape::reduce_sum(TapeRef a) {
  check_ref(a, "reduce_sum");
  const Tensor& av = node(a).value;
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  Tensor out(1, 1);
  out.at(0, 0) = acc;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a]() {
    double g = node(self).grad.at(0, 0);
    Tensor& ga = node(a).grad;
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
  });
}

TapeRef Tape::sum_squares(TapeRef a) {
  check_ref(a, "sum_squares");
  const Tensor& av = node(a).value;
  double acc = 0.0;
  for (double v : av.data()) acc += v * v;
  Tensor out(1, 1);
  out.at(0, 0) = acc;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(a).needs_grad, [this, self, a]() {
    double g = node(self).grad.at(0, 0);
    const Tensor& av2 = node(a).value;
    Tensor& ga = node(a).grad;
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += 2.0 * g * av2.data()[i];
  });
}

TapeRef Tape::sub_colvec(TapeRef a, TapeRef v) {
  check_ref(a, "sub_colvec");
  check_ref(v, "sub_colvec");
  const Tensor& av = node(a).value;
  const Tensor& vv = node(v).value;
  if (vv.cols() != 1 || vv.rows() != av.rows()) {
    fail(ErrorKind::dimension, "sub_colvec: vector " + vv.shape_str() +
                                   " incompatible with " + av.shape_str());
  }
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = vv.at(i, 0);
    const double* arow = av.row(i);
    double* orow = out.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) orow[j] = arow[j] - s;
  }
  bool ng = node(a).needs_grad || node(v).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, v]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    Tensor& gv = node(v).grad;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double* grow = g.row(i);
      double* garow = ga.row(i);
      double acc = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) {
        garow[j] += grow[j];
        acc += grow[j];
      }
      gv.at(i, 0) -= acc;
    }
  });
}

TapeRef Tape::mul_colvec(TapeRef a, TapeRef v) {
  check_ref(a, "mul_colvec");
  check_ref(v, "mul_colvec");
  const Tensor& av = node(a).value;
  const Tensor& vv = node(v).value;
  if (vv.cols() != 1 || vv.rows() != av.rows()) {
    fail(ErrorKind::dimension, "mul_colvec: vector " + vv.shape_str() +
                                   " incompatible with " + av.shape_str());
  }
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = vv.at(i, 0);
    const double* arow = av.row(i);
    double* orow = out.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) orow[j] = arow[j] * s;
  }
  bool ng = node(a).needs_grad || node(v).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, v]() {
    const Tensor& g = node(self).grad;
    const Tensor& av2 = node(a).value;
    const Tensor& vv2 = node(v).value;
    Tensor& ga = node(a).grad;
    Tensor& gv = node(v).grad;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double* grow = g.row(i);
      const double* arow = av2.row(i);
      double* garow = ga.row(i);
      double s = vv2.at(i, 0);
      double acc = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) {
        garow[j] += grow[j] * s;
        acc += grow[j] * arow[j];
      }
      gv.at(i, 0) += acc;
    }
  });
}

TapeRef Tape::mul_rowvec(TapeRef a, TapeRef v) {
  check_ref(a, "mul_rowvec");
  check_ref(v, "mul_rowvec");
  const Tensor& av = node(a).value;
  const Tensor& vv = node(v).value;
  if (vv.rows() != 1 || vv.cols() != av.cols()) {
    fail(ErrorKind::dimension, "mul_rowvec: vector " + vv.shape_str() +
                                   " incompatible with " + av.shape_str());
  }
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const double* arow = av.row(i);
    const double* vrow = vv.row(0);
    double* orow = out.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) orow[j] = arow[j] * vrow[j];
  }
  bool ng = node(a).needs_grad || node(v).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, v]() {
    const Tensor& g = node(self).grad;
    const Tensor& av2 = node(a).value;
    const Tensor& vv2 = node(v).value;
    Tensor& ga = node(a).grad;
    Tensor& gv = node(v).grad;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double* grow = g.row(i);
      const double* arow = av2.row(i);
      double* garow = ga.row(i);
      for (std::size_t j = 0; j < g.cols(); ++j) {
        garow[j] += grow[j] * vv2.at(0, j);
        gv.at(0, j) += grow[j] * arow[j];
      }
    }
  });
}

TapeRef Tape::add_rowvec(TapeRef a, TapeRef v) {
  check_ref(a, "add_rowvec");
  check_ref(v, "add_rowvec");
  const Tensor& av = node(a).value;
  const Tensor& vv = node(v).value;
  if (vv.rows() != 1 || vv.cols() != av.cols()) {
    fail(ErrorKind::dimension, "add_rowvec: vector " + vv.shape_str() +
                                   " incompatible with " + av.shape_str());
  }
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const double* arow = av.row(i);
    const double* vrow = vv.row(0);
    double* orow = out.row(i);
    for (std::size_t j = 0; j < av.cols(); ++j) orow[j] = arow[j] + vrow[j];
  }
  bool ng = node(a).needs_grad || node(v).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, v]() {
    const Tensor& g = node(self).grad;
    Tensor& ga = node(a).grad;
    Tensor& gv = node(v).grad;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const double* grow = g.row(i);
      double* garow = ga.row(i);
      for (std::size_t j = 0; j < g.cols(); ++j) {
        garow[j] += grow[j];
        gv.at(0, j) += grow[j];
      }
    }
  });
}

TapeRef Tape::softmax_rows(TapeRef logits, const SparseMatrix& mask) {
  check_ref(logits, "softmax_rows");
  const Tensor& lv = node(logits).value;
  if (mask.rows() != lv.rows() || mask.cols() != lv.cols()) {
    fail(ErrorKind::dimension, "softmax_rows: mask " + std::to_string(mask.rows()) + "x" +
                                   std::to_string(mask.cols()) + " against logits " +
                                   lv.shape_str());
  }
  Tensor out(lv.rows(), lv.cols());
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    std::size_t b = mask.row_begin(i), e = mask.row_end(i);
    if (b == e) {
      fail(ErrorKind::empty_neighborhood,
           "softmax_rows: row " + std::to_string(i) + " has no active entries");
    }
    double mx = lv.at(i, mask.col_at(b));
    for (std::size_t k = b + 1; k < e; ++k) {
      mx = std::max(mx, lv.at(i, mask.col_at(k)));
    }
    double z = 0.0;
    for (std::size_t k = b; k < e; ++k) {
      double ev = std::exp(lv.at(i, mask.col_at(k)) - mx);
      out.at(i, mask.col_at(k)) = ev;
      z += ev;
    }
    for (std::size_t k = b; k < e; ++k) out.at(i, mask.col_at(k)) /= z;
  }
  const SparseMatrix* mp = &mask;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(logits).needs_grad, [this, self, logits, mp]() {
    const Tensor& g = node(self).grad;
    const Tensor& y = node(self).value;
    Tensor& gl = node(logits).grad;
    // dL/dx_j = y_j (g_j - sum_k g_k y_k) over the active set
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t k = mp->row_begin(i); k < mp->row_end(i); ++k) {
        std::uint32_t j = mp->col_at(k);
        dot += g.at(i, j) * y.at(i, j);
      }
      for (std::size_t k = mp->row_begin(i); k < mp->row_end(i); ++k) {
        std::uint32_t j = mp->col_at(k);
        gl.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    }
  });
}

TapeRef Tape::edge_dot(const SparseMatrix& pattern, TapeRef a, TapeRef b, double scale) {
  check_ref(a, "edge_dot");
  check_ref(b, "edge_dot");
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (av.rows() != pattern.rows() || bv.rows() != pattern.cols() ||
      av.cols() != bv.cols()) {
    fail(ErrorKind::dimension, "edge_dot: pattern " + std::to_string(pattern.rows()) + "x" +
                                   std::to_string(pattern.cols()) + " with features " +
                                   av.shape_str() + " and " + bv.shape_str());
  }
  Tensor out(pattern.nnz(), 1);
  for (std::size_t i = 0; i < pattern.rows(); ++i) {
    const double* arow = av.row(i);
    for (std::size_t k = pattern.row_begin(i); k < pattern.row_end(i); ++k) {
      const double* brow = bv.row(pattern.col_at(k));
      double acc = 0.0;
      for (std::size_t j = 0; j < av.cols(); ++j) acc += arow[j] * brow[j];
      out.at(k, 0) = acc * scale;
    }
  }
  const SparseMatrix* pp = &pattern;
  bool ng = node(a).needs_grad || node(b).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, a, b, pp, scale]() {
    const Tensor& g = node(self).grad;
    const Tensor& av2 = node(a).value;
    const Tensor& bv2 = node(b).value;
    Tensor& ga = node(a).grad;
    Tensor& gb = node(b).grad;
    for (std::size_t i = 0; i < pp->rows(); ++i) {
      const double* arow = av2.row(i);
      double* garow = ga.row(i);
      for (std::size_t k = pp->row_begin(i); k < pp->row_end(i); ++k) {
        std::uint32_t j = pp->col_at(k);
        double ge = g.at(k, 0) * scale;
        const double* brow = bv2.row(j);
        double* gbrow = gb.row(j);
        for (std::size_t c = 0; c < av2.cols(); ++c) {
          garow[c] += ge * brow[c];
          gbrow[c] += ge * arow[c];
        }
      }
    }
  });
}

TapeRef Tape::edge_softmax(const SparseMatrix& pattern, TapeRef edge_vals) {
  check_ref(edge_vals, "edge_softmax");
  const Tensor& ev = node(edge_vals).value;
  if (ev.rows() != pattern.nnz() || ev.cols() != 1) {
    fail(ErrorKind::dimension, "edge_softmax: edge values " + ev.shape_str() +
                                   " against pattern nnz " + std::to_string(pattern.nnz()));
  }
  Tensor out(pattern.nnz(), 1);
  for (std::size_t i = 0; i < pattern.rows(); ++i) {
    std::size_t b = pattern.row_begin(i), e = pattern.row_end(i);
    if (b == e) continue;  // no edges, nothing to normalize
    double mx = ev.at(b, 0);
    for (std::size_t k = b + 1; k < e; ++k) mx = std::max(mx, ev.at(k, 0));
    double z = 0.0;
    for (std::size_t k = b; k < e; ++k) {
      double x = std::exp(ev.at(k, 0) - mx);
      out.at(k, 0) = x;
      z += x;
    }
    for (std::size_t k = b; k < e; ++k) out.at(k, 0) /= z;
  }
  const SparseMatrix* pp = &pattern;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), node(edge_vals).needs_grad, [this, self, edge_vals, pp]() {
    const Tensor& g = node(self).grad;
    const Tensor& y = node(self).value;
    Tensor& gl = node(edge_vals).grad;
    for (std::size_t i = 0; i < pp->rows(); ++i) {
      std::size_t b = pp->row_begin(i), e = pp->row_end(i);
      double dot = 0.0;
      for (std::size_t k = b; k < e; ++k) dot += g.at(k, 0) * y.at(k, 0);
      for (std::size_t k = b; k < e; ++k) {
        gl.at(k, 0) += y.at(k, 0) * (g.at(k, 0) - dot);
      }
    }
  });
}

TapeRef Tape::edge_aggregate(const SparseMatrix& pattern, TapeRef edge_vals, TapeRef d) {
  check_ref(edge_vals, "edge_aggregate");
  check_ref(d, "edge_aggregate");
  const Tensor& ev = node(edge_vals).value;
  const Tensor& dv = node(d).value;
  if (ev.rows() != pattern.nnz() || ev.cols() != 1 || dv.rows() != pattern.cols()) {
    fail(ErrorKind::dimension, "edge_aggregate: edge values " + ev.shape_str() +
                                   ", dense " + dv.shape_str() + ", pattern " +
                                   std::to_string(pattern.rows()) + "x" +
                                   std::to_string(pattern.cols()) + " nnz " +
                                   std::to_string(pattern.nnz()));
  }
  Tensor out(pattern.rows(), dv.cols());
  for (std::size_t i = 0; i < pattern.rows(); ++i) {
    double* orow = out.row(i);
    for (std::size_t k = pattern.row_begin(i); k < pattern.row_end(i); ++k) {
      double w = ev.at(k, 0);
      const double* drow = dv.row(pattern.col_at(k));
      for (std::size_t j = 0; j < dv.cols(); ++j) orow[j] += w * drow[j];
    }
  }
  const SparseMatrix* pp = &pattern;
  bool ng = node(edge_vals).needs_grad || node(d).needs_grad;
  TapeRef self{static_cast<std::int32_t>(nodes_.size()), serial_};
  return push(std::move(out), ng, [this, self, edge_vals, d, pp]() {
    const Tensor& g = node(self).grad;
    const Tensor& ev2 = node(edge_vals).value;
    const Tensor& dv2 = node(d).value;
    Tensor& ge = node(edge_vals).grad;
    Tensor& gd = node(d).grad;
    for (std::size_t i = 0; i < pp->rows(); ++i) {
      const double* grow = g.row(i);
      for (std::size_t k = pp->row_begin(i); k < pp->row_end(i); ++k) {
        std::uint32_t j = pp->col_at(k);
        const double* drow = dv2.row(j);
        double* gdrow = gd.row(j);
        double w = ev2.at(k, 0);
        double acc = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) {
          acc += grow[c] * drow[c];
          gdrow[c] += w * grow[c];
        }
        ge.at(k, 0) += acc;
      }
    }
  });
}

}  // namespace gtnrec
