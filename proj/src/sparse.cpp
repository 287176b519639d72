#include "gtnrec/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include "gtnrec/error.hpp"

namespace gtnrec {

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols,
                           std::vector<std::size_t> row_ptr,
                           std::vector<std::uint32_t> col_idx,
                           std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  if (row_ptr_.size() != rows_ + 1) {
    fail(ErrorKind::dimension, "csr row_ptr length " + std::to_string(row_ptr_.size()) +
                                   ", expected rows+1 = " + std::to_string(rows_ + 1));
  }
  if (row_ptr_.front() != 0 || row_ptr_.back() != col_idx_.size() ||
      col_idx_.size() != values_.size()) {
    fail(ErrorKind::dimension, "csr arrays inconsistent: nnz " +
                                   std::to_string(col_idx_.size()) + ", values " +
                                   std::to_string(values_.size()) + ", row_ptr end " +
                                   std::to_string(row_ptr_.back()));
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    if (row_ptr_[r] > row_ptr_[r + 1]) {
      fail(ErrorKind::dimension, "csr row_ptr decreasing at row " + std::to_string(r));
    }
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      if (col_idx_[k] >= cols_) {
        fail(ErrorKind::index, "csr column " + std::to_string(col_idx_[k]) +
                                   " out of range [0, " + std::to_string(cols_) + ")");
      }
      if (k > row_ptr_[r] && col_idx_[k] <= col_idx_[k - 1]) {
        fail(ErrorKind::dimension,
             "csr columns not strictly increasing in row " + std::to_string(r));
      }
    }
  }
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<std::size_t> ptr(n + 1);
  std::vector<std::uint32_t> col(n);
  std::vector<double> val(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    ptr[i + 1] = i + 1;
    col[i] = static_cast<std::uint32_t>(i);
  }
  return SparseMatrix(n, n, std::move(ptr), std::move(col), std::move(val));
}

SparseMatrix SparseMatrix::from_coo(
    std::size_t rows, std::size_t cols,
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) {
              return std::tie(std::get<0>(a), std::get<1>(a)) <
                     std::tie(std::get<0>(b), std::get<1>(b));
            });
  std::vector<std::size_t> ptr(rows + 1, 0);
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  col.reserve(entries.size());
  val.reserve(entries.size());
  bool have_prev = false;
  std::uint32_t prev_r = 0, prev_c = 0;
  for (const auto& [r, c, v] : entries) {
    if (r >= rows || c >= cols) {
      fail(ErrorKind::index, "coo entry (" + std::to_string(r) + ", " + std::to_string(c) +
                                 ") outside " + std::to_string(rows) + "x" +
                                 std::to_string(cols));
    }
    if (have_prev && r == prev_r && c == prev_c) {
      val.back() += v;  // duplicate coordinate: sum
      continue;
    }
    ++ptr[r + 1];
    col.push_back(c);
    val.push_back(v);
    have_prev = true;
    prev_r = r;
    prev_c = c;
  }
  for (std::size_t r = 0; r < rows; ++r) ptr[r + 1] += ptr[r];
  return SparseMatrix(rows, cols, std::move(ptr), std::move(col), std::move(val));
}

SparseMatrix SparseMatrix::from_dense(const Tensor& dense, double zero_tol) {
  std::vector<std::size_t> ptr(dense.rows() + 1, 0);
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  for (std::size_t i = 0; i < dense.rows(); ++i) {
    for (std::size_t j = 0; j < dense.cols(); ++j) {
      double v = dense.at(i, j);
      if (std::abs(v) > zero_tol) {
        col.push_back(static_cast<std::uint32_t>(j));
        val.push_back(v);
        ++ptr[i + 1];
      }
    }
  }
  for (std::size_t r = 0; r < dense.rows(); ++r) ptr[r + 1] += ptr[r];
  return SparseMatrix(dense.rows(), dense.cols(), std::move(ptr), std::move(col),
                      std::move(val));
}

SparseMatrix SparseMatrix::with_values(std::vector<double> values) const {
  if (values.size() != nnz()) {
    fail(ErrorKind::dimension, "with_values: got " + std::to_string(values.size()) +
                                   " values for nnz " + std::to_string(nnz()));
  }
  SparseMatrix out = *this;
  out.values_ = std::move(values);
  return out;
}

Tensor SparseMatrix::to_dense() const {
  Tensor d(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_begin(r); k < row_end(r); ++k) {
      d.at(r, col_idx_[k]) = values_[k];
    }
  }
  return d;
}

}  // namespace gtnrec
