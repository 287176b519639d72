#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "gtnrec/tensor.hpp"

namespace gtnrec {

/// Compressed sparse row matrix. Immutable after construction; the
/// constructor rejects anything violating the CSR invariants: row_ptr
/// nondecreasing with row_ptr[0] == 0 and row_ptr[rows] == nnz, column
/// indices in [0, cols) and strictly increasing within each row.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols,
               std::vector<std::size_t> row_ptr,
               std::vector<std::uint32_t> col_idx,
               std::vector<double> values);

  static SparseMatrix identity(std::size_t n);
  /// Builds from (row, col, value) triples. Triples may arrive in any
  /// order; duplicate coordinates are summed.
  static SparseMatrix from_coo(std::size_t rows, std::size_t cols,
                               std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> entries);
  static SparseMatrix from_dense(const Tensor& dense, double zero_tol = 0.0);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  std::size_t row_begin(std::size_t r) const { return row_ptr_[r]; }
  std::size_t row_end(std::size_t r) const { return row_ptr_[r + 1]; }
  std::uint32_t col_at(std::size_t k) const { return col_idx_[k]; }
  double value_at(std::size_t k) const { return values_[k]; }

  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::uint32_t> col_idx() const noexcept { return col_idx_; }
  std::span<const double> values() const noexcept { return values_; }

  /// Same sparsity pattern, different values (length must equal nnz).
  SparseMatrix with_values(std::vector<double> values) const;

  Tensor to_dense() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> col_idx_;
  std::vector<double> values_;
};

}  // namespace gtnrec
