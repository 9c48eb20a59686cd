#pragma once

// Dense row-major tensors and the raw numeric kernels shared by the autodiff ops and
// the incremental (no-tape) decoding path.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "nabu/common.hpp"

namespace nabu {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0));
  Tensor(std::vector<std::size_t> shape, std::vector<Real> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<Real> values);
  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Last dimension; a rank-2 view is (size / cols) x cols.
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

namespace kernels {

/// C (M x N) = op(A) * op(B) (+ C when accumulate). Leading dimensions are row strides.
void gemm(std::size_t m, std::size_t n, std::size_t k, const Real* a, bool trans_a, const Real* b, bool trans_b,
          Real* c, bool accumulate);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// In-place numerically stable softmax over each row. `mask` (row-major, same size)
/// excludes entries where it is 0. Throws MaskedAll if a row has no admissible entry.
void softmax_rows(Real* x, std::size_t rows, std::size_t cols, const unsigned char* mask = nullptr);

/// Row-wise layer normalization; optionally stores per-row mean and 1/sqrt(var+eps).
void layer_norm_rows(const Real* x, std::size_t rows, std::size_t cols, const Real* gain, const Real* bias,
                     Real eps, Real* out, Real* mean_out = nullptr, Real* rstd_out = nullptr);

void add_inplace(std::span<Real> dst, std::span<const Real> src);

}  // namespace kernels

/// Fixed sinusoidal positional table, rows = positions.
Tensor sinusoidal_positions(std::size_t max_len, std::size_t dim);

}  // namespace nabu
