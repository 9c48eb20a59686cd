#include "nabu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace nabu {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeMismatch("tensor needs at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeMismatch("tensor dimensions must be >= 1");
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, Real fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (product(shape_) != data_.size()) {
    throw ShapeMismatch("data length " + std::to_string(data_.size()) + " does not match shape " + shape_string());
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<Real> values) {
  return Tensor({rows, cols}, std::vector<Real>(values));
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

namespace kernels {

namespace {

// C[M x N] += A[M x K] * B[K x N], all row-major and contiguous.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a, const Real* __restrict b,
             Real* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* __restrict ci = c + i * n;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      if (av == Real(0)) continue;
      const Real* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[M x N] += A^T * B where A is K x M.
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a, const Real* __restrict b,
             Real* __restrict c) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* ap = a + p * m;
    const Real* __restrict bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = ap[i];
      if (av == Real(0)) continue;
      Real* __restrict ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void transpose_into(const Real* src, std::size_t rows, std::size_t cols, Real* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const Real* a, bool trans_a, const Real* b, bool trans_b,
          Real* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, Real(0));
  std::vector<Real> bt;
  if (trans_b) {
    // B is N x K; materialize K x N.
    bt.resize(k * n);
    transpose_into(b, n, k, bt.data());
    b = bt.data();
  }
  if (trans_a) {
    gemm_tn(m, n, k, a, b, c);
  } else {
    gemm_nn(m, n, k, a, b, c);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul " + a.shape_string() + " * " + b.shape_string());
  }
  Tensor c({a.rows(), b.cols()});
  gemm(a.rows(), b.cols(), a.cols(), a.data(), false, b.data(), false, c.data(), false);
  return c;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeMismatch("matmul_bt " + a.shape_string() + " * " + b.shape_string() + "^T");
  }
  Tensor c({a.rows(), b.rows()});
  gemm(a.rows(), b.rows(), a.cols(), a.data(), false, b.data(), true, c.data(), false);
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  transpose_into(a.data(), a.rows(), a.cols(), t.data());
  return t;
}

void softmax_rows(Real* x, std::size_t rows, std::size_t cols, const unsigned char* mask) {
  for (std::size_t r = 0; r < rows; ++r) {
    Real* xr = x + r * cols;
    const unsigned char* mr = mask ? mask + r * cols : nullptr;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mr || mr[c]) mx = std::max(mx, xr[c]);
    }
    if (mx == -std::numeric_limits<Real>::infinity()) {
      throw MaskedAll("softmax row " + std::to_string(r) + " has no admissible entry");
    }
    Real sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mr && !mr[c]) {
        xr[c] = 0;
      } else {
        xr[c] = std::exp(xr[c] - mx);
        sum += xr[c];
      }
    }
    const Real inv = Real(1) / sum;
    for (std::size_t c = 0; c < cols; ++c) xr[c] *= inv;
  }
}

void layer_norm_rows(const Real* x, std::size_t rows, std::size_t cols, const Real* gain, const Real* bias, Real eps,
                     Real* out, Real* mean_out, Real* rstd_out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x + r * cols;
    Real mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<Real>(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<Real>(cols);
    const Real rstd = Real(1) / std::sqrt(var + eps);
    Real* o = out + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] = (xr[c] - mean) * rstd * gain[c] + bias[c];
    if (mean_out) mean_out[r] = mean;
    if (rstd_out) rstd_out[r] = rstd;
  }
}

void add_inplace(std::span<Real> dst, std::span<const Real> src) {
  if (dst.size() != src.size()) throw ShapeMismatch("add_inplace size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace kernels

Tensor sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  Tensor pe({max_len, dim});
  for (std::size_t p = 0; p < max_len; ++p) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe.at(p, i) = static_cast<Real>(std::sin(static_cast<double>(p) * freq));
      if (i + 1 < dim) pe.at(p, i + 1) = static_cast<Real>(std::cos(static_cast<double>(p) * freq));
    }
  }
  return pe;
}

}  // namespace nabu
