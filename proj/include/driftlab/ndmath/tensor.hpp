#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "driftlab/errors.hpp"

namespace driftlab {

/**
 * Dense row-major matrix of doubles.
 *
 * Everything in the pipeline is rank <= 2: an x-vector is an m x 1 column,
 * an utterance feature block is rows x frames, a scalar is 1 x 1.
 */
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows, cols));
    }
  }

  /// Row-wise literal: Tensor::from_rows({{1, 2}, {3, 4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged row literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
  }

  /// Column vector.
  static Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(n, 1, std::move(values));
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_scalar() const noexcept { return rows_ == 1 && cols_ == 1; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape());
    return data_[0];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  std::vector<double> column_values(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  bool same_shape(const Tensor& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

// Plain (untaped) kernels. The tape records gradient rules on top of these.
namespace kernels {

/// C = A * B
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + a.shape() + " vs " + b.shape());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c(m, n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pc = c.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

/// C = A^T * B
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: shape mismatch " + a.shape() + " vs " + b.shape());
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c(m, n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pc = c.values().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[p * m + i];
      if (av == 0.0) continue;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// C = A * B^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: shape mismatch " + a.shape() + " vs " + b.shape());
  }
  return matmul(a, transpose(b));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

inline Tensor scale(const Tensor& a, double k) {
  Tensor c = a;
  for (double& v : c.values()) v *= k;
  return c;
}

inline Tensor tanh(const Tensor& a) {
  Tensor c = a;
  for (double& v : c.values()) v = std::tanh(v);
  return c;
}

/// Adds column vector `bias` (r x 1) to every column of `a` (r x n).
inline Tensor add_column(const Tensor& a, const Tensor& bias) {
  if (bias.cols() != 1 || bias.rows() != a.rows()) {
    throw ShapeError("add_column: shape mismatch " + a.shape() + " vs " + bias.shape());
  }
  Tensor c = a;
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t j = 0; j < c.cols(); ++j) c(r, j) += bias[r];
  return c;
}

/// Stacks blocks vertically; every block must have the same column (frame) count.
inline Tensor concat_rows(std::span<const Tensor* const> blocks) {
  if (blocks.empty()) throw ShapeError("concat_rows: no blocks");
  const std::size_t n = blocks.front()->cols();
  std::size_t rows = 0;
  for (const Tensor* b : blocks) {
    if (b->cols() != n) {
      throw ShapeError("concat_rows: frame count mismatch " + blocks.front()->shape() + " vs " +
                       b->shape());
    }
    rows += b->rows();
  }
  std::vector<double> data;
  data.reserve(rows * n);
  for (const Tensor* b : blocks) data.insert(data.end(), b->storage().begin(), b->storage().end());
  return Tensor(rows, n, std::move(data));
}

/// Per-row arithmetic mean over columns: (r x n) -> (r x 1).
inline Tensor mean_over_frames(const Tensor& a) {
  if (a.cols() == 0) throw ShapeError("mean_over_frames: zero frames");
  Tensor out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (double v : a.row(r)) s += v;
    out[r] = s / static_cast<double>(a.cols());
  }
  return out;
}

/// Frobenius inner product.
inline double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

/// Unit-norm copy; throws DomainError on a zero vector.
inline Tensor normalized(const Tensor& a, const char* what = "vector") {
  const double n = norm(a);
  if (!(n > 0.0)) throw DomainError(std::string("cannot normalize zero-norm ") + what);
  return scale(a, 1.0 / n);
}

/// Every column set to `x` (m x 1) -> (m x frames).
inline Tensor repeat_columns(const Tensor& x, std::size_t frames) {
  if (x.cols() != 1) throw ShapeError("repeat_columns: expected column vector, got " + x.shape());
  if (frames < 1) throw ShapeError("repeat_columns: frame count must be >= 1");
  Tensor out(x.rows(), frames);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < frames; ++j) out(r, j) = x[r];
  return out;
}

}  // namespace kernels

/// 1 - <a,b> / (|a| |b|). Result lies in [0, 2].
inline double cosine_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw ShapeError("cosine_distance: shape mismatch " + a.shape() + " vs " + b.shape());
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > 0.0)) throw DomainError("cosine_distance: first argument has zero norm");
  if (!(bb > 0.0)) throw DomainError("cosine_distance: second argument has zero norm");
  const double d = 1.0 - ab / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(d, 0.0, 2.0);
}

inline double cosine_similarity(const Tensor& a, const Tensor& b) {
  return 1.0 - cosine_distance(a, b);
}

}  // namespace driftlab
