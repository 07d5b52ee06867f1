#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ovlens/error.hpp"

namespace ovlens {

/// Dense vector of doubles.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  explicit Vector(std::vector<double> data) : data_(std::move(data)) {}
  Vector(std::initializer_list<double> values) : data_(values) {}

  std::size_t dim() const noexcept { return data_.size(); }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "," + std::to_string(m.cols()) + ")";
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double frobenius_norm(const Matrix& a) { return norm(a.data()); }

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

/// Row-major product; loop order i-k-j keeps the inner loop contiguous.
inline Matrix mat_mul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("mat_mul: " + shape_string(a) + " x " + shape_string(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

inline Vector mat_vec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw ShapeError("mat_vec: " + shape_string(a) + " x vector(" + std::to_string(x.size()) +
                     ")");
  }
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto row = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

inline Vector mat_vec(const Matrix& a, const Vector& x) { return mat_vec(a, x.span()); }

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

inline Matrix& operator+=(Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "matrix add");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
  return a;
}

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "matrix subtract");
  Matrix out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return out;
}

inline Matrix operator*(double s, Matrix a) {
  for (double& x : a.data()) x *= s;
  return a;
}

inline Vector operator+(const Vector& x, const Vector& y) {
  if (x.dim() != y.dim()) throw ShapeError("vector add: dim mismatch");
  Vector out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = x[i] + y[i];
  return out;
}

inline Vector operator-(const Vector& x, const Vector& y) {
  if (x.dim() != y.dim()) throw ShapeError("vector subtract: dim mismatch");
  Vector out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = x[i] - y[i];
  return out;
}

inline Vector operator*(double s, const Vector& x) {
  Vector out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = s * x[i];
  return out;
}

/// Cosine of the angle between x and y. Throws DegenerateError on a zero operand.
inline double cosine_similarity(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("cosine_similarity: dim mismatch");
  const double nx = norm(x);
  const double ny = norm(y);
  if (nx == 0.0 || ny == 0.0) throw DegenerateError("cosine_similarity: zero-norm operand");
  return std::clamp(dot(x, y) / (nx * ny), -1.0, 1.0);
}

inline double cosine_similarity(const Vector& x, const Vector& y) {
  return cosine_similarity(x.span(), y.span());
}

inline double euclidean_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("euclidean_distance: dim mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

/// ||a - b||_F / ||b||_F, falling back to the absolute error when b is zero.
inline double relative_frobenius_error(const Matrix& a, const Matrix& b) {
  const double denom = frobenius_norm(b);
  const double err = frobenius_norm(a - b);
  return denom == 0.0 ? err : err / denom;
}

}  // namespace ovlens
