#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dlsa/error.hpp"

namespace dlsa {

/// Dense row-major matrix of doubles. Vectors are 1 x n or n x 1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Matrix: buffer size " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Matrix column_vector(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace kernels {

// out = in * (W .* mask)^T + bias. mask may be null (dense affine).
inline Matrix affine(const Matrix& in, const Matrix& w, const Matrix* mask, const Matrix& bias) {
  const std::size_t n = in.rows(), d_in = in.cols(), d_out = w.rows();
  Matrix out(n, d_out);
  std::vector<double> eff(w.data());
  if (mask != nullptr) {
    for (std::size_t i = 0; i < eff.size(); ++i) eff[i] *= (*mask)[i];
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = in.row(r).data();
    double* y = out.row(r).data();
    for (std::size_t o = 0; o < d_out; ++o) {
      const double* wr = eff.data() + o * d_in;
      double acc = bias[o];
      for (std::size_t j = 0; j < d_in; ++j) acc += x[j] * wr[j];
      y[o] = acc;
    }
  }
  return out;
}

inline double logsumexp(std::span<const double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Normalizes by the explicit sum so each row adds to 1 up to rounding even
// when the logits are huge.
inline void softmax(std::span<const double> v, std::span<double> out) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    s += out[i];
  }
  for (double& o : out) o /= s;
}

// Squared Euclidean distance of each row of z to each row of centers.
inline Matrix squared_distances(const Matrix& z, const Matrix& centers) {
  Matrix out(z.rows(), centers.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto zr = z.row(r);
    for (std::size_t k = 0; k < centers.rows(); ++k) {
      const auto c = centers.row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < zr.size(); ++j) {
        const double d = zr[j] - c[j];
        acc += d * d;
      }
      out(r, k) = acc;
    }
  }
  return out;
}

}  // namespace kernels
}  // namespace dlsa
