#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "svkit/error.hpp"

namespace svkit {

// Dense row-major matrix of doubles. All trainable arithmetic runs in
// 64-bit; features are widened from their 32-bit storage on load.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw invariant_error(message);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  return std::sqrt(acc);
}

// y = W x
inline std::vector<double> matvec(const Matrix& w, std::span<const double> x) {
  require(w.cols == x.size(), "matvec: shape mismatch");
  std::vector<double> y(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += w(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

// y = W^T x
inline std::vector<double> matvec_transposed(const Matrix& w, std::span<const double> x) {
  require(w.rows == x.size(), "matvec_transposed: shape mismatch");
  std::vector<double> y(w.cols, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) y[c] += w(r, c) * x[r];
  return y;
}

// W += a ⊗ b
inline void add_outer(Matrix& w, std::span<const double> a, std::span<const double> b) {
  require(w.rows == a.size() && w.cols == b.size(), "add_outer: shape mismatch");
  for (std::size_t r = 0; r < w.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) w(r, c) += a[r] * b[c];
}

}  // namespace svkit
