#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fpml/errors.hpp"

namespace fpml {

// Dense NCHW tensor of doubles. Feature matrices are stored as (rows, cols, 1, 1).
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  static Tensor matrix(int rows, int cols, double fill = 0.0) {
    return Tensor(rows, cols, 1, 1, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  int rows() const { return n; }
  int cols() const { return c * h * w; }

  double& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  double at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  double* plane(int i, int ch) {
    return data.data() + (static_cast<std::size_t>(i) * c + ch) * h * w;
  }
  const double* plane(int i, int ch) const {
    return data.data() + (static_cast<std::size_t>(i) * c + ch) * h * w;
  }
  double& operator()(int r, int col) { return data[static_cast<std::size_t>(r) * cols() + col]; }
  double operator()(int r, int col) const {
    return data[static_cast<std::size_t>(r) * cols() + col];
  }

  std::span<double> sample(int i) {
    return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()};
  }
  std::span<const double> sample(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()};
  }
  std::span<const double> row(int r) const { return sample(r); }
  std::span<double> row(int r) { return sample(r); }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_string() const;
};

inline std::string Tensor::shape_string() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

}  // namespace fpml
