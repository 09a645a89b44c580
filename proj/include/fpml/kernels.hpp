#pragma once

#include <span>

#include "fpml/tensor.hpp"

// Hot numeric kernels. The default implementations are OpenMP-parallel over
// the batch and route the contraction through a blocked GEMM; the `reference`
// namespace holds direct-loop serial versions used as test oracles and as the
// benchmark baseline. Both produce the same values up to summation order.
namespace fpml::kernels {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  int patch_size() const { return in_channels * kernel * kernel; }
  int weight_count() const { return out_channels * patch_size(); }
};

// Row-major C(MxN) = op(A) * op(B), op = transpose when requested. When
// `accumulate` is set the product is added to C.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int n,
          int k, bool trans_a, bool trans_b, bool accumulate);

// weight: out_channels x in_channels x kernel x kernel, bias may be empty.
Tensor conv2d_forward(const Tensor& x, std::span<const double> weight,
                      std::span<const double> bias, const ConvGeometry& geo);

// Accumulates into dweight/dbias (sized like weight/bias) and returns dx when
// `need_dx` is set (an empty tensor otherwise).
Tensor conv2d_backward(const Tensor& x, std::span<const double> weight, const ConvGeometry& geo,
                       const Tensor& dy, std::span<double> dweight, std::span<double> dbias,
                       bool need_dx);

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int n,
          int k, bool trans_a, bool trans_b, bool accumulate);

Tensor conv2d_forward(const Tensor& x, std::span<const double> weight,
                      std::span<const double> bias, const ConvGeometry& geo);

Tensor conv2d_backward(const Tensor& x, std::span<const double> weight, const ConvGeometry& geo,
                       const Tensor& dy, std::span<double> dweight, std::span<double> dbias,
                       bool need_dx);

}  // namespace reference

}  // namespace fpml::kernels
