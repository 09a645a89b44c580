#include "fpml/kernels.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

namespace fpml::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_conv_input(const Tensor& x, std::span<const double> weight, const ConvGeometry& geo) {
  if (x.c != geo.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, expected " +
                     std::to_string(geo.in_channels));
  }
  if (weight.size() != static_cast<std::size_t>(geo.weight_count())) {
    throw ShapeError("conv2d: weight size mismatch");
  }
  if (geo.out_size(x.h) <= 0 || geo.out_size(x.w) <= 0) {
    throw ShapeError("conv2d: input " + x.shape_string() + " too small for kernel");
  }
}

// Columns laid out as (patch, batch * out_h * out_w) so one GEMM covers the batch.
void im2col(const Tensor& x, const ConvGeometry& geo, int oh, int ow, std::vector<double>& col) {
  const int plane = oh * ow;
  const std::size_t ncols = static_cast<std::size_t>(x.n) * plane;
  col.assign(static_cast<std::size_t>(geo.patch_size()) * ncols, 0.0);
  const int kk = geo.kernel;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < x.n; ++b) {
    for (int ci = 0; ci < x.c; ++ci) {
      for (int ky = 0; ky < kk; ++ky) {
        for (int kx = 0; kx < kk; ++kx) {
          const std::size_t r = (static_cast<std::size_t>(ci) * kk + ky) * kk + kx;
          double* dst = col.data() + r * ncols + static_cast<std::size_t>(b) * plane;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * geo.stride - geo.pad + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * geo.stride - geo.pad + kx;
              if (ix < 0 || ix >= x.w) continue;
              dst[oy * ow + ox] = x.at(b, ci, iy, ix);
            }
          }
        }
      }
    }
  }
}

void col2im(const std::vector<double>& col, const ConvGeometry& geo, int oh, int ow, Tensor& dx) {
  const int plane = oh * ow;
  const std::size_t ncols = static_cast<std::size_t>(dx.n) * plane;
  const int kk = geo.kernel;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < dx.n; ++b) {
    for (int ci = 0; ci < dx.c; ++ci) {
      for (int ky = 0; ky < kk; ++ky) {
        for (int kx = 0; kx < kk; ++kx) {
          const std::size_t r = (static_cast<std::size_t>(ci) * kk + ky) * kk + kx;
          const double* src = col.data() + r * ncols + static_cast<std::size_t>(b) * plane;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * geo.stride - geo.pad + ky;
            if (iy < 0 || iy >= dx.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * geo.stride - geo.pad + kx;
              if (ix < 0 || ix >= dx.w) continue;
              dx.at(b, ci, iy, ix) += src[oy * ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int n,
          int k, bool trans_a, bool trans_b, bool accumulate) {
  ConstMap am(a.data(), trans_a ? k : m, trans_a ? m : k);
  ConstMap bm(b.data(), trans_b ? n : k, trans_b ? k : n);
  MutMap cm(c.data(), m, n);
  if (!accumulate) cm.setZero();
  if (trans_a && trans_b) {
    cm.noalias() += am.transpose() * bm.transpose();
  } else if (trans_a) {
    cm.noalias() += am.transpose() * bm;
  } else if (trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am * bm;
  }
}

Tensor conv2d_forward(const Tensor& x, std::span<const double> weight,
                      std::span<const double> bias, const ConvGeometry& geo) {
  check_conv_input(x, weight, geo);
  const int oh = geo.out_size(x.h);
  const int ow = geo.out_size(x.w);
  const int plane = oh * ow;
  const int ncols = x.n * plane;
  // Scratch buffers are reused across calls to avoid faulting in fresh pages.
  thread_local std::vector<double> col, out;
  im2col(x, geo, oh, ow, col);
  out.resize(static_cast<std::size_t>(geo.out_channels) * ncols);
  gemm(weight, col, out, geo.out_channels, ncols, geo.patch_size(), false, false, false);

  Tensor y(x.n, geo.out_channels, oh, ow);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < x.n; ++b) {
    for (int o = 0; o < geo.out_channels; ++o) {
      const double bo = bias.empty() ? 0.0 : bias[o];
      const double* src = out.data() + static_cast<std::size_t>(o) * ncols +
                          static_cast<std::size_t>(b) * plane;
      double* dst = y.plane(b, o);
      for (int p = 0; p < plane; ++p) dst[p] = src[p] + bo;
    }
  }
  return y;
}

Tensor conv2d_backward(const Tensor& x, std::span<const double> weight, const ConvGeometry& geo,
                       const Tensor& dy, std::span<double> dweight, std::span<double> dbias,
                       bool need_dx) {
  check_conv_input(x, weight, geo);
  const int oh = geo.out_size(x.h);
  const int ow = geo.out_size(x.w);
  if (dy.n != x.n || dy.c != geo.out_channels || dy.h != oh || dy.w != ow) {
    throw ShapeError("conv2d_backward: gradient shape " + dy.shape_string());
  }
  const int plane = oh * ow;
  const int ncols = x.n * plane;

  thread_local std::vector<double> dymat, col, dcol;
  dymat.resize(static_cast<std::size_t>(geo.out_channels) * ncols);
#pragma omp parallel for schedule(static)
  for (int o = 0; o < geo.out_channels; ++o) {
    for (int b = 0; b < x.n; ++b) {
      const double* src = dy.plane(b, o);
      std::copy(src, src + plane,
                dymat.data() + static_cast<std::size_t>(o) * ncols +
                    static_cast<std::size_t>(b) * plane);
    }
  }

  if (!dbias.empty()) {
    for (int o = 0; o < geo.out_channels; ++o) {
      const double* r = dymat.data() + static_cast<std::size_t>(o) * ncols;
      double s = 0.0;
      for (int j = 0; j < ncols; ++j) s += r[j];
      dbias[o] += s;
    }
  }

  im2col(x, geo, oh, ow, col);
  gemm(dymat, col, dweight, geo.out_channels, geo.patch_size(), ncols, false, true, true);

  if (!need_dx) return {};
  dcol.resize(static_cast<std::size_t>(geo.patch_size()) * ncols);
  gemm(weight, dymat, dcol, geo.patch_size(), ncols, geo.out_channels, true, false, false);
  Tensor dx(x.n, x.c, x.h, x.w);
  col2im(dcol, geo, oh, ow, dx);
  return dx;
}

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int n,
          int k, bool trans_a, bool trans_b, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[static_cast<std::size_t>(p) * m + i]
                                  : a[static_cast<std::size_t>(i) * k + p];
        const double bv = trans_b ? b[static_cast<std::size_t>(j) * k + p]
                                  : b[static_cast<std::size_t>(p) * n + j];
        s += av * bv;
      }
      double& dst = c[static_cast<std::size_t>(i) * n + j];
      dst = accumulate ? dst + s : s;
    }
  }
}

Tensor conv2d_forward(const Tensor& x, std::span<const double> weight,
                      std::span<const double> bias, const ConvGeometry& geo) {
  check_conv_input(x, weight, geo);
  const int oh = geo.out_size(x.h);
  const int ow = geo.out_size(x.w);
  const int kk = geo.kernel;
  Tensor y(x.n, geo.out_channels, oh, ow);
  for (int b = 0; b < x.n; ++b) {
    for (int o = 0; o < geo.out_channels; ++o) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (int ci = 0; ci < x.c; ++ci) {
            for (int ky = 0; ky < kk; ++ky) {
              const int iy = oy * geo.stride - geo.pad + ky;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < kk; ++kx) {
                const int ix = ox * geo.stride - geo.pad + kx;
                if (ix < 0 || ix >= x.w) continue;
                s += weight[((static_cast<std::size_t>(o) * x.c + ci) * kk + ky) * kk + kx] *
                     x.at(b, ci, iy, ix);
              }
            }
          }
          y.at(b, o, oy, ox) = s;
        }
      }
    }
  }
  return y;
}

Tensor conv2d_backward(const Tensor& x, std::span<const double> weight, const ConvGeometry& geo,
                       const Tensor& dy, std::span<double> dweight, std::span<double> dbias,
                       bool need_dx) {
  check_conv_input(x, weight, geo);
  const int kk = geo.kernel;
  Tensor dx;
  if (need_dx) dx = Tensor(x.n, x.c, x.h, x.w);
  for (int b = 0; b < x.n; ++b) {
    for (int o = 0; o < geo.out_channels; ++o) {
      for (int oy = 0; oy < dy.h; ++oy) {
        for (int ox = 0; ox < dy.w; ++ox) {
          const double g = dy.at(b, o, oy, ox);
          if (!dbias.empty()) dbias[o] += g;
          for (int ci = 0; ci < x.c; ++ci) {
            for (int ky = 0; ky < kk; ++ky) {
              const int iy = oy * geo.stride - geo.pad + ky;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < kk; ++kx) {
                const int ix = ox * geo.stride - geo.pad + kx;
                if (ix < 0 || ix >= x.w) continue;
                const std::size_t wi =
                    ((static_cast<std::size_t>(o) * x.c + ci) * kk + ky) * kk + kx;
                dweight[wi] += g * x.at(b, ci, iy, ix);
                if (need_dx) dx.at(b, ci, iy, ix) += g * weight[wi];
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace reference

}  // namespace fpml::kernels
