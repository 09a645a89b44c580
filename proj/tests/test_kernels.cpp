#include <gtest/gtest.h>

#include <cmath>

#include "fpml/kernels.hpp"
#include "fpml/rng.hpp"

using namespace fpml;
namespace k = fpml::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -1, 1);
  return v;
}

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  t.data = random_vec(t.size(), rng);
  return t;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Gemm, AllTransposeCombinationsMatchReference) {
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 1 + static_cast<int>(uniform_index(rng, 30));
    const int n = 1 + static_cast<int>(uniform_index(rng, 30));
    const int kk = 1 + static_cast<int>(uniform_index(rng, 30));
    const bool ta = trial & 1, tb = trial & 2, acc = trial & 4;
    const auto a = random_vec(static_cast<std::size_t>(m) * kk, rng);
    const auto b = random_vec(static_cast<std::size_t>(kk) * n, rng);
    auto c1 = random_vec(static_cast<std::size_t>(m) * n, rng);
    auto c2 = c1;
    k::gemm(a, b, c1, m, n, kk, ta, tb, acc);
    k::reference::gemm(a, b, c2, m, n, kk, ta, tb, acc);
    EXPECT_LT(max_diff(c1, c2), 1e-12);
  }
}

TEST(Gemm, SmallHandExample) {
  const std::vector<double> a = {1, 2, 3, 4};  // [[1,2],[3,4]]
  const std::vector<double> b = {5, 6, 7, 8};
  std::vector<double> c(4);
  k::gemm(a, b, c, 2, 2, 2, false, false, false);
  EXPECT_EQ(c, (std::vector<double>{19, 22, 43, 50}));
}

TEST(Conv, ForwardMatchesReferenceOverGeometries) {
  Rng rng(2);
  for (int kernel : {1, 3, 7}) {
    for (int stride : {1, 2}) {
      for (int pad : {0, 1, 3}) {
        k::ConvGeometry geo{3, 4, kernel, stride, pad};
        if (geo.out_size(9) < 1) continue;
        const Tensor x = random_tensor(2, 3, 9, 10, rng);
        const auto w = random_vec(geo.weight_count(), rng);
        const auto bias = random_vec(4, rng);
        const Tensor y1 = k::conv2d_forward(x, w, bias, geo);
        const Tensor y2 = k::reference::conv2d_forward(x, w, bias, geo);
        ASSERT_TRUE(y1.same_shape(y2));
        EXPECT_LT(max_diff(y1.data, y2.data), 1e-12);
      }
    }
  }
}

TEST(Conv, BackwardMatchesReference) {
  Rng rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    k::ConvGeometry geo{2, 3, trial % 3 == 0 ? 1 : 3, 1 + trial % 2, trial % 3 == 2 ? 0 : 1};
    const Tensor x = random_tensor(3, 2, 7, 6, rng);
    const auto w = random_vec(geo.weight_count(), rng);
    const Tensor y = k::conv2d_forward(x, w, {}, geo);
    const Tensor dy = random_tensor(y.n, y.c, y.h, y.w, rng);
    std::vector<double> dw1(w.size(), 0.5), dw2(w.size(), 0.5), db1(3, 0.0), db2(3, 0.0);
    const Tensor dx1 = k::conv2d_backward(x, w, geo, dy, dw1, db1, true);
    const Tensor dx2 = k::reference::conv2d_backward(x, w, geo, dy, dw2, db2, true);
    EXPECT_LT(max_diff(dw1, dw2), 1e-11);
    EXPECT_LT(max_diff(db1, db2), 1e-11);
    EXPECT_LT(max_diff(dx1.data, dx2.data), 1e-11);
  }
}

TEST(Conv, BackwardIsAdjointOfForward) {
  // <dy, conv(x)> is linear in x, so its gradient w.r.t. x must satisfy
  // <dx, x> = <dy, conv(x)> for a bias-free convolution.
  Rng rng(4);
  const k::ConvGeometry geo{2, 3, 3, 2, 1};
  const Tensor x = random_tensor(2, 2, 8, 8, rng);
  const auto w = random_vec(geo.weight_count(), rng);
  const Tensor y = k::conv2d_forward(x, w, {}, geo);
  const Tensor dy = random_tensor(y.n, y.c, y.h, y.w, rng);
  std::vector<double> dw(w.size(), 0.0);
  const Tensor dx = k::conv2d_backward(x, w, geo, dy, dw, {}, true);
  double lhs = 0, rhs = 0, wdot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) lhs += dx.data[i] * x.data[i];
  for (std::size_t i = 0; i < y.size(); ++i) rhs += dy.data[i] * y.data[i];
  for (std::size_t i = 0; i < w.size(); ++i) wdot += dw[i] * w[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
  EXPECT_NEAR(wdot, rhs, 1e-10);
}

TEST(Conv, ShapeErrors) {
  const k::ConvGeometry geo{3, 2, 3, 1, 0};
  Tensor x(1, 2, 5, 5);
  std::vector<double> w(geo.weight_count());
  EXPECT_THROW(k::conv2d_forward(x, w, {}, geo), ShapeError);
  Tensor small(1, 3, 2, 2);
  EXPECT_THROW(k::conv2d_forward(small, w, {}, geo), ShapeError);
}
