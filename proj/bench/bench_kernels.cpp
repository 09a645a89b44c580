#include <benchmark/benchmark.h>

#include "fpml/backbone.hpp"
#include "fpml/freq.hpp"
#include "fpml/kernels.hpp"

using namespace fpml;
namespace k = fpml::kernels;

namespace {

Tensor random_tensor(int n, int c, int h, int w) {
  Rng rng(1);
  Tensor t(n, c, h, w);
  for (auto& v : t.data) v = uniform(rng, -1, 1);
  return t;
}

std::vector<double> random_vec(std::size_t n) {
  Rng rng(2);
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -1, 1);
  return v;
}

// Args: batch, channels, spatial size.
template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), s = state.range(2);
  const k::ConvGeometry geo{c, c, 3, 1, 1};
  const Tensor x = random_tensor(n, c, s, s);
  const auto w = random_vec(geo.weight_count());
  const auto b = random_vec(c);
  for (auto _ : state) {
    Tensor y = Reference ? k::reference::conv2d_forward(x, w, b, geo) : k::conv2d_forward(x, w, b, geo);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), s = state.range(2);
  const k::ConvGeometry geo{c, c, 3, 1, 1};
  const Tensor x = random_tensor(n, c, s, s);
  const Tensor dy = random_tensor(n, c, s, s);
  const auto w = random_vec(geo.weight_count());
  std::vector<double> dw(w.size()), db(c);
  for (auto _ : state) {
    Tensor dx = Reference ? k::reference::conv2d_backward(x, w, geo, dy, dw, db, true)
                          : k::conv2d_backward(x, w, geo, dy, dw, db, true);
    benchmark::DoNotOptimize(dx.data.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Reference>
void BM_Gemm(benchmark::State& state) {
  const int m = state.range(0);
  const auto a = random_vec(static_cast<std::size_t>(m) * m);
  const auto b = random_vec(static_cast<std::size_t>(m) * m);
  std::vector<double> c(static_cast<std::size_t>(m) * m);
  for (auto _ : state) {
    if (Reference) {
      k::reference::gemm(a, b, c, m, m, m, false, true, false);
    } else {
      k::gemm(a, b, c, m, m, m, false, true, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * m * m * m);
}

void BM_EmbedConv4(benchmark::State& state) {
  ArchSpec a;
  a.width = 32;
  Rng rng(3);
  const EmbeddingParams p = init_embedding(a, rng);
  const Backbone net(a);
  const Tensor x = random_tensor(state.range(0), 3, 32, 32);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(p, x).data.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Decompose(benchmark::State& state) {
  Image img(3, state.range(0), state.range(0));
  Rng rng(4);
  for (auto& v : img.pixels) v = uniform01(rng);
  const freq::DecompositionSettings s;
  for (auto _ : state) benchmark::DoNotOptimize(freq::decompose(img, s).low.pixels.data());
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/parallel")->Args({25, 32, 32})->Args({75, 32, 16});
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Args({25, 32, 32})->Args({75, 32, 16});
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/parallel")->Args({25, 32, 32});
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/reference")->Args({25, 32, 32});
BENCHMARK(BM_Gemm<false>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_EmbedConv4)->Arg(75);
BENCHMARK(BM_Decompose)->Arg(32)->Arg(84);

BENCHMARK_MAIN();
