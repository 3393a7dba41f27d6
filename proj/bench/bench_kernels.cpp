// Serial reference vs. parallel kernels at the shapes the conv4-tiny
// backbone hits during a training step.

#include <benchmark/benchmark.h>

#include <vector>

#include "eqinv/kernels.hpp"
#include "eqinv/random.hpp"

namespace {

using namespace eqinv;

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -1.0, 1.0));
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  auto a = random_values(m * k, 1);
  auto b = random_values(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::gemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n,
                              0.0f, c.data(), n);
    } else {
      kernels::serial::gemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n,
                            0.0f, c.data(), n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(
      2.0 * static_cast<double>(m * n * k), benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_ConvForwardBackward(benchmark::State& state) {
  kernels::ConvShape s;
  s.batch = static_cast<std::size_t>(state.range(0));
  s.in_channels = static_cast<std::size_t>(state.range(1));
  s.out_channels = static_cast<std::size_t>(state.range(2));
  s.height = s.width = static_cast<std::size_t>(state.range(3));
  s.kernel = 3;
  auto x = random_values(s.batch * s.in_channels * s.plane(), 3);
  auto w = random_values(s.out_channels * s.patch(), 4);
  std::vector<float> y(s.batch * s.out_channels * s.plane());
  std::vector<float> dx(x.size());
  std::vector<float> dw(w.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_forward(x.data(), w.data(), s, y.data());
      kernels::parallel::conv2d_backward(x.data(), w.data(), y.data(), s, dx.data(),
                                         dw.data());
    } else {
      kernels::serial::conv2d_forward(x.data(), w.data(), s, y.data());
      kernels::serial::conv2d_backward(x.data(), w.data(), y.data(), s, dx.data(),
                                       dw.data());
    }
    benchmark::DoNotOptimize(dw.data());
  }
  const double flops = 6.0 * static_cast<double>(s.batch * s.plane() * s.out_channels *
                                                 s.patch());
  state.counters["GFLOP/s"] = benchmark::Counter(
      flops, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Args({64, 4096, 288})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Args({64, 4096, 288})->Args({32, 32768, 288})->Unit(
    benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardBackward<false>)->Args({32, 16, 16, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardBackward<true>)
    ->Args({32, 16, 16, 16})
    ->Args({256, 3, 16, 16})
    ->Args({256, 16, 32, 8})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
