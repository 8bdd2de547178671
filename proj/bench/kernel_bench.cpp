// Serial reference kernels against the OpenMP ones, at shapes the models use.
//
//   spvit_kernel_bench --benchmark_filter=Gemm

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "spvit/kernels.hpp"

namespace k = spvit::kernels;

namespace {

std::vector<float> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

// Args: m, n, k. Rows are tokens x batch, columns the embedding.
template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const k::GemmShape s{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                       static_cast<std::size_t>(state.range(2))};
  const auto a = random_buffer(s.m * s.k, 1), b = random_buffer(s.k * s.n, 2);
  std::vector<float> c(s.m * s.n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gemm<float>(s, a, b, c);
    } else {
      k::reference::gemm<float>(s, a, b, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * s.m * s.n * s.k, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
  state.counters["threads"] = k::max_threads();
}

// Args: batch, channels, extent, filters (3x3, padding 1).
template <bool Parallel>
void BM_Conv2d(benchmark::State& state) {
  k::Conv2dShape s;
  s.batch = state.range(0);
  s.in_channels = state.range(1);
  s.height = s.width = state.range(2);
  s.filters = state.range(3);
  s.kernel_h = s.kernel_w = 3;
  s.padding = 1;
  const auto x = random_buffer(s.batch * s.in_channels * s.height * s.width, 3);
  const auto w = random_buffer(s.filters * s.in_channels * 9, 4);
  const auto bias = random_buffer(s.filters, 5);
  std::vector<float> y(s.batch * s.filters * s.out_h() * s.out_w());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_forward<float>(s, x, w, bias, y);
    } else {
      k::reference::conv2d_forward<float>(s, x, w, bias, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["threads"] = k::max_threads();
}

template <bool Parallel>
void BM_Conv2dBackward(benchmark::State& state) {
  k::Conv2dShape s;
  s.batch = state.range(0);
  s.in_channels = state.range(1);
  s.height = s.width = state.range(2);
  s.filters = state.range(3);
  s.kernel_h = s.kernel_w = 3;
  s.padding = 1;
  const auto x = random_buffer(s.batch * s.in_channels * s.height * s.width, 6);
  const auto w = random_buffer(s.filters * s.in_channels * 9, 7);
  const auto dy = random_buffer(s.batch * s.filters * s.out_h() * s.out_w(), 8);
  std::vector<float> dx(x.size()), dw(w.size()), db(s.filters);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward<float>(s, x, w, dy, dx, dw, db);
    } else {
      k::reference::conv2d_backward<float>(s, x, w, dy, dx, dw, db);
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

void gemm_args(benchmark::internal::Benchmark* b) {
  b->Args({16 * 17, 32, 32})->Args({16 * 17, 64, 32})->Args({197, 768, 768})->Args({197, 3072, 768});
  b->Unit(benchmark::kMillisecond);
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 3, 64, 8})->Args({16, 8, 32, 16})->Args({16, 3, 64, 24})->Args({16, 24, 32, 48});
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("Gemm/reference")->Apply(gemm_args);
BENCHMARK(BM_Gemm<true>)->Name("Gemm/parallel")->Apply(gemm_args);
BENCHMARK(BM_Conv2d<false>)->Name("Conv2d/reference")->Apply(conv_args);
BENCHMARK(BM_Conv2d<true>)->Name("Conv2d/parallel")->Apply(conv_args);
BENCHMARK(BM_Conv2dBackward<false>)->Name("Conv2dBackward/reference")->Apply(conv_args);
BENCHMARK(BM_Conv2dBackward<true>)->Name("Conv2dBackward/parallel")->Apply(conv_args);

BENCHMARK_MAIN();
