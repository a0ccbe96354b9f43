// Serial reference vs OpenMP kernels on shapes typical of the desk model.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "endoir/tensor/kernels.hpp"

namespace k = endoir::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

k::ConvGeometry geometry(std::int64_t hw, std::int64_t c) {
  k::ConvGeometry g{};
  g.batch = 4;
  g.in_channels = c;
  g.height = g.width = hw;
  g.out_channels = c;
  g.kernel_h = g.kernel_w = 3;
  g.stride = 1;
  g.padding = 1;
  g.out_h = g.out_w = hw;
  return g;
}

void conv_forward(benchmark::State& state, k::Exec exec) {
  const auto g = geometry(state.range(0), state.range(1));
  auto in = random_buffer(static_cast<std::size_t>(g.batch * g.in_channels * g.height * g.width), 1);
  auto w = random_buffer(static_cast<std::size_t>(g.out_channels * g.in_channels * 9), 2);
  std::vector<double> out(static_cast<std::size_t>(g.batch * g.out_channels * g.out_h * g.out_w));
  for (auto _ : state) {
    k::conv2d_forward(g, in.data(), w.data(), nullptr, out.data(), exec);
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(g.macs()), benchmark::Counter::kIsIterationInvariantRate);
}

void conv_backward_weight(benchmark::State& state, k::Exec exec) {
  const auto g = geometry(state.range(0), state.range(1));
  auto in = random_buffer(static_cast<std::size_t>(g.batch * g.in_channels * g.height * g.width), 1);
  auto gout = random_buffer(static_cast<std::size_t>(g.batch * g.out_channels * g.out_h * g.out_w), 3);
  std::vector<double> gw(static_cast<std::size_t>(g.out_channels * g.in_channels * 9));
  for (auto _ : state) {
    k::conv2d_backward_weight(g, gout.data(), in.data(), gw.data(), nullptr, exec);
    benchmark::DoNotOptimize(gw.data());
  }
}

void gemm(benchmark::State& state, k::Exec exec, bool trans_b) {
  const std::int64_t n = state.range(0);
  const k::GemmShape s{1, n, n, n, false, trans_b};
  auto a = random_buffer(static_cast<std::size_t>(n * n), 4);
  auto b = random_buffer(static_cast<std::size_t>(n * n), 5);
  std::vector<double> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    k::gemm(s, a.data(), b.data(), c.data(), false, exec);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK_CAPTURE(conv_forward, serial, k::Exec::Serial)->Args({32, 8})->Args({16, 16});
BENCHMARK_CAPTURE(conv_forward, parallel, k::Exec::Parallel)->Args({32, 8})->Args({16, 16});
BENCHMARK_CAPTURE(conv_backward_weight, serial, k::Exec::Serial)->Args({32, 8});
BENCHMARK_CAPTURE(conv_backward_weight, parallel, k::Exec::Parallel)->Args({32, 8});
BENCHMARK_CAPTURE(gemm, serial_nn, k::Exec::Serial, false)->Arg(256);
BENCHMARK_CAPTURE(gemm, parallel_nn, k::Exec::Parallel, false)->Arg(256);
BENCHMARK_CAPTURE(gemm, serial_nt, k::Exec::Serial, true)->Arg(256);
BENCHMARK_CAPTURE(gemm, parallel_nt, k::Exec::Parallel, true)->Arg(256);

BENCHMARK_MAIN();
