// Serial reference kernels against the OpenMP kernels on shapes seen in
// desk-scale and full-scale training steps.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "urlt/kernels.hpp"

namespace {

namespace k = urlt::kernels;

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <auto Gemm>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(m * kk, 1), b = random_values(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Gemm(m, n, kk, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * m * n * kk));
}

template <auto Batched>
void BM_batched(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto t = static_cast<std::size_t>(state.range(1));
  const auto dh = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(batch * t * dh, 3), b = random_values(batch * t * dh, 4);
  std::vector<double> c(batch * t * t);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Batched(batch, t, t, dh, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * batch * t * t * dh));
}

template <auto Softmax>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto in = random_values(rows * cols, 5);
  std::vector<double> out(rows * cols);
  for (auto _ : state) {
    Softmax(rows, cols, in.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Normalize>
void BM_normalize(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto in = random_values(rows * cols, 6);
  std::vector<double> out(rows * cols), mean(rows), rstd(rows);
  for (auto _ : state) {
    Normalize(rows, cols, 1e-5, in.data(), out.data(), mean.data(), rstd.data());
    benchmark::DoNotOptimize(out.data());
  }
}

// Rows = batch 64 x window 64 tokens; columns and depth follow the layer shapes.
void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({4096, 32, 32})->Args({4096, 64, 32})->Args({4096, 257, 32})->Args({16384, 128, 64});
}
void attention_shapes(benchmark::internal::Benchmark* b) { b->Args({256, 64, 8})->Args({2048, 256, 16}); }
void row_shapes(benchmark::internal::Benchmark* b) { b->Args({16384, 64})->Args({4096, 257}); }

BENCHMARK(BM_gemm<k::reference::gemm_nn>)->Name("gemm_nn/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::gemm_nn>)->Name("gemm_nn/omp")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::reference::gemm_nt>)->Name("gemm_nt/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::gemm_nt>)->Name("gemm_nt/omp")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::reference::gemm_tn>)->Name("gemm_tn/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<k::gemm_tn>)->Name("gemm_tn/omp")->Apply(gemm_shapes);
BENCHMARK(BM_batched<k::reference::batched_gemm_nt>)->Name("batched_gemm_nt/reference")->Apply(attention_shapes);
BENCHMARK(BM_batched<k::batched_gemm_nt>)->Name("batched_gemm_nt/omp")->Apply(attention_shapes);
BENCHMARK(BM_softmax<k::reference::softmax_rows>)->Name("softmax_rows/reference")->Apply(row_shapes);
BENCHMARK(BM_softmax<k::softmax_rows>)->Name("softmax_rows/omp")->Apply(row_shapes);
BENCHMARK(BM_normalize<k::reference::normalize_rows>)->Name("normalize_rows/reference")->Apply(row_shapes);
BENCHMARK(BM_normalize<k::normalize_rows>)->Name("normalize_rows/omp")->Apply(row_shapes);

}  // namespace

BENCHMARK_MAIN();
