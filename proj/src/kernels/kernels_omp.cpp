#include <malloc.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "urlt/kernels.hpp"

#if URLT_HAVE_LIBMVEC
// Exposes glibc's vector exp variants so the softmax loop vectorizes.
extern "C" __attribute__((simd("notinbranch"))) double exp(double) noexcept;
#endif

namespace urlt::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// exp(-700) is below 1e-304, far under any weight that can matter.
constexpr double kExpFloor = -700.0;

// Register-blocked update of C rows [row_begin, row_end):
// C[i, j] += sum_p a[i * sa_i + p * sa_p] * b[p * n + j], with p ascending for
// every element so the result does not depend on how rows are distributed.
constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;

template <std::size_t R, std::size_t C>
inline void micro_tile(std::size_t k, std::size_t n, const double* a, std::size_t sa_i, std::size_t sa_p,
                       const double* b, double* c) {
  double acc[R][C];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < C; ++j) acc[r][j] = c[r * n + j];
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[r * sa_i + p * sa_p];
#pragma omp simd
      for (std::size_t j = 0; j < C; ++j) acc[r][j] += av * bp[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < C; ++j) c[r * n + j] = acc[r][j];
}

inline void edge_tile(std::size_t rows, std::size_t cols, std::size_t k, std::size_t n, const double* a,
                      std::size_t sa_i, std::size_t sa_p, const double* b, double* c) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = c[r * n + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[r * sa_i + p * sa_p] * b[p * n + j];
      c[r * n + j] = acc;
    }
}

// One strip of R rows: 16-wide tiles, then an 8-wide tile, then scalar columns.
template <std::size_t R>
inline void strip(std::size_t rows, std::size_t n, std::size_t k, const double* a, std::size_t sa_i,
                  std::size_t sa_p, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + kNr <= n; j += kNr) micro_tile<R, kNr>(k, n, a, sa_i, sa_p, b + j, c + j);
  for (; j + kNr / 2 <= n; j += kNr / 2) micro_tile<R, kNr / 2>(k, n, a, sa_i, sa_p, b + j, c + j);
  if (j < n) edge_tile(rows, n - j, k, n, a, sa_i, sa_p, b + j, c + j);
}

inline void block_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k, const double* a,
                       std::size_t sa_i, std::size_t sa_p, const double* b, double* c) {
  std::size_t i = row_begin;
  for (; i + kMr <= row_end; i += kMr) strip<kMr>(kMr, n, k, a + i * sa_i, sa_i, sa_p, b, c + i * n);
  for (; i < row_end; ++i) strip<1>(1, n, k, a + i * sa_i, sa_i, sa_p, b, c + i * n);
}

inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

// Row-block-parallel driver shared by the nn and tn layouts.
inline void gemm_parallel(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t sa_i,
                          std::size_t sa_p, const double* b, double* c) {
  const std::size_t blocks = (m + kMr - 1) / kMr;
  const bool parallel = m * n * k >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t begin = blk * kMr;
    block_rows(begin, std::min(m, begin + kMr), n, k, a, sa_i, sa_p, b, c);
  }
}

}  // namespace

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc caps this at 32 MiB
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
}

int max_threads() { return omp_get_max_threads(); }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  gemm_parallel(m, n, k, a, k, 1, b, c);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  std::vector<double> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_parallel(m, n, k, a, k, 1, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  gemm_parallel(m, n, k, a, 1, m, b, c);
}

void batched_gemm_nn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c) {
  const bool parallel = batch * m * n * k >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t q = 0; q < batch; ++q)
    block_rows(0, m, n, k, a + q * m * k, k, 1, b + q * k * n, c + q * m * n);
}

void batched_gemm_nt(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c) {
  const bool parallel = batch * m * n * k >= kParallelWork;
#pragma omp parallel if (parallel)
  {
    std::vector<double> bt(n * k);
#pragma omp for schedule(static)
    for (std::size_t q = 0; q < batch; ++q) {
      transpose(n, k, b + q * n * k, bt.data());
      block_rows(0, m, n, k, a + q * m * k, k, 1, bt.data(), c + q * m * n);
    }
  }
}

void batched_gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c) {
  const bool parallel = batch * m * n * k >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t q = 0; q < batch; ++q)
    block_rows(0, m, n, k, a + q * k * m, 1, m, b + q * k * n, c + q * m * n);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* in, double* out) {
  const double floor_value = std::exp(kExpFloor);
  const bool parallel = rows * cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double* y = out + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    // Masked scores sit near -1e9; clamping them keeps the vector exp off its
    // slow out-of-range path, and the clamped values are then flushed to zero.
    // The clamp gets its own pass; fused with exp, GCC folds it into a select
    // after an unclamped call.
#pragma omp simd
    for (std::size_t j = 0; j < cols; ++j) y[j] = std::max(x[j] - mx, kExpFloor);
#pragma omp simd
    for (std::size_t j = 0; j < cols; ++j) y[j] = exp(y[j]);
    double sum = 0.0;
#pragma omp simd reduction(+ : sum)
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = y[j] <= floor_value ? 0.0 : y[j];
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
}

void normalize_rows(std::size_t rows, std::size_t cols, double eps, const double* in,
                    double* out, double* mean, double* rstd) {
  const bool parallel = rows * cols >= kParallelWork;
  const auto denom = static_cast<double>(cols);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += x[j];
    mu /= denom;
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= denom;
    const double inv = 1.0 / std::sqrt(var + eps);
    double* y = out + r * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * inv;
    mean[r] = mu;
    rstd[r] = inv;
  }
}

}  // namespace urlt::kernels
