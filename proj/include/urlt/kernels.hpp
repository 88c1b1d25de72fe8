#pragma once

// Dense kernels behind the autodiff engine.
//
// Every kernel exists twice: urlt::kernels is OpenMP-parallel and is what the
// engine calls; urlt::kernels::reference is a plain serial loop nest kept for
// tests and benchmarks. Parallel kernels split work over output rows only, so
// each output element is produced by a single thread in a fixed order and
// results do not depend on the thread count.
//
// All matrices are dense row-major. The gemm family accumulates into C.

#include <cstddef>

namespace urlt::kernels {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

// Batched forms: `batch` independent contiguous problems.
void batched_gemm_nn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c);
void batched_gemm_nt(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c);
void batched_gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c);

// Row-wise softmax with max subtraction.
void softmax_rows(std::size_t rows, std::size_t cols, const double* in, double* out);

// Row-wise normalization: out = (x - mean) * rstd, also returning per-row
// mean and reciprocal standard deviation for the backward pass.
void normalize_rows(std::size_t rows, std::size_t cols, double eps, const double* in,
                    double* out, double* mean, double* rstd);

namespace reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);
void batched_gemm_nn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c);
void batched_gemm_nt(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c);
void batched_gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c);
void softmax_rows(std::size_t rows, std::size_t cols, const double* in, double* out);
void normalize_rows(std::size_t rows, std::size_t cols, double eps, const double* in,
                    double* out, double* mean, double* rstd);

}  // namespace reference

// Number of threads the parallel kernels will use.
int max_threads();

// Keeps freed tensor buffers in the heap instead of returning them to the OS.
// Training allocates and frees the same large buffers every step, and with
// glibc defaults each one is a fresh mmap plus page faults.
void tune_allocator();

}  // namespace urlt::kernels
