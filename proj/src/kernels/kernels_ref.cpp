#include <algorithm>
#include <cmath>

#include "urlt/kernels.hpp"

namespace urlt::kernels::reference {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] += s;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] += s;
    }
  }
}

void batched_gemm_nn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c) {
  for (std::size_t q = 0; q < batch; ++q) gemm_nn(m, n, k, a + q * m * k, b + q * k * n, c + q * m * n);
}

void batched_gemm_nt(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c) {
  for (std::size_t q = 0; q < batch; ++q) gemm_nt(m, n, k, a + q * m * k, b + q * n * k, c + q * m * n);
}

void batched_gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, const double* b, double* c) {
  for (std::size_t q = 0; q < batch; ++q) gemm_tn(m, n, k, a + q * k * m, b + q * k * n, c + q * m * n);
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* in, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double* y = out + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= sum;
  }
}

void normalize_rows(std::size_t rows, std::size_t cols, double eps, const double* in,
                    double* out, double* mean, double* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += x[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = (x[j] - mu) * inv;
    mean[r] = mu;
    rstd[r] = inv;
  }
}

}  // namespace urlt::kernels::reference
