#include <algorithm>
#include <cmath>

#include "urlt/error.hpp"
#include "urlt/kernels.hpp"
#include "urlt/tensor.hpp"

namespace urlt {
namespace {

using detail::Node;

std::vector<double> copy_values(const Tensor& x) { return {x.values().begin(), x.values().end()}; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " differ");
}

std::size_t last_extent(const Tensor& x) { return x.rank() == 0 ? 1 : x.shape().back(); }

// Applies dy/dx elementwise: grad_in += grad_out * local(i).
template <typename Local>
Tensor unary(const char* name, const Tensor& x, std::vector<double> out, Local local) {
  return Tensor::make_op(name, x.shape(), std::move(out), {x}, [local](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * local(in.value[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor::make_op("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad)
      kernels::gemm_nt(m, k, n, self.grad.data(), nb.value.data(), na.ensure_grad().data());
    if (nb.requires_grad)
      kernels::gemm_tn(k, n, m, na.value.data(), self.grad.data(), nb.ensure_grad().data());
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.rank() == 0 || last_extent(x) != w.dim(0) || bias.rank() != 1 ||
      bias.dim(0) != w.dim(1))
    throw DimensionError("linear: input " + to_string(x.shape()) + ", weight " +
                         to_string(w.shape()) + ", bias " + to_string(bias.shape()));
  const std::size_t in = w.dim(0), out_dim = w.dim(1), rows = x.size() / in;
  std::vector<double> out(rows * out_dim);
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * out_dim);
  kernels::gemm_nn(rows, out_dim, in, x.values().data(), w.values().data(), out.data());
  Shape shape = x.shape();
  shape.back() = out_dim;
  return Tensor::make_op("linear", std::move(shape), std::move(out), {x, w, bias},
                         [rows, in, out_dim](Node& self) {
                           Node& nx = *self.inputs[0];
                           Node& nw = *self.inputs[1];
                           Node& nb = *self.inputs[2];
                           const double* g = self.grad.data();
                           if (nx.requires_grad)
                             kernels::gemm_nt(rows, in, out_dim, g, nw.value.data(), nx.ensure_grad().data());
                           if (nw.requires_grad)
                             kernels::gemm_tn(in, out_dim, rows, nx.value.data(), g, nw.ensure_grad().data());
                           if (nb.requires_grad) {
                             auto& gb = nb.ensure_grad();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                           }
                         });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  (transpose_b ? a.dim(2) == b.dim(2) : a.dim(2) == b.dim(1));
  if (!ok)
    throw DimensionError(std::string("batched_matmul: cannot multiply ") + to_string(a.shape()) +
                         " by " + to_string(b.shape()) + (transpose_b ? "^T" : ""));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  if (transpose_b)
    kernels::batched_gemm_nt(batch, m, n, k, a.values().data(), b.values().data(), out.data());
  else
    kernels::batched_gemm_nn(batch, m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor::make_op("batched_matmul", {batch, m, n}, std::move(out), {a, b},
                         [batch, m, n, k, transpose_b](Node& self) {
                           Node& na = *self.inputs[0];
                           Node& nb = *self.inputs[1];
                           const double* g = self.grad.data();
                           if (transpose_b) {
                             if (na.requires_grad)
                               kernels::batched_gemm_nn(batch, m, k, n, g, nb.value.data(), na.ensure_grad().data());
                             if (nb.requires_grad)
                               kernels::batched_gemm_tn(batch, n, k, m, g, na.value.data(), nb.ensure_grad().data());
                           } else {
                             if (na.requires_grad)
                               kernels::batched_gemm_nt(batch, m, k, n, g, nb.value.data(), na.ensure_grad().data());
                             if (nb.requires_grad)
                               kernels::batched_gemm_tn(batch, k, n, m, na.value.data(), g, nb.ensure_grad().data());
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return Tensor::make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return Tensor::make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t which = 0; which < 2; ++which) {
      Node& in = *self.inputs[which];
      if (!in.requires_grad) continue;
      const double sign = which == 0 ? 1.0 : -1.0;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return Tensor::make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out = copy_values(x);
  for (auto& v : out) v *= factor;
  return unary("scale", x, std::move(out), [factor](double, double) { return factor; });
}

Tensor add_tiled(const Tensor& x, const Tensor& y) {
  if (y.size() == 0 || x.size() % y.size() != 0)
    throw DimensionError("add_tiled: " + to_string(y.shape()) + " does not tile " +
                         to_string(x.shape()));
  const std::size_t period = y.size();
  std::vector<double> out = copy_values(x);
  const auto yv = y.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i % period];
  return Tensor::make_op("add_tiled", x.shape(), std::move(out), {x, y}, [period](Node& self) {
    Node& nx = *self.inputs[0];
    Node& ny = *self.inputs[1];
    if (nx.requires_grad) {
      auto& g = nx.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (ny.requires_grad) {
      auto& g = ny.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % period] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = x.at(i);
    if (z >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-z));
    } else {
      const double e = std::exp(z);
      out[i] = e / (1.0 + e);
    }
  }
  return unary("sigmoid", x, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Tensor elu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = x.at(i);
    out[i] = z >= 0.0 ? z : std::expm1(z);
  }
  return unary("elu", x, std::move(out), [](double z, double y) { return z >= 0.0 ? 1.0 : y + 1.0; });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.at(i));
  return unary("relu", x, std::move(out), [](double z, double) { return z > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.at(i));
  return unary("log", x, std::move(out), [](double z, double) { return 1.0 / z; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x.at(i), lo, hi);
  return unary("clamp", x, std::move(out),
               [lo, hi](double z, double) { return z >= lo && z <= hi ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return Tensor::make_op("sum", {}, {total}, {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor softmax(const Tensor& x) {
  const std::size_t cols = last_extent(x), rows = x.size() / cols;
  std::vector<double> out(x.size());
  kernels::softmax_rows(rows, cols, x.values().data(), out.data());
  return Tensor::make_op("softmax", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t cols = last_extent(x), rows = x.size() / cols;
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = row[j] - lse;
  }
  return Tensor::make_op("log_softmax", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t j = 0; j < cols; ++j) total += gy[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += gy[j] - std::exp(y[j]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t cols = last_extent(x), rows = x.size() / cols;
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols})
    throw DimensionError("layer_norm: input " + to_string(x.shape()) + ", gain " +
                         to_string(gain.shape()) + ", bias " + to_string(bias.shape()));
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  std::vector<double> xhat(x.size()), mu(rows), rstd(rows);
  kernels::normalize_rows(rows, cols, eps, x.values().data(), xhat.data(), mu.data(), rstd.data());
  std::vector<double> out(x.size());
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j)
      out[r * cols + j] = xhat[r * cols + j] * gv[j] + bv[j];
  return Tensor::make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const double* gy = self.grad.data();
        if (nb.requires_grad) {
          auto& g = nb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) g[j] += gy[r * cols + j];
        }
        if (ng.requires_grad) {
          auto& g = ng.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < cols; ++j) g[j] += gy[r * cols + j] * xhat[r * cols + j];
        }
        if (nx.requires_grad) {
          auto& g = nx.ensure_grad();
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              const double gh = gy[r * cols + j] * ng.value[j];
              mean_g += gh;
              mean_gx += gh * xhat[r * cols + j];
            }
            mean_g /= n;
            mean_gx /= n;
            for (std::size_t j = 0; j < cols; ++j) {
              const double gh = gy[r * cols + j] * ng.value[j];
              g[r * cols + j] += rstd[r] * (gh - mean_g - xhat[r * cols + j] * mean_gx);
            }
          }
        }
      });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t cols = last_extent(x), n_rows = x.size() / cols;
  if (rows.empty()) throw ContractError("gather_rows: no rows requested");
  std::vector<double> out(rows.size() * cols);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n_rows)
      throw ContractError("gather_rows: row " + std::to_string(rows[r]) + " outside " +
                          std::to_string(n_rows) + " rows");
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[r] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return Tensor::make_op("gather_rows", {rows.size(), cols}, std::move(out), {x},
                         [cols, index = std::move(index)](Node& self) {
                           Node& in = *self.inputs[0];
                           if (!in.requires_grad) return;
                           auto& g = in.ensure_grad();
                           for (std::size_t r = 0; r < index.size(); ++r)
                             for (std::size_t j = 0; j < cols; ++j)
                               g[index[r] * cols + j] += self.grad[r * cols + j];
                         });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + to_string(table.shape()));
  for (auto id : ids)
    if (id >= table.dim(0))
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(table.dim(0)));
  return gather_rows(table, ids);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  return Tensor::make_op("reshape", std::move(shape), copy_values(x), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

// Maps flat index of [B*h, T, dh] to the matching index of [B*T, h*dh].
struct HeadLayout {
  std::size_t batch, seq, heads, head_dim;
  // Calls f(split_offset, merged_offset, head_dim) for every contiguous head slice.
  template <typename F>
  void for_each_slice(F f) const {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t t = 0; t < seq; ++t)
          f(((b * heads + hh) * seq + t) * head_dim, ((b * seq + t) * heads + hh) * head_dim);
  }
};

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads) {
  if (x.rank() != 2 || x.dim(0) != batch * seq || heads == 0 || x.dim(1) % heads != 0)
    throw DimensionError("split_heads: " + to_string(x.shape()) + " with batch " +
                         std::to_string(batch) + ", seq " + std::to_string(seq) + ", heads " +
                         std::to_string(heads));
  const HeadLayout layout{batch, seq, heads, x.dim(1) / heads};
  std::vector<double> out(x.size());
  const auto xv = x.values();
  const std::size_t hd = layout.head_dim;
  layout.for_each_slice([&](std::size_t sp, std::size_t mp) {
    for (std::size_t e = 0; e < hd; ++e) out[sp + e] = xv[mp + e];
  });
  return Tensor::make_op("split_heads", {batch * heads, seq, layout.head_dim}, std::move(out), {x},
                         [layout](Node& self) {
                           Node& in = *self.inputs[0];
                           if (!in.requires_grad) return;
                           auto& g = in.ensure_grad();
                           layout.for_each_slice([&](std::size_t sp, std::size_t mp) {
                             for (std::size_t e = 0; e < layout.head_dim; ++e) g[mp + e] += self.grad[sp + e];
                           });
                         });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  if (x.rank() != 3 || x.dim(0) != batch * heads)
    throw DimensionError("merge_heads: " + to_string(x.shape()) + " with batch " +
                         std::to_string(batch) + ", heads " + std::to_string(heads));
  const HeadLayout layout{batch, x.dim(1), heads, x.dim(2)};
  std::vector<double> out(x.size());
  const auto xv = x.values();
  layout.for_each_slice([&](std::size_t sp, std::size_t mp) {
    for (std::size_t e = 0; e < layout.head_dim; ++e) out[mp + e] = xv[sp + e];
  });
  return Tensor::make_op("merge_heads", {batch * layout.seq, heads * layout.head_dim}, std::move(out),
                         {x}, [layout](Node& self) {
                           Node& in = *self.inputs[0];
                           if (!in.requires_grad) return;
                           auto& g = in.ensure_grad();
                           layout.for_each_slice([&](std::size_t sp, std::size_t mp) {
                             for (std::size_t e = 0; e < layout.head_dim; ++e) g[sp + e] += self.grad[mp + e];
                           });
                         });
}

Tensor concat_seq(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    throw DimensionError("concat_seq: " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t batch = a.dim(0), ta = a.dim(1), tb = b.dim(1), d = a.dim(2);
  std::vector<double> out(a.size() + b.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t q = 0; q < batch; ++q) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(q * ta * d), ta * d,
                out.begin() + static_cast<std::ptrdiff_t>(q * (ta + tb) * d));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(q * tb * d), tb * d,
                out.begin() + static_cast<std::ptrdiff_t>((q * (ta + tb) + ta) * d));
  }
  return Tensor::make_op("concat_seq", {batch, ta + tb, d}, std::move(out), {a, b},
                         [batch, ta, tb, d](Node& self) {
                           Node& na = *self.inputs[0];
                           Node& nb = *self.inputs[1];
                           for (std::size_t q = 0; q < batch; ++q) {
                             const double* g = self.grad.data() + q * (ta + tb) * d;
                             if (na.requires_grad) {
                               double* ga = na.ensure_grad().data() + q * ta * d;
                               for (std::size_t i = 0; i < ta * d; ++i) ga[i] += g[i];
                             }
                             if (nb.requires_grad) {
                               double* gb = nb.ensure_grad().data() + q * tb * d;
                               for (std::size_t i = 0; i < tb * d; ++i) gb[i] += g[ta * d + i];
                             }
                           }
                         });
}

namespace {

std::vector<double> masked_scores(const Tensor& scores, std::span<const double> additive_mask,
                                  std::size_t heads, double factor) {
  if (scores.rank() != 3 || scores.dim(1) != scores.dim(2) || heads == 0 ||
      scores.dim(0) % heads != 0)
    throw DimensionError("attention scores must be [B*h, T, T], got " + to_string(scores.shape()));
  const std::size_t plane = scores.dim(1) * scores.dim(2);
  const std::size_t batch = scores.dim(0) / heads;
  if (additive_mask.size() != batch * plane)
    throw ContractError("attention mask holds " + std::to_string(additive_mask.size()) +
                        " entries, scores need " + std::to_string(batch * plane));
  std::vector<double> out(scores.size());
  const auto sv = scores.values();
  for (std::size_t q = 0; q < scores.dim(0); ++q) {
    const double* mask = additive_mask.data() + (q / heads) * plane;
    for (std::size_t i = 0; i < plane; ++i) out[q * plane + i] = sv[q * plane + i] * factor + mask[i];
  }
  return out;
}

}  // namespace

Tensor scaled_masked_scores(const Tensor& scores, std::span<const double> additive_mask,
                            std::size_t heads, double factor) {
  std::vector<double> out = masked_scores(scores, additive_mask, heads, factor);
  return unary("scaled_masked_scores", scores, std::move(out), [factor](double, double) { return factor; });
}

Tensor masked_softmax(const Tensor& scores, std::span<const double> additive_mask, std::size_t heads,
                      double factor) {
  std::vector<double> out = masked_scores(scores, additive_mask, heads, factor);
  const std::size_t cols = scores.dim(2), rows = scores.size() / cols;
  kernels::softmax_rows(rows, cols, out.data(), out.data());
  return Tensor::make_op("masked_softmax", scores.shape(), std::move(out), {scores}, [rows, cols, factor](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += factor * y[j] * (gy[j] - dot);
    }
  });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  const auto xv = x.values();
  std::vector<unsigned char> keep(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    keep[i] = uniform01(rng) >= p;
    out[i] = keep[i] ? xv[i] * keep_scale : 0.0;
  }
  return Tensor::make_op("dropout", x.shape(), std::move(out), {x}, [keep = std::move(keep), keep_scale](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (keep[i]) g[i] += self.grad[i] * keep_scale;
  });
}

namespace {

void check_row_targets(const char* op, const Tensor& x, std::span<const std::size_t> targets,
                       std::span<const double> weights) {
  if (x.rank() != 2 || targets.size() != x.dim(0) || weights.size() != x.dim(0))
    throw DimensionError(std::string(op) + ": input " + to_string(x.shape()) + " with " +
                         std::to_string(targets.size()) + " targets and " +
                         std::to_string(weights.size()) + " weights");
  for (auto t : targets)
    if (t >= x.dim(1))
      throw ContractError(std::string(op) + ": target " + std::to_string(t) + " outside " +
                          std::to_string(x.dim(1)) + " classes");
}

}  // namespace

Tensor weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                              std::span<const double> weights) {
  check_row_targets("weighted_cross_entropy", logits, targets, weights);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> probs(logits.size());
  kernels::softmax_rows(rows, cols, logits.values().data(), probs.data());
  const auto lv = logits.values();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = lv.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
    total += weights[r] * (mx + std::log(s) - row[targets[r]]);
  }
  std::vector<std::size_t> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_op("weighted_cross_entropy", {}, {total}, {logits},
                         [rows, cols, probs = std::move(probs), t = std::move(t), w = std::move(w)](Node& self) {
                           Node& in = *self.inputs[0];
                           if (!in.requires_grad) return;
                           auto& g = in.ensure_grad();
                           const double go = self.grad[0];
                           for (std::size_t r = 0; r < rows; ++r) {
                             if (w[r] == 0.0) continue;
                             const double c = go * w[r];
                             for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += c * probs[r * cols + j];
                             g[r * cols + t[r]] -= c;
                           }
                         });
}

Tensor weighted_nll(const Tensor& log_probs, std::span<const std::size_t> targets,
                    std::span<const double> weights) {
  check_row_targets("weighted_nll", log_probs, targets, weights);
  const std::size_t cols = log_probs.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) total -= weights[r] * log_probs.at(r * cols + targets[r]);
  std::vector<std::size_t> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_op("weighted_nll", {}, {total}, {log_probs},
                         [cols, t = std::move(t), w = std::move(w)](Node& self) {
                           Node& in = *self.inputs[0];
                           if (!in.requires_grad) return;
                           auto& g = in.ensure_grad();
                           for (std::size_t r = 0; r < t.size(); ++r) g[r * cols + t[r]] -= self.grad[0] * w[r];
                         });
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels) {
  if (labels.size() != logits.size())
    throw DimensionError("binary_cross_entropy_with_logits: " + std::to_string(logits.size()) +
                         " logits, " + std::to_string(labels.size()) + " labels");
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = logits.at(i);
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  std::vector<int> y(labels.begin(), labels.end());
  return Tensor::make_op("bce_with_logits", {}, {total / n}, {logits}, [n, y = std::move(y)](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double z = in.value[i];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      g[i] += self.grad[0] * (s - y[i]) / n;
    }
  });
}

}  // namespace urlt
