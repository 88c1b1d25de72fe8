#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a shared handle to a node. Operations on tensors that require
// gradients record their inputs and a local backward rule, so the graph is
// rebuilt on every forward pass (define-by-run). backward() orders the graph
// topologically from the loss and runs each rule exactly once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace urlt {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Uniform double in [0, 1) with 53 random bits, independent of the standard
// library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  // Writable access for initialization and optimizer updates; never use it on
  // a tensor whose graph is still waiting for backward().
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy of value only; the copy is a fresh leaf.
  Tensor clone() const;

  const char* op_name() const { return node_->op; }
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Builds an operation node. When any input requires gradients the node
  // keeps the inputs and the backward rule; otherwise both are dropped.
  static Tensor make_op(const char* name, Shape shape, std::vector<double> value,
                        std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Populates grad on every requires_grad ancestor of a scalar loss.
void backward(const Tensor& loss);

// Nodes reachable from `root`, inputs before consumers.
std::vector<detail::Node*> topological_order(const Tensor& root);

// Same values, no gradient flows back through the result.
Tensor stop_gradient(const Tensor& x);

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] * w[in, out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
// a[B, M, K] * b[B, K, N], or a * b^T with b[B, N, K] when transpose_b.
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x viewed as repeats of y (y.size() divides x.size()); y's gradient sums the repeats.
Tensor add_tiled(const Tensor& x, const Tensor& y);
Tensor sigmoid(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
// Gradient passes where lo <= x <= hi, zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- last-axis row operations ---------------------------------------------

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---- indexing and layout ---------------------------------------------------

// table[V, d], ids < V -> [ids.size(), d]; out-of-range ids raise VocabularyError.
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);
// Rows of x viewed as [R, last]; out-of-range rows raise ContractError.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& x, Shape shape);
// [B*T, h*dh] -> [B*h, T, dh]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads);
// [B*h, T, dh] -> [B*T, h*dh]
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);
// a[B, T1, d] ++ b[B, T2, d] along the sequence axis.
Tensor concat_seq(const Tensor& a, const Tensor& b);

// ---- attention and regularization -----------------------------------------

// scores[B*h, T, T] * factor + additive_mask[B, T, T] (mask shared across heads).
Tensor scaled_masked_scores(const Tensor& scores, std::span<const double> additive_mask,
                            std::size_t heads, double factor);
// softmax(scores * factor + additive_mask) over the last axis, fused.
Tensor masked_softmax(const Tensor& scores, std::span<const double> additive_mask, std::size_t heads,
                      double factor);
// Inverted dropout; identity when !training or p == 0. p outside [0, 1) is a ConfigError.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// ---- losses on rows --------------------------------------------------------

// sum_r weight[r] * -log_softmax(logits[r])[target[r]]
Tensor weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                              std::span<const double> weights);
// sum_r weight[r] * -log_probs[r][target[r]]
Tensor weighted_nll(const Tensor& log_probs, std::span<const std::size_t> targets,
                    std::span<const double> weights);
// mean_i BCE(sigmoid(logit_i), label_i), evaluated without forming the sigmoid.
Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels);

// ---- gradient verification -------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Magnitudes below this are compared absolutely rather than relatively.
  double scale_floor = 1e-8;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

// Central-difference check of d loss_fn() / d target at the listed flat
// indices (all indices when empty). loss_fn must rebuild the graph each call
// and read target's current values; target must require gradients.
GradCheckReport check_parameter_gradients(const std::function<Tensor()>& loss_fn, Tensor target,
                                          std::span<const std::size_t> indices = {},
                                          const GradCheckOptions& options = {});

// Convenience form for a scalar function of one tensor.
GradCheckReport check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                const GradCheckOptions& options = {});

}  // namespace urlt
