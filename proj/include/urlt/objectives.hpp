#pragma once

// Classification loss, length-normalized next-character loss, and the
// balanced combination whose per-minibatch multipliers pin each term's share
// of the total.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "urlt/tensor.hpp"
#include "urlt/url_codec.hpp"

namespace urlt {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kZeroLoss = 1e-12;

// Desired loss fractions c_1..c_K; positive and summing to one.
struct LossWeights {
  std::vector<double> fractions{0.5, 0.5};

  static LossWeights pair(double classification, double next_char) {
    return LossWeights{{classification, next_char}};
  }
  void validate() const;
};

struct LossReport {
  std::vector<double> losses;
  std::vector<double> multipliers;
  // multiplier_i * L_i / combined
  std::vector<double> fractions;
  double combined = 0.0;
  // Set when some L_i <= kZeroLoss forced all multipliers back to one.
  bool fallback = false;
};

// Mean binary cross-entropy of sigmoid scores, clamped to [1e-12, 1 - 1e-12].
Tensor classification_loss(const Tensor& scores, std::span<const int> labels);
// Same loss computed stably from pre-sigmoid logits; used for training.
Tensor classification_loss_from_logits(const Tensor& logits, std::span<const int> labels);

// Flattened (b * width + i) rows, labels and 1 / (M_b * B) weights for every
// next-character position of a batch.
struct NextCharTargets {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> labels;
  std::vector<double> weights;
};
NextCharTargets next_char_targets(const Batch& batch);

// Per URL -1/M sum log P(label_i), averaged over the batch. `distributions`
// is [B, width, 257] (rows sum to one).
Tensor next_char_loss(const Tensor& distributions, const NextCharTargets& targets);
// Same from [rows, 257] logits already gathered at targets.rows.
Tensor next_char_loss_from_logits(const Tensor& logits, const NextCharTargets& targets);

struct Multipliers {
  double alpha = 1.0;
  double beta = 1.0;
  bool fallback = false;
};
Multipliers compute_multipliers(double classification_loss, double next_char_loss,
                                const LossWeights& weights);

// gamma_i = c_i * sum_j L_j / L_i; every gamma falls back to one when any
// L_i <= kZeroLoss.
std::vector<double> compute_k_multipliers(std::span<const double> losses,
                                          std::span<const double> fractions, bool* fallback = nullptr);

struct BalancedLoss {
  Tensor loss;
  LossReport report;
};

// alpha * L_cls + beta * L_next with the multipliers held constant for
// differentiation.
BalancedLoss balanced_mixed_loss(const Tensor& classification, const Tensor& next_char,
                                 const LossWeights& weights);
BalancedLoss balanced_k_loss(std::span<const Tensor> losses, std::span<const double> fractions);

}  // namespace urlt
