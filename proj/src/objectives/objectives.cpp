#include "urlt/objectives.hpp"

#include <cmath>
#include <numeric>

#include "urlt/error.hpp"

namespace urlt {

void LossWeights::validate() const {
  if (fractions.empty()) throw ConfigError("loss weights need at least one fraction");
  double total = 0.0;
  for (double c : fractions) {
    if (!(c > 0.0)) throw ConfigError("loss fractions must be positive");
    total += c;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("loss fractions must sum to 1");
}

Tensor classification_loss(const Tensor& scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("classification_loss: " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(labels.size()) + " labels");
  Tensor h = clamp(scores, kProbabilityFloor, 1.0 - kProbabilityFloor);
  Tensor flat = reshape(h, {h.size()});
  // -[y log h + (1 - y) log(1 - h)] as a weighted NLL over two columns.
  std::vector<double> cols(2 * flat.size());
  const auto hv = flat.values();
  for (std::size_t i = 0; i < hv.size(); ++i) {
    cols[2 * i] = 1.0 - hv[i];
    cols[2 * i + 1] = hv[i];
  }
  Tensor two = Tensor::make_op("bernoulli_pair", {flat.size(), 2}, std::move(cols), {flat},
                               [](detail::Node& self) {
                                 detail::Node& in = *self.inputs[0];
                                 if (!in.requires_grad) return;
                                 auto& g = in.ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   g[i] += self.grad[2 * i + 1] - self.grad[2 * i];
                               });
  std::vector<std::size_t> targets(labels.size());
  std::vector<double> weights(labels.size(), 1.0 / static_cast<double>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InputError("labels must be 0 or 1");
    targets[i] = static_cast<std::size_t>(labels[i]);
  }
  return weighted_nll(log(two), targets, weights);
}

Tensor classification_loss_from_logits(const Tensor& logits, std::span<const int> labels) {
  for (int y : labels)
    if (y != 0 && y != 1) throw InputError("labels must be 0 or 1");
  return binary_cross_entropy_with_logits(logits, labels);
}

NextCharTargets next_char_targets(const Batch& batch) {
  if (batch.next_char_labels.size() != batch.size())
    throw ContractError("batch carries no next-character labels");
  NextCharTargets t;
  const double n = static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t len = batch.lengths[b];
    const auto& labels = batch.next_char_labels[b];
    for (std::size_t i = 0; i < len; ++i) {
      if (!batch.masks.next_char[b * batch.width + i]) continue;
      t.rows.push_back(b * batch.width + i);
      t.labels.push_back(labels[i]);
      t.weights.push_back(1.0 / (static_cast<double>(len) * n));
    }
  }
  return t;
}

Tensor next_char_loss(const Tensor& distributions, const NextCharTargets& targets) {
  Tensor rows = gather_rows(distributions, targets.rows);
  return weighted_nll(log(clamp(rows, kProbabilityFloor, 1.0)), targets.labels, targets.weights);
}

Tensor next_char_loss_from_logits(const Tensor& logits, const NextCharTargets& targets) {
  return weighted_cross_entropy(logits, targets.labels, targets.weights);
}

Multipliers compute_multipliers(double classification_loss, double next_char_loss,
                                const LossWeights& weights) {
  weights.validate();
  if (weights.fractions.size() != 2) throw ConfigError("mixed objective needs exactly two fractions");
  const double losses[2] = {classification_loss, next_char_loss};
  bool fallback = false;
  const auto gamma = compute_k_multipliers(losses, weights.fractions, &fallback);
  return {gamma[0], gamma[1], fallback};
}

std::vector<double> compute_k_multipliers(std::span<const double> losses,
                                          std::span<const double> fractions, bool* fallback) {
  if (losses.size() != fractions.size() || losses.empty())
    throw ConfigError("need one fraction per loss term");
  bool degenerate = false;
  double total = 0.0;
  for (double l : losses) {
    degenerate = degenerate || !(l > kZeroLoss);
    total += l;
  }
  if (fallback) *fallback = degenerate;
  std::vector<double> gamma(losses.size(), 1.0);
  if (degenerate) return gamma;
  for (std::size_t i = 0; i < losses.size(); ++i) gamma[i] = fractions[i] * total / losses[i];
  return gamma;
}

BalancedLoss balanced_k_loss(std::span<const Tensor> losses, std::span<const double> fractions) {
  LossWeights{{fractions.begin(), fractions.end()}}.validate();
  std::vector<double> values;
  for (const auto& l : losses) values.push_back(l.item());
  BalancedLoss out;
  out.report.losses = values;
  out.report.multipliers = compute_k_multipliers(values, fractions, &out.report.fallback);

  Tensor combined;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    // The multiplier is a plain constant, so no gradient flows through it.
    Tensor term = scale(losses[i], out.report.multipliers[i]);
    combined = combined.defined() ? add(combined, term) : term;
  }
  out.loss = reshape(combined, {});
  out.report.combined = out.loss.item();
  for (std::size_t i = 0; i < losses.size(); ++i)
    out.report.fractions.push_back(out.report.combined != 0.0
                                       ? out.report.multipliers[i] * values[i] / out.report.combined
                                       : 0.0);
  return out;
}

BalancedLoss balanced_mixed_loss(const Tensor& classification, const Tensor& next_char,
                                 const LossWeights& weights) {
  if (weights.fractions.size() != 2) throw ConfigError("mixed objective needs exactly two fractions");
  const Tensor terms[2] = {classification, next_char};
  return balanced_k_loss(terms, weights.fractions);
}

}  // namespace urlt
