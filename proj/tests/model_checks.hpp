#pragma once

// Finite-difference check of the whole model under each training loss, on a
// sample of coordinates from every parameter group.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "urlt/model.hpp"
#include "urlt/objectives.hpp"
#include "urlt/tensor.hpp"
#include "urlt/url_codec.hpp"

namespace urlt::test {

enum class LossKind { classification, next_char, mixed };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::classification: return "cls";
    case LossKind::next_char: return "next";
    case LossKind::mixed: return "mixed";
  }
  return "?";
}

struct GroupCheck {
  std::string group;
  GradCheckReport report;  // worst over the group's tensors
};

// Dropout stays on: the mask generator is reseeded on every evaluation so the
// function being differentiated is fixed.
inline std::vector<GroupCheck> check_model_gradients(const ModelConfig& config, LossKind kind,
                                                     std::size_t per_group, const GradCheckOptions& options,
                                                     std::uint64_t seed = 5) {
  Rng init(seed);
  TransformerModel model = TransformerModel::init(config, init);
  const EncodeMode mode = kind == LossKind::classification ? EncodeMode::classify
                          : kind == LossKind::next_char    ? EncodeMode::pretrain
                                                           : EncodeMode::mixed;
  std::vector<EncodedUrl> items;
  const std::vector<std::pair<const char*, int>> urls{
      {"http://example.com/a", 0}, {"https://x9q2zk.biz/login", 1}, {"ftp://b.io", 1}};
  for (const auto& [u, y] : urls) items.push_back(encode(u, mode, config.context_window, y));
  const Batch batch = make_batch(items, config.context_window);
  const NextCharTargets targets = mode == EncodeMode::classify ? NextCharTargets{} : next_char_targets(batch);

  auto components = [&](Tensor& cls, Tensor& next) {
    Rng drop(77);
    const Tensor h = model.forward(batch, true, drop);
    if (kind != LossKind::next_char)
      cls = classification_loss_from_logits(model.classify_logits(h, batch.cls_positions), batch.labels);
    if (kind != LossKind::classification) next = next_char_loss_from_logits(model.next_char_logits(h, targets.rows), targets);
  };

  // For the mixed loss the analytic pass differentiates the real balanced
  // loss (multipliers behind stop-gradient); the numeric passes hold the
  // multipliers at the values that pass computed.
  double alpha = 1.0, beta = 1.0;
  bool analytic_pass = true;
  auto loss_fn = [&]() -> Tensor {
    Tensor cls, next;
    components(cls, next);
    if (kind == LossKind::classification) return cls;
    if (kind == LossKind::next_char) return next;
    if (analytic_pass) {
      analytic_pass = false;
      BalancedLoss b = balanced_mixed_loss(cls, next, LossWeights{});
      alpha = b.report.multipliers[0];
      beta = b.report.multipliers[1];
      return b.loss;
    }
    return add(scale(cls, alpha), scale(next, beta));
  };

  // Embedding coordinates only matter on rows the batch uses.
  std::vector<std::size_t> used_rows(batch.tokens.begin(), batch.tokens.end());
  std::sort(used_rows.begin(), used_rows.end());
  used_rows.erase(std::unique(used_rows.begin(), used_rows.end()), used_rows.end());

  std::map<int, std::vector<NamedParameter>> groups;
  for (auto& p : model.parameters()) groups[p.group].push_back(p);

  std::vector<GroupCheck> out;
  Rng pick(seed + 1);
  for (auto& [group, params] : groups) {
    GroupCheck gc;
    gc.group = group < 0 ? "embedding" : group == static_cast<int>(config.num_layers) ? "heads"
                                                                                      : "layer" + std::to_string(group);
    std::size_t group_size = 0;
    for (const auto& p : params) group_size += p.tensor.size();
    for (auto& p : params) {
      const std::size_t n = p.tensor.size();
      std::size_t want = std::max<std::size_t>(2, (per_group * n + group_size - 1) / group_size);
      std::vector<std::size_t> idx;
      if (group < 0) {
        const std::size_t d = config.model_dim;
        for (std::size_t i = 0; i < want; ++i) idx.push_back(used_rows[pick() % used_rows.size()] * d + pick() % d);
      } else if (want >= n) {
        for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
      } else {
        for (std::size_t i = 0; i < want; ++i) idx.push_back(pick() % n);
      }
      analytic_pass = true;
      const GradCheckReport r = check_parameter_gradients(loss_fn, p.tensor, idx, options);
      gc.report.checked += r.checked;
      if (r.max_relative_error >= gc.report.max_relative_error) {
        const std::size_t checked = gc.report.checked;
        gc.report = r;
        gc.report.checked = checked;
      }
    }
    gc.report.passed = gc.report.max_relative_error < options.tolerance;
    out.push_back(gc);
  }
  return out;
}

}  // namespace urlt::test
