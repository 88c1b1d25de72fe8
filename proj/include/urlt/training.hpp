#pragma once

#include <cstddef>
#include <climits>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urlt/data.hpp"
#include "urlt/model.hpp"
#include "urlt/objectives.hpp"

namespace urlt {

// ---- optimizers ------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of `param` in place; `step` counts from 1.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 const AdamOptions& options, std::uint64_t step);
void sgd_update(std::span<double> param, std::span<const double> grad, double learning_rate);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Updates every trainable parameter that received a gradient; frozen
  // parameters and their optimizer state are left untouched.
  virtual void step(const TransformerModel& model) = 0;
  virtual std::string name() const = 0;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}
  void step(const TransformerModel& model) override;
  std::string name() const override { return "adam"; }
  const AdamMoments* moments(const std::string& parameter) const;

 private:
  AdamOptions options_;
  std::map<std::string, AdamMoments> state_;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double learning_rate) : learning_rate_(learning_rate) {}
  void step(const TransformerModel& model) override;
  std::string name() const override { return "sgd"; }

 private:
  double learning_rate_;
};

void zero_grad(const TransformerModel& model);
// Rescales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(const TransformerModel& model, double max_norm);

// ---- regimes -----------------------------------------------------------------

enum class Regime { decode_to_label, finetune, finetune_corpus, mixed };

std::string to_string(Regime regime);
// Accepts decode-to-label, finetune, finetune-corpus, mixed.
Regime parse_regime(const std::string& name);

struct RegimeConfig {
  Regime regime = Regime::mixed;
  std::size_t epochs = 5;
  // Next-character pretraining epochs for the fine-tune regimes.
  std::size_t pretrain_epochs = 5;
  std::size_t batch_size = 64;
  // Layers frozen in fine-tuning; defaults to floor(0.8 * num_layers).
  std::optional<std::size_t> freeze_layers;
  LossWeights weights;
  std::uint64_t seed = 1;
  // Stop after this many validation rounds without improvement; 0 disables.
  std::size_t patience = 0;
  std::size_t validate_every = 1;
  AdamOptions adam;
  double finetune_learning_rate = 1e-4;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;

  // 15 epochs, minibatch 512, 16 of 20 layers frozen, 2 corpus pretraining epochs.
  static RegimeConfig paper_preset(Regime regime);
  static RegimeConfig desk_preset(Regime regime);
  void validate() const;
};

enum class Phase { pretrain, train };
std::string to_string(Phase phase);

struct StepRecord {
  Phase phase = Phase::train;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double classification_loss = std::nan("");
  double next_char_loss = std::nan("");
  LossReport report;  // filled for the mixed objective
  double loss = 0.0;  // value that was differentiated
};

struct EpochRecord {
  Phase phase = Phase::train;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> validation_auc;
  std::optional<double> validation_loss;
};

struct History {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> best_epoch;
  std::optional<double> best_validation_auc;
  std::size_t fallback_events = 0;
};

struct TrainingCallbacks {
  std::function<void(Regime, const StepRecord&)> on_step;
  std::function<void(Regime, const EpochRecord&)> on_epoch;
};

struct TrainingResult {
  TransformerModel model;  // best-validation model (final model when no validation ran)
  History history;
};

struct EvaluationMetrics {
  double auc = 0.0;
  double loss = 0.0;
};

// Scores (sigmoid outputs) for labeled or unlabeled URLs in evaluation mode.
std::vector<double> predict_scores(const TransformerModel& model, const UrlDataset& data,
                                   std::size_t batch_size = 256);
EvaluationMetrics evaluate_epoch(const TransformerModel& model, const UrlDataset& data,
                                 std::size_t batch_size = 256);

// Runs one of the four regimes starting from `model`. `corpus` must be given
// exactly for the corpus fine-tune regime.
TrainingResult run_regime(const RegimeConfig& config, TransformerModel model, const UrlDataset& train,
                          const UrlDataset& validation, const UrlDataset* corpus = nullptr,
                          const TrainingCallbacks& callbacks = {});

// Order-sensitive FNV-1a digest over every parameter's bytes.
std::uint64_t parameter_checksum(const TransformerModel& model, int group_below = INT_MAX);

}  // namespace urlt
