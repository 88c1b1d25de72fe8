#include <bit>
#include <cmath>

#include "urlt/error.hpp"
#include "urlt/evaluation.hpp"
#include "urlt/training.hpp"

namespace urlt {
namespace {

// Independent streams derived from the run seed.
Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

enum class Objective { classification, next_char, mixed };

struct PhaseSpec {
  Phase phase;
  Objective objective;
  const UrlDataset* data;
  std::size_t epochs;
  Optimizer* optimizer;
  bool select_on_validation;
};

EncodeMode mode_for(Objective o) {
  switch (o) {
    case Objective::classification: return EncodeMode::classify;
    case Objective::next_char: return EncodeMode::pretrain;
    case Objective::mixed: return EncodeMode::mixed;
  }
  return EncodeMode::classify;
}

class Trainer {
 public:
  Trainer(const RegimeConfig& config, TransformerModel model, const UrlDataset& validation,
          const TrainingCallbacks& callbacks)
      : config_(config),
        model_(std::move(model)),
        validation_(validation),
        callbacks_(callbacks),
        shuffle_rng_(stream(config.seed, 1)),
        dropout_rng_(stream(config.seed, 2)) {}

  void run_phase(const PhaseSpec& spec) {
    optimizer_ = spec.optimizer;
    const auto encoded = spec.data->encode(mode_for(spec.objective), model_.config().context_window);
    std::size_t rounds_without_gain = 0;
    for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (const auto& idx : batch_indices(encoded.size(), config_.batch_size, true, shuffle_rng_)) {
        std::vector<EncodedUrl> items;
        items.reserve(idx.size());
        for (auto i : idx) items.push_back(encoded[i]);
        const Batch batch = make_batch(items, model_.config().context_window);
        StepRecord record = train_step(batch, spec.objective);
        record.phase = spec.phase;
        record.epoch = epoch;
        record.step = ++step_;
        loss_sum += record.loss;
        ++batches;
        if (callbacks_.on_step) callbacks_.on_step(config_.regime, record);
        history_.steps.push_back(std::move(record));
      }
      EpochRecord er;
      er.phase = spec.phase;
      er.epoch = epoch;
      er.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
      bool stop = false;
      if (spec.select_on_validation && !validation_.empty() && epoch % config_.validate_every == 0) {
        const auto metrics = evaluate_epoch(model_, validation_);
        er.validation_auc = metrics.auc;
        er.validation_loss = metrics.loss;
        if (!history_.best_validation_auc || metrics.auc > *history_.best_validation_auc) {
          history_.best_validation_auc = metrics.auc;
          history_.best_epoch = epoch;
          best_ = model_.clone();
          rounds_without_gain = 0;
        } else if (config_.patience > 0 && ++rounds_without_gain >= config_.patience) {
          stop = true;
        }
      }
      if (callbacks_.on_epoch) callbacks_.on_epoch(config_.regime, er);
      history_.epochs.push_back(er);
      if (stop) break;
    }
  }

  TransformerModel& model() { return model_; }

  TrainingResult finish() {
    if (best_) return {std::move(*best_), std::move(history_)};
    return {std::move(model_), std::move(history_)};
  }

 private:
  StepRecord train_step(const Batch& batch, Objective objective) {
    zero_grad(model_);
    StepRecord record;
    Tensor hidden = model_.forward(batch, true, dropout_rng_);
    Tensor loss;
    if (objective == Objective::classification) {
      loss = classification_loss_from_logits(model_.classify_logits(hidden, batch.cls_positions), batch.labels);
      record.classification_loss = loss.item();
    } else if (objective == Objective::next_char) {
      const auto targets = next_char_targets(batch);
      loss = next_char_loss_from_logits(model_.next_char_logits(hidden, targets.rows), targets);
      record.next_char_loss = loss.item();
    } else {
      Tensor cls = classification_loss_from_logits(model_.classify_logits(hidden, batch.cls_positions),
                                                   batch.labels);
      const auto targets = next_char_targets(batch);
      Tensor next = next_char_loss_from_logits(model_.next_char_logits(hidden, targets.rows), targets);
      auto balanced = balanced_mixed_loss(cls, next, config_.weights);
      record.classification_loss = cls.item();
      record.next_char_loss = next.item();
      if (balanced.report.fallback) ++history_.fallback_events;
      record.report = std::move(balanced.report);
      loss = balanced.loss;
    }
    record.loss = loss.item();
    if (!std::isfinite(record.loss)) throw Error("training diverged: non-finite loss");
    backward(loss);
    if (config_.clip_norm > 0.0) clip_grad_norm(model_, config_.clip_norm);
    optimizer_->step(model_);
    return record;
  }

  const RegimeConfig& config_;
  TransformerModel model_;
  const UrlDataset& validation_;
  const TrainingCallbacks& callbacks_;
  Rng shuffle_rng_;
  Rng dropout_rng_;
  Optimizer* optimizer_ = nullptr;
  History history_;
  std::optional<TransformerModel> best_;
  std::size_t step_ = 0;
};

void require_both_classes(const UrlDataset& data, const char* what) {
  if (!data.labeled()) throw ConfigError(std::string(what) + " set must be labeled");
  if (data.count_label(0) == 0 || data.count_label(1) == 0)
    throw ConfigError(std::string(what) + " set needs both benign and malicious URLs");
}

}  // namespace

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::decode_to_label: return "decode-to-label";
    case Regime::finetune: return "finetune";
    case Regime::finetune_corpus: return "finetune-corpus";
    case Regime::mixed: return "mixed";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  for (auto r : {Regime::decode_to_label, Regime::finetune, Regime::finetune_corpus, Regime::mixed})
    if (to_string(r) == name) return r;
  throw ConfigError("unknown regime '" + name +
                    "' (valid: decode-to-label, finetune, finetune-corpus, mixed)");
}

std::string to_string(Phase phase) { return phase == Phase::pretrain ? "pretrain" : "train"; }

RegimeConfig RegimeConfig::paper_preset(Regime regime) {
  RegimeConfig c;
  c.regime = regime;
  c.epochs = 15;
  c.pretrain_epochs = regime == Regime::finetune_corpus ? 2 : 15;
  c.batch_size = 512;
  c.freeze_layers = 16;
  return c;
}

RegimeConfig RegimeConfig::desk_preset(Regime regime) {
  RegimeConfig c;
  c.regime = regime;
  c.epochs = 5;
  c.pretrain_epochs = regime == Regime::finetune_corpus ? 2 : 5;
  c.batch_size = 64;
  return c;
}

void RegimeConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if ((regime == Regime::finetune || regime == Regime::finetune_corpus) && pretrain_epochs == 0)
    throw ConfigError("fine-tune regimes need at least one pretraining epoch");
  if (validate_every == 0) throw ConfigError("validate_every must be positive");
  if (!(adam.learning_rate > 0.0) || !(finetune_learning_rate > 0.0))
    throw ConfigError("learning rates must be positive");
  if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
  weights.validate();
  if (weights.fractions.size() != 2) throw ConfigError("mixed objective takes two loss fractions");
}

std::vector<double> predict_scores(const TransformerModel& model, const UrlDataset& data,
                                   std::size_t batch_size) {
  const auto encoded = data.encode(EncodeMode::classify, model.config().context_window);
  std::vector<double> scores;
  scores.reserve(encoded.size());
  Rng unused(0);
  for (std::size_t start = 0; start < encoded.size(); start += batch_size) {
    const std::size_t end = std::min(encoded.size(), start + batch_size);
    const Batch batch = make_batch(std::span(encoded).subspan(start, end - start), model.config().context_window);
    const Tensor hidden = model.forward(batch, false, unused);
    const Tensor s = model.classify(hidden, batch.cls_positions);
    scores.insert(scores.end(), s.values().begin(), s.values().end());
  }
  return scores;
}

EvaluationMetrics evaluate_epoch(const TransformerModel& model, const UrlDataset& data,
                                 std::size_t batch_size) {
  const auto scores = predict_scores(model, data, batch_size);
  const auto labels = data.labels();
  EvaluationMetrics m;
  m.auc = auc(scores, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double h = std::clamp(scores[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
    total -= labels[i] ? std::log(h) : std::log(1.0 - h);
  }
  m.loss = total / static_cast<double>(scores.size());
  return m;
}

TrainingResult run_regime(const RegimeConfig& config, TransformerModel model, const UrlDataset& train,
                          const UrlDataset& validation, const UrlDataset* corpus,
                          const TrainingCallbacks& callbacks) {
  config.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  require_both_classes(train, "training");
  if (!validation.empty()) require_both_classes(validation, "validation");
  const bool needs_corpus = config.regime == Regime::finetune_corpus;
  if (needs_corpus && (corpus == nullptr || corpus->empty()))
    throw ConfigError("regime finetune-corpus needs a non-empty pretraining corpus");
  if (!needs_corpus && corpus != nullptr)
    throw ConfigError("a pretraining corpus is only used by the finetune-corpus regime");

  Trainer trainer(config, std::move(model), validation, callbacks);
  Adam adam(config.adam);
  Sgd sgd(config.finetune_learning_rate);
  switch (config.regime) {
    case Regime::decode_to_label:
      trainer.run_phase({Phase::train, Objective::classification, &train, config.epochs, &adam, true});
      break;
    case Regime::mixed:
      trainer.run_phase({Phase::train, Objective::mixed, &train, config.epochs, &adam, true});
      break;
    case Regime::finetune:
    case Regime::finetune_corpus: {
      const UrlDataset& pretrain_set = needs_corpus ? *corpus : train;
      trainer.run_phase({Phase::pretrain, Objective::next_char, &pretrain_set, config.pretrain_epochs, &adam, false});
      const std::size_t layers = trainer.model().config().num_layers;
      const std::size_t k = config.freeze_layers.value_or(layers * 4 / 5);
      trainer.model().freeze_layers(k);
      trainer.run_phase({Phase::train, Objective::classification, &train, config.epochs, &sgd, true});
      break;
    }
  }
  return trainer.finish();
}

std::uint64_t parameter_checksum(const TransformerModel& model, int group_below) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : model.parameters()) {
    if (p.group >= group_below) continue;
    for (double v : p.tensor.values()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xFF;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

}  // namespace urlt
