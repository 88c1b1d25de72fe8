#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "urlt/error.hpp"
#include "urlt/training.hpp"

namespace urlt {
namespace {

TEST(Adam, FirstStepOnUnitGradient) {
  std::vector<double> p{0.0};
  AdamMoments m;
  adam_update(p, std::vector<double>{1.0}, m, AdamOptions{}, 1);
  EXPECT_NEAR(p[0], -1e-3 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(p[0], -1e-3, 1e-10);
}

TEST(Adam, BiasCorrectionOverSeveralSteps) {
  std::vector<double> p{0.3, -0.2};
  AdamMoments m;
  const AdamOptions o{0.01, 0.8, 0.95, 1e-8};
  double m0 = 0, v0 = 0, ref = 0.3;
  const std::vector<double> gs{0.5, -1.5, 2.0};
  for (std::size_t t = 1; t <= gs.size(); ++t) {
    adam_update(p, std::vector<double>{gs[t - 1], 0.0}, m, o, t);
    m0 = 0.8 * m0 + 0.2 * gs[t - 1];
    v0 = 0.95 * v0 + 0.05 * gs[t - 1] * gs[t - 1];
    const double mh = m0 / (1 - std::pow(0.8, t)), vh = v0 / (1 - std::pow(0.95, t));
    ref -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p[0], ref, 1e-15);
  }
  EXPECT_EQ(p[1], -0.2);
}

TEST(Adam, ShapeMismatchRejected) {
  std::vector<double> p{0.0, 1.0};
  AdamMoments m;
  EXPECT_THROW(adam_update(p, std::vector<double>{1.0}, m, AdamOptions{}, 1), ContractError);
}

TEST(Sgd, Examples) {
  std::vector<double> p{1.0};
  sgd_update(p, std::vector<double>{2.0}, 0.1);
  EXPECT_DOUBLE_EQ(p[0], 0.8);
  sgd_update(p, std::vector<double>{5.0}, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 0.8);
}

TEST(Optimizers, BothDescendConvexBowl) {
  // f(p) = (p - 3)^2 from p = 0.
  std::vector<double> a{0.0}, s{0.0};
  AdamMoments m;
  for (std::uint64_t t = 1; t <= 50; ++t) {
    adam_update(a, std::vector<double>{2 * (a[0] - 3)}, m, AdamOptions{0.05}, t);
    sgd_update(s, std::vector<double>{2 * (s[0] - 3)}, 0.05);
  }
  EXPECT_GT(a[0], 0.5);
  EXPECT_GT(s[0], 0.5);
  EXPECT_LT(std::abs(s[0] - 3), 3.0);
}

TEST(Optimizers, ZeroGradientLeavesParametersAndSameRunsAgree) {
  Rng r1(4), r2(4);
  auto m1 = TransformerModel::init(test::tiny_config(), r1);
  auto m2 = TransformerModel::init(test::tiny_config(), r2);
  const auto before = parameter_checksum(m1);
  Adam adam;
  for (auto p : m1.parameters()) {
    p.tensor.zero_grad();
    p.tensor.node()->ensure_grad();
  }
  adam.step(m1);
  EXPECT_EQ(parameter_checksum(m1), before);

  std::vector<EncodedUrl> items{encode("ab.com", EncodeMode::classify, 16, 0), encode("x9z", EncodeMode::classify, 16, 1)};
  const Batch b = make_batch(items, 16);
  Adam o1, o2;
  for (int step = 0; step < 3; ++step) {
    for (auto* pair : {&m1, &m2}) {
      zero_grad(*pair);
      Rng drop(step);
      backward(classification_loss_from_logits(pair->classify_logits(pair->forward(b, true, drop), b.cls_positions), b.labels));
    }
    o1.step(m1);
    o2.step(m2);
  }
  EXPECT_NE(parameter_checksum(m1), before);
  EXPECT_EQ(parameter_checksum(m1), parameter_checksum(m2));
}

TEST(ClipGradNorm, RescalesToBound) {
  Rng rng(5);
  auto model = TransformerModel::init(test::tiny_config(), rng);
  std::vector<EncodedUrl> items{encode("ab.com", EncodeMode::classify, 16, 0), encode("x9z", EncodeMode::classify, 16, 1)};
  const Batch b = make_batch(items, 16);
  zero_grad(model);
  backward(classification_loss_from_logits(model.classify_logits(model.forward(b, false, rng), b.cls_positions), b.labels));
  auto norm = [&] {
    double s = 0;
    for (const auto& p : model.parameters())
      for (double g : p.tensor.grad()) s += g * g;
    return std::sqrt(s);
  };
  const double before = norm();
  const double reported = clip_grad_norm(model, before / 4);
  EXPECT_NEAR(reported, before, 1e-12 * before);
  EXPECT_NEAR(norm(), before / 4, 1e-9 * before);
}

TEST(Regime, NamesRoundTrip) {
  for (auto r : {Regime::decode_to_label, Regime::finetune, Regime::finetune_corpus, Regime::mixed})
    EXPECT_EQ(parse_regime(to_string(r)), r);
  try {
    parse_regime("bogus");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("decode-to-label"), std::string::npos);
  }
}

TEST(Regime, Presets) {
  const auto p = RegimeConfig::paper_preset(Regime::finetune);
  EXPECT_EQ(p.epochs, 15u);
  EXPECT_EQ(p.batch_size, 512u);
  EXPECT_EQ(p.freeze_layers, 16u);
  EXPECT_EQ(RegimeConfig::paper_preset(Regime::finetune_corpus).pretrain_epochs, 2u);
  EXPECT_EQ(p.finetune_learning_rate, 1e-4);
  EXPECT_EQ(p.adam.learning_rate, 1e-3);
  EXPECT_EQ(p.adam.beta1, 0.9);
  EXPECT_EQ(p.adam.beta2, 0.999);
  EXPECT_EQ(p.adam.epsilon, 1e-8);
  EXPECT_EQ(p.clip_norm, 0.0);
  const auto d = RegimeConfig::desk_preset(Regime::mixed);
  EXPECT_EQ(d.epochs, 5u);
  EXPECT_EQ(d.batch_size, 64u);
  EXPECT_EQ(d.weights.fractions, (std::vector<double>{0.5, 0.5}));
}

UrlDataset synthetic(std::size_t per_class, std::uint64_t seed) {
  SyntheticSpec s;
  s.n_benign = s.n_malicious = per_class;
  s.seed = seed;
  s.max_length = 40;
  return generate_synthetic(s);
}

ModelConfig small_model() {
  ModelConfig c = test::tiny_config();
  c.context_window = 48;
  return c;
}

TrainingResult quick_run(Regime regime, std::size_t epochs, std::uint64_t seed, const UrlDataset& train,
                         const UrlDataset& val, const UrlDataset* corpus = nullptr, double ft_lr = 1e-4,
                         std::optional<std::size_t> freeze = std::nullopt) {
  RegimeConfig c = RegimeConfig::desk_preset(regime);
  c.epochs = epochs;
  c.pretrain_epochs = 1;
  c.batch_size = 16;
  c.seed = seed;
  c.finetune_learning_rate = ft_lr;
  c.freeze_layers = freeze;
  Rng init(seed);
  return run_regime(c, TransformerModel::init(small_model(), init), train, val, corpus);
}

TEST(RunRegime, ErrorsOnMissingOrStrayCorpus) {
  const auto train = synthetic(10, 1), val = synthetic(5, 2);
  EXPECT_THROW(quick_run(Regime::finetune_corpus, 1, 1, train, val), ConfigError);
  EXPECT_THROW(quick_run(Regime::mixed, 1, 1, train, val, &train), ConfigError);
  EXPECT_THROW(quick_run(Regime::mixed, 1, 1, UrlDataset{}, val), ConfigError);
}

TEST(RunRegime, AllRegimesCompleteAndRecordHistory) {
  const auto train = synthetic(24, 1), val = synthetic(8, 2), corpus = synthetic(16, 3);
  for (auto r : {Regime::decode_to_label, Regime::finetune, Regime::finetune_corpus, Regime::mixed}) {
    const auto res = quick_run(r, 2, 3, train, val, r == Regime::finetune_corpus ? &corpus : nullptr);
    SCOPED_TRACE(to_string(r));
    const bool two_phase = r == Regime::finetune || r == Regime::finetune_corpus;
    EXPECT_EQ(res.history.epochs.size(), two_phase ? 3u : 2u);
    ASSERT_TRUE(res.history.best_validation_auc);
    for (const auto& s : res.history.steps) EXPECT_TRUE(std::isfinite(s.loss));
    if (two_phase) {
      EXPECT_EQ(res.history.steps.front().phase, Phase::pretrain);
      EXPECT_EQ(res.model.frozen_layers(), 1u);  // floor(0.8 * 2)
      const std::size_t pre = r == Regime::finetune ? 3 : 2;
      EXPECT_EQ(res.history.steps[pre - 1].phase, Phase::pretrain);
      EXPECT_EQ(res.history.steps[pre].phase, Phase::train);
    }
    if (r == Regime::mixed)
      for (const auto& s : res.history.steps) {
        ASSERT_EQ(s.report.fractions.size(), 2u);
        if (!s.report.fallback) {
          EXPECT_LT(std::abs(s.report.fractions[0] - 0.5), 1e-6);
        }
      }
  }
}

TEST(RunRegime, SameSeedGivesBitIdenticalModels) {
  const auto train = synthetic(24, 1), val = synthetic(8, 2);
  for (auto r : {Regime::mixed, Regime::finetune}) {
    const auto a = quick_run(r, 2, 7, train, val);
    const auto b = quick_run(r, 2, 7, train, val);
    EXPECT_EQ(parameter_checksum(a.model), parameter_checksum(b.model));
  }
  EXPECT_NE(parameter_checksum(quick_run(Regime::mixed, 2, 7, train, val).model),
            parameter_checksum(quick_run(Regime::mixed, 2, 8, train, val).model));
}

TEST(RunRegime, FullFreezeKeepsStackAcrossPhaseTwo) {
  // Phase one is identical in both runs; only the phase-two step size differs.
  const auto train = synthetic(24, 1), val = synthetic(8, 2);
  const auto slow = quick_run(Regime::finetune, 2, 9, train, val, nullptr, 1e-4, 2);
  const auto fast = quick_run(Regime::finetune, 2, 9, train, val, nullptr, 0.5, 2);
  EXPECT_EQ(parameter_checksum(slow.model, 2), parameter_checksum(fast.model, 2));
  EXPECT_NE(parameter_checksum(slow.model), parameter_checksum(fast.model));
}

TEST(RunRegime, PatienceStopsEarly) {
  const auto train = synthetic(24, 1), val = synthetic(8, 2);
  RegimeConfig c = RegimeConfig::desk_preset(Regime::decode_to_label);
  c.epochs = 30;
  c.batch_size = 16;
  c.patience = 1;
  Rng init(3);
  const auto res = run_regime(c, TransformerModel::init(small_model(), init), train, val);
  EXPECT_LT(res.history.epochs.size(), 30u);
}

TEST(RunRegime, BestValidationModelIsReturned) {
  const auto train = synthetic(24, 1), val = synthetic(8, 2);
  const auto res = quick_run(Regime::decode_to_label, 3, 4, train, val);
  EXPECT_NEAR(evaluate_epoch(res.model, val).auc, *res.history.best_validation_auc, 1e-15);
}

TEST(Evaluate, DoesNotWriteParameters) {
  Rng rng(6);
  const auto model = TransformerModel::init(small_model(), rng);
  const auto before = parameter_checksum(model);
  const auto m = evaluate_epoch(model, synthetic(10, 5));
  EXPECT_EQ(parameter_checksum(model), before);
  EXPECT_GE(m.auc, 0.0);
  EXPECT_LE(m.auc, 1.0);
  EXPECT_GT(m.loss, 0.0);
  EXPECT_EQ(evaluate_epoch(model, synthetic(10, 5)).auc, m.auc);
}

TEST(Training, LearnsDeterministicSuccessor) {
  // Strings over {a..f} in which every 'a' is followed by 'b'.
  Rng rng(21);
  std::vector<EncodedUrl> corpus;
  for (int i = 0; i < 512; ++i) {
    std::string s;
    const std::size_t len = 6 + rng() % 12;
    while (s.size() < len) {
      const char c = static_cast<char>('a' + rng() % 6);
      s += c;
      if (c == 'a') s += 'b';
    }
    corpus.push_back(encode(s, EncodeMode::pretrain, 64));
  }
  Rng init(22), drop(23), order(24);
  auto model = TransformerModel::init(ModelConfig::desk_scale(), init);
  Adam adam;
  std::size_t steps = 0;
  while (steps < 200) {
    for (const auto& idx : batch_indices(corpus.size(), 64, true, order)) {
      if (steps++ == 200) break;
      std::vector<EncodedUrl> items;
      for (auto i : idx) items.push_back(corpus[i]);
      const Batch b = make_batch(items, 64);
      const auto t = next_char_targets(b);
      zero_grad(model);
      backward(next_char_loss_from_logits(model.next_char_logits(model.forward(b, true, drop), t.rows), t));
      adam.step(model);
    }
  }
  const std::vector<EncodedUrl> probe{encode("cdefa", EncodeMode::pretrain, 64), encode("fa", EncodeMode::pretrain, 64)};
  const Batch b = make_batch(probe, 64);
  const Tensor p = model.predict_next(model.forward(b, false, drop));
  EXPECT_GT(p.at((0 * b.width + 4) * kVocabSize + 'b'), 0.9);
  EXPECT_GT(p.at((1 * b.width + 1) * kVocabSize + 'b'), 0.9);
}

TEST(Training, SmoothedLossFallsInEveryRegime) {
  SyntheticSpec s;
  s.n_benign = s.n_malicious = 1000;
  const auto train = generate_synthetic(s);
  const UrlDataset none;
  for (auto r : {Regime::decode_to_label, Regime::finetune, Regime::finetune_corpus, Regime::mixed}) {
    RegimeConfig c = RegimeConfig::desk_preset(r);
    c.batch_size = 16;
    const bool two_phase = r == Regime::finetune || r == Regime::finetune_corpus;
    c.epochs = 4;  // 500 steps per phase
    c.pretrain_epochs = 2;
    Rng init(1);
    const auto res = run_regime(c, TransformerModel::init({}, init), train, none, r == Regime::finetune_corpus ? &train : nullptr);
    for (auto phase : {Phase::pretrain, Phase::train}) {
      std::vector<double> losses;
      for (const auto& st : res.history.steps)
        if (st.phase == phase) losses.push_back(st.loss);
      if (losses.empty()) continue;
      ASSERT_GE(losses.size(), 200u);
      const double first = std::accumulate(losses.begin(), losses.begin() + 100, 0.0);
      const double last = std::accumulate(losses.end() - 100, losses.end(), 0.0);
      EXPECT_LT(last, first) << to_string(r) << " " << to_string(phase);
    }
  }
}

}  // namespace
}  // namespace urlt
