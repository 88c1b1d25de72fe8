#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "model_checks.hpp"
#include "support.hpp"
#include "urlt/error.hpp"
#include "urlt/model.hpp"
#include "urlt/training.hpp"

namespace urlt {
namespace {

using test::TempDir;

// Parameter count written out per block, independent of the model code.
std::size_t expected_parameters(const ModelConfig& c) {
  const std::size_t d = c.model_dim, f = c.ffn_dim, v = c.vocab_size, h = c.head_hidden;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t norms = 2 * 2 * d;
  auto head = [&](std::size_t out) { return 2 * d + d * h + h + h * out + out; };
  return v * d + c.num_layers * (attention + ffn + norms) + head(1) + head(v);
}

Batch batch_of(const std::vector<std::string>& urls, EncodeMode mode, std::size_t window, bool trim = true) {
  std::vector<EncodedUrl> items;
  for (const auto& u : urls) items.push_back(encode(u, mode, window, 0));
  return make_batch(items, window, trim);
}

TEST(Config, Presets) {
  const auto full = ModelConfig::full_scale();
  EXPECT_EQ(full.num_layers, 20u);
  EXPECT_EQ(full.context_window, 256u);
  EXPECT_EQ(full.model_dim, 64u);
  EXPECT_EQ(full.ffn_dim, 128u);
  EXPECT_EQ(full.num_heads, 4u);
  EXPECT_EQ(full.dropout, 0.1);
  const auto desk = ModelConfig::desk_scale();
  EXPECT_EQ(desk.num_layers, 2u);
  EXPECT_EQ(desk.context_window, 64u);
  EXPECT_EQ(desk.model_dim, 32u);
  EXPECT_EQ(desk.ffn_dim, 64u);
  EXPECT_EQ(desk.num_heads, 4u);
  EXPECT_EQ(desk.vocab_size, 257u);
}

TEST(Config, InvalidConfigsRejected) {
  auto bad = [](auto mutate) {
    ModelConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](ModelConfig& c) { c.num_heads = 5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.context_window = 1; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.dropout = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.vocab_size = 300; }).validate(), ConfigError);
  Rng rng(1);
  EXPECT_THROW(TransformerModel::init(bad([](ModelConfig& c) { c.num_heads = 3; }), rng), ConfigError);
}

TEST(Init, DeskParameterCount) {
  Rng rng(1);
  const auto model = TransformerModel::init(ModelConfig::desk_scale(), rng);
  EXPECT_EQ(model.parameter_count(), expected_parameters(ModelConfig::desk_scale()));
  EXPECT_EQ(model.parameter_count(), 36066u);
}

TEST(Init, FullScaleParameterCount) {
  Rng rng(1);
  const auto cfg = ModelConfig::full_scale();
  EXPECT_EQ(TransformerModel::init(cfg, rng).parameter_count(), expected_parameters(cfg));
}

TEST(Init, SameSeedBitIdentical) {
  Rng a(9), b(9), c(10);
  const auto m1 = TransformerModel::init({}, a), m2 = TransformerModel::init({}, b), m3 = TransformerModel::init({}, c);
  EXPECT_EQ(parameter_checksum(m1), parameter_checksum(m2));
  EXPECT_NE(parameter_checksum(m1), parameter_checksum(m3));
}

TEST(Init, XavierBoundsZeroBiasesUnitGains) {
  Rng rng(2);
  const auto model = TransformerModel::init({}, rng);
  for (const auto& p : model.parameters()) {
    const auto& s = p.tensor.shape();
    const auto v = p.tensor.values();
    const bool is_bias = p.name.ends_with("_b") || p.name.ends_with("bias");
    const bool is_gain = p.name.ends_with("gain");
    if (is_gain) {
      for (double x : v) EXPECT_EQ(x, 1.0) << p.name;
    } else if (is_bias) {
      for (double x : v) EXPECT_EQ(x, 0.0) << p.name;
    } else {
      ASSERT_EQ(s.size(), 2u) << p.name;
      const double bound = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
      double max_abs = 0;
      for (double x : v) max_abs = std::max(max_abs, std::abs(x));
      EXPECT_LE(max_abs, bound) << p.name;
      EXPECT_GT(max_abs, 0.8 * bound) << p.name;
    }
  }
}

TEST(PositionalEncoding, Values) {
  const Tensor pe = positional_encoding(16, 8);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(pe.at(j), j % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(pe.at(8), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe.at(8), 0.8415, 1e-4);
  // PE[pos, 2i+1] = cos(pos / 10000^(2i/d)) with pos 3, i 2, d 8.
  EXPECT_NEAR(pe.at(3 * 8 + 5), std::cos(3.0 / std::pow(10000.0, 4.0 / 8.0)), 1e-15);
  for (double v : pe.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(positional_encoding(16, 7), ConfigError);
}

TEST(Forward, CausalityUnderPerturbation) {
  Rng rng(3);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  for (int trial = 0; trial < 20; ++trial) {
    std::string url = test::random_url(rng, 4, 14);
    const std::size_t i = rng() % (url.size() - 1);
    std::string changed = url;
    for (std::size_t j = i + 1; j < url.size(); ++j) changed[j] = static_cast<char>('a' + rng() % 26);
    const Batch a = batch_of({url}, EncodeMode::pretrain, 16, false);
    const Batch b = batch_of({changed}, EncodeMode::pretrain, 16, false);
    const Tensor ha = model.forward(a, false, rng), hb = model.forward(b, false, rng);
    const std::size_t d = 8;
    for (std::size_t p = 0; p <= i; ++p)
      for (std::size_t k = 0; k < d; ++k) ASSERT_EQ(ha.at(p * d + k), hb.at(p * d + k)) << "position " << p;
  }
}

TEST(Forward, IdenticalSequencesGiveIdenticalRows) {
  Rng rng(4);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  const Batch b = batch_of({"abc.com/x", "abc.com/x", "abc.com/x"}, EncodeMode::classify, 16);
  const Tensor scores = model.classify(model.forward(b, false, rng), b.cls_positions);
  EXPECT_EQ(scores.at(0), scores.at(1));
  EXPECT_EQ(scores.at(0), scores.at(2));
}

TEST(Forward, PaddingInvariance) {
  Rng rng(5);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  for (const char* url : {"a", "example.com", "x/y?z=1"}) {
    const Batch tight = batch_of({url}, EncodeMode::mixed, 16, true);
    const Batch padded = batch_of({url}, EncodeMode::mixed, 16, false);
    ASSERT_LT(tight.width, padded.width);
    const Tensor ht = model.forward(tight, false, rng), hp = model.forward(padded, false, rng);
    const std::size_t d = 8;
    for (std::size_t p = 0; p < tight.width; ++p)
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(ht.at(p * d + k), hp.at(p * d + k), 1e-10);
    EXPECT_NEAR(model.classify(ht, tight.cls_positions).item(), model.classify(hp, padded.cls_positions).item(), 1e-10);
  }
}

TEST(Forward, PaddingInsideBatchDoesNotLeak) {
  Rng rng(6);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  const Batch alone = batch_of({"ab.io"}, EncodeMode::classify, 16);
  const Batch mixed = batch_of({"ab.io", "a-much-longer-url.org/x"}, EncodeMode::classify, 16);
  const double s1 = model.classify(model.forward(alone, false, rng), alone.cls_positions).item();
  const double s2 = model.classify(model.forward(mixed, false, rng), mixed.cls_positions).at(0);
  EXPECT_NEAR(s1, s2, 1e-10);
}

TEST(Forward, WindowMismatchRejected) {
  Rng rng(7);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  const Batch b = batch_of({"abc"}, EncodeMode::classify, 32);
  EXPECT_THROW(model.forward(b, false, rng), ContractError);
}

TEST(Classify, ScoresStrictlyInsideUnitInterval) {
  Rng rng(8);
  const auto model = TransformerModel::init({}, rng);
  const Batch b = batch_of({"http://a.com", "https://q8z.biz/x", "z"}, EncodeMode::classify, 64);
  const Tensor scores = model.classify(model.forward(b, false, rng), b.cls_positions);
  for (double s : scores.values()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Classify, ReadsOnlyTheClsHiddenState) {
  Rng rng(9);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  const Tensor h = test::random_tensor({2, 6, 8}, rng);
  const std::vector<std::size_t> cls{3, 5};
  const double s0 = model.classify(h, cls).at(0);
  Tensor h2 = h.clone();
  for (std::size_t p = 0; p < 6; ++p)
    if (p != 3)
      for (std::size_t k = 0; k < 8; ++k) h2.mutable_values()[p * 8 + k] += 1.0;
  EXPECT_EQ(model.classify(h2, cls).at(0), s0);
  h2.mutable_values()[3 * 8] += 1.0;
  EXPECT_NE(model.classify(h2, cls).at(0), s0);
}

TEST(PredictNext, RowsSumToOneAndAreCausal) {
  Rng rng(10);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  const Batch a = batch_of({"abcdefg"}, EncodeMode::pretrain, 16, false);
  const Batch b = batch_of({"abcdXYZ"}, EncodeMode::pretrain, 16, false);
  const Tensor pa = model.predict_next(model.forward(a, false, rng));
  const Tensor pb = model.predict_next(model.forward(b, false, rng));
  EXPECT_EQ(pa.shape(), (Shape{1, 16, 257}));
  for (std::size_t p = 0; p < 16; ++p) {
    double total = 0;
    for (std::size_t v = 0; v < 257; ++v) total += pa.at(p * 257 + v);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t v = 0; v < 257; ++v) EXPECT_EQ(pa.at(p * 257 + v), pb.at(p * 257 + v));
}

TEST(Freeze, GroupsAndRange) {
  Rng rng(11);
  auto model = TransformerModel::init({}, rng);
  for (const auto& p : model.parameters()) EXPECT_TRUE(p.tensor.requires_grad());
  model.freeze_layers(0);
  for (const auto& p : model.parameters()) EXPECT_FALSE(model.is_frozen(p)) << p.name;
  model.freeze_layers(1);
  for (const auto& p : model.parameters()) {
    const bool should = p.name == "embedding" || p.name.starts_with("layer0.");
    EXPECT_EQ(model.is_frozen(p), should) << p.name;
    EXPECT_EQ(p.tensor.requires_grad(), !should) << p.name;
  }
  model.freeze_layers(2);
  for (const auto& p : model.parameters())
    EXPECT_EQ(model.is_frozen(p), !p.name.starts_with("classifier.") && !p.name.starts_with("next_char.")) << p.name;
  EXPECT_THROW(model.freeze_layers(3), ConfigError);
}

TEST(Freeze, FrozenLayerBitIdenticalAfterStep) {
  Rng rng(12);
  auto model = TransformerModel::init({}, rng);
  model.freeze_layers(1);
  const auto before = parameter_checksum(model, 1);
  const auto all_before = parameter_checksum(model);
  std::vector<EncodedUrl> items{encode("http://a.com/x", EncodeMode::classify, 64, 0),
                                encode("https://zz9q.biz", EncodeMode::classify, 64, 1)};
  const Batch lb = make_batch(items, 64);
  Adam adam;
  zero_grad(model);
  backward(classification_loss_from_logits(model.classify_logits(model.forward(lb, true, rng), lb.cls_positions),
                                           lb.labels));
  adam.step(model);
  EXPECT_EQ(parameter_checksum(model, 1), before);
  EXPECT_NE(parameter_checksum(model), all_before);
  EXPECT_EQ(adam.moments("layer0.query_w"), nullptr);
  EXPECT_EQ(adam.moments("embedding"), nullptr);
  EXPECT_NE(adam.moments("layer1.query_w"), nullptr);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  Rng rng(13);
  auto model = TransformerModel::init(test::tiny_config(), rng);
  model.freeze_layers(1);
  save_checkpoint(model, dir / "m.bin");
  const auto loaded = load_checkpoint(dir / "m.bin");
  EXPECT_EQ(loaded.config(), model.config());
  EXPECT_EQ(parameter_checksum(loaded), parameter_checksum(model));
  const Batch b = batch_of({"abc.com/def", "q"}, EncodeMode::mixed, 16);
  const Tensor h1 = model.forward(b, false, rng), h2 = loaded.forward(b, false, rng);
  const Tensor s1 = model.classify(h1, b.cls_positions), s2 = loaded.classify(h2, b.cls_positions);
  EXPECT_TRUE(std::ranges::equal(s1.values(), s2.values()));
}

TEST(Checkpoint, LayoutHeader) {
  TempDir dir;
  Rng rng(14);
  save_checkpoint(TransformerModel::init(test::tiny_config(), rng), dir / "m.bin");
  std::ifstream in(dir / "m.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GT(bytes.size(), 44u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "URLT");
  auto u32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(bytes[off]) | static_cast<std::uint32_t>(bytes[off + 1]) << 8 |
           static_cast<std::uint32_t>(bytes[off + 2]) << 16 | static_cast<std::uint32_t>(bytes[off + 3]) << 24;
  };
  EXPECT_EQ(u32(4), kCheckpointVersion);
  EXPECT_EQ(u32(8), 2u);    // layers
  EXPECT_EQ(u32(12), 16u);  // window
  EXPECT_EQ(u32(16), 8u);   // width
  EXPECT_EQ(u32(28), 100000u);  // dropout in parts per million
  EXPECT_EQ(u32(32), 257u);
}

TEST(Checkpoint, CorruptFilesRejected) {
  TempDir dir;
  Rng rng(15);
  save_checkpoint(TransformerModel::init(test::tiny_config(), rng), dir / "m.bin");
  std::ifstream in(dir / "m.bin", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  EXPECT_THROW(load_checkpoint(write("trunc.bin", bytes.substr(0, bytes.size() / 2))), CheckpointError);
  EXPECT_THROW(load_checkpoint(write("short.bin", bytes.substr(0, 3))), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(write("magic.bin", magic)), CheckpointError);
  std::string version = bytes;
  version[4] = 99;
  EXPECT_THROW(load_checkpoint(write("version.bin", version)), CheckpointError);
  EXPECT_THROW(load_checkpoint(write("extra.bin", bytes + "x")), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), IoError);
}

TEST(Detached, SameValuesNoGradients) {
  Rng rng(16);
  const auto model = TransformerModel::init(test::tiny_config(), rng);
  const auto copy = model.detached();
  EXPECT_EQ(parameter_checksum(copy), parameter_checksum(model));
  for (const auto& p : copy.parameters()) EXPECT_FALSE(p.tensor.requires_grad());
}

class ModelGradient : public ::testing::TestWithParam<test::LossKind> {};

TEST_P(ModelGradient, DeskModelMatchesFiniteDifferences) {
  const auto checks = test::check_model_gradients(ModelConfig::desk_scale(), GetParam(), 30,
                                                  GradCheckOptions{1e-5, 1e-4, 1e-5});
  ASSERT_EQ(checks.size(), 4u);
  for (const auto& c : checks)
    EXPECT_TRUE(c.report.passed) << c.group << ": " << c.report.max_relative_error << " analytic "
                                 << c.report.worst_analytic << " numeric " << c.report.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(Losses, ModelGradient,
                         ::testing::Values(test::LossKind::classification, test::LossKind::next_char,
                                           test::LossKind::mixed),
                         [](const auto& info) { return std::string(test::to_string(info.param)); });

}  // namespace
}  // namespace urlt
