#include <gtest/gtest.h>

#include <cmath>

#include "op_cases.hpp"
#include "support.hpp"
#include "urlt/error.hpp"
#include "urlt/tensor.hpp"

namespace urlt {
namespace {

using test::random_tensor;

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

TEST(Tensor, ShapeMatchesValueCount) {
  EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
  const Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(shape_size(t.shape()), t.size());
}

TEST(Matmul, IdentityAndHandArithmetic) {
  EXPECT_EQ(vals(matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2, 1}, {3, 4}))),
            (std::vector<double>{3, 4}));
  EXPECT_EQ(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2,3]"), std::string::npos) << what;
    EXPECT_NE(what.find("[4,2]"), std::string::npos) << what;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(3);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  const auto report = check_gradients([&](const Tensor& x) { return sum(matmul(x, b)); }, a);
  EXPECT_LT(report.max_relative_error, 1e-6);
  EXPECT_EQ(report.checked, 12u);
}

TEST(Activations, SpecExamples) {
  const auto s = softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_NEAR(elu(Tensor::scalar(-1.0)).item(), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(elu(Tensor::scalar(-1.0)).item(), -0.632, 1e-3);
  EXPECT_EQ(elu(Tensor::scalar(2.5)).item(), 2.5);
  EXPECT_EQ(relu(Tensor::scalar(-2.0)).item(), 0.0);
  EXPECT_EQ(relu(Tensor::scalar(1.5)).item(), 1.5);
}

TEST(Activations, SoftmaxRowsSumToOneAndSigmoidStaysInside) {
  Rng rng(5);
  const Tensor x = random_tensor({50, 17}, rng, -40, 40);
  const Tensor s = softmax(x);
  for (std::size_t r = 0; r < 50; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 17; ++j) total += s.at(r * 17 + j);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  const Tensor big = Tensor::from({4}, {-30, -5, 5, 30});
  const Tensor sb = sigmoid(big);
  for (double v : sb.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Activations, SoftmaxIsStableForLargeInputs) {
  const Tensor s = softmax(Tensor::from({3}, {1000, 1000, 1000}));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Tensor ls = log_softmax(Tensor::from({2}, {-1e4, 0}));
  EXPECT_TRUE(std::isfinite(ls.at(0)));
  EXPECT_NEAR(ls.at(1), 0.0, 1e-15);
}

TEST(LayerNorm, SpecExamples) {
  const Tensor one = Tensor::full({3}, 1.0), zero = Tensor::zeros({3});
  const Tensor flat = layer_norm(Tensor::from({3}, {1, 1, 1}), one, zero);
  for (double v : flat.values()) EXPECT_EQ(v, 0.0);
  const Tensor y = layer_norm(Tensor::from({2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
  EXPECT_NEAR(y.at(0), -1.0, 1e-9);
  EXPECT_NEAR(y.at(1), 1.0, 1e-9);
}

TEST(LayerNorm, ZeroVarianceRowMapsToBias) {
  const Tensor y = layer_norm(Tensor::from({3}, {4, 4, 4}), Tensor::full({3}, 2.0), Tensor::from({3}, {1, 2, 3}));
  EXPECT_EQ(vals(y), (std::vector<double>{1, 2, 3}));
}

TEST(Embedding, GatherAndRepeatedIdsAccumulate) {
  Tensor table = Tensor::zeros({kVocabSize, 2});
  table.mutable_values()[0] = 0.5;
  table.mutable_values()[1] = 0.5;
  EXPECT_EQ(vals(embedding_lookup(table, std::vector<std::size_t>{0})), (std::vector<double>{0.5, 0.5}));

  table.set_requires_grad(true);
  backward(sum(embedding_lookup(table, std::vector<std::size_t>{7, 7, 3})));
  EXPECT_EQ(table.grad()[7 * 2], 2.0);
  EXPECT_EQ(table.grad()[7 * 2 + 1], 2.0);
  EXPECT_EQ(table.grad()[3 * 2], 1.0);
  EXPECT_EQ(table.grad()[0], 0.0);
}

TEST(Embedding, OutOfVocabularyIdRejected) {
  const Tensor table = Tensor::zeros({kVocabSize, 2});
  EXPECT_THROW(embedding_lookup(table, std::vector<std::size_t>{257}), VocabularyError);
  EXPECT_NO_THROW(embedding_lookup(table, std::vector<std::size_t>{256}));
}

TEST(Dropout, IdentityCases) {
  Rng rng(1);
  const Tensor x = random_tensor({5, 5}, rng);
  EXPECT_EQ(vals(dropout(x, 0.0, true, rng)), vals(x));
  EXPECT_EQ(vals(dropout(x, 0.5, false, rng)), vals(x));
}

TEST(Dropout, RejectsInvalidProbability) {
  Rng rng(1);
  const Tensor x = Tensor::zeros({3});
  EXPECT_THROW(dropout(x, 1.0, true, rng), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, true, rng), ConfigError);
}

TEST(Dropout, ZeroFractionAndInvertedScaling) {
  Rng rng(2024);
  const Tensor x = Tensor::full({1000000}, 1.0);
  const Tensor y = dropout(x, 0.1, true, rng);
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0.0)
      ++zeros;
    else
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.9);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.1, 0.002);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::zeros({2, 3, 2});
  x.set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::zeros({2});
  x.set_requires_grad(true);
  EXPECT_THROW(backward(x), ContractError);
}

TEST(Backward, SigmoidOfDotMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor x = random_tensor({4, 1}, rng);
  const Tensor w = random_tensor({1, 4}, rng);
  const auto report = check_gradients([&](const Tensor& v) { return sum(sigmoid(matmul(v, x))); }, w);
  EXPECT_LT(report.max_relative_error, 1e-6);
}

TEST(Backward, StopGradientFreezesOneBranch) {
  Tensor x = Tensor::from({3}, {1.5, -2.0, 0.25});
  x.set_requires_grad(true);
  const Tensor y = sum(mul(stop_gradient(x), x));
  EXPECT_DOUBLE_EQ(y.item(), 1.5 * 1.5 + 4.0 + 0.0625);
  backward(y);
  EXPECT_EQ(grads(x), vals(x));
}

TEST(Backward, StopGradientKeepsForwardValues) {
  Rng rng(4);
  const Tensor x = random_tensor({3, 3}, rng);
  EXPECT_EQ(vals(stop_gradient(softmax(x))), vals(softmax(x)));
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  backward(sum(stop_gradient(mul(leaf, leaf))));
  EXPECT_FALSE(leaf.has_grad() && std::any_of(leaf.grad().begin(), leaf.grad().end(), [](double g) { return g != 0; }));
}

TEST(Backward, ReusedTensorAccumulates) {
  Tensor x = Tensor::from({2}, {3, -1});
  x.set_requires_grad(true);
  backward(sum(add(x, x)));
  EXPECT_EQ(grads(x), (std::vector<double>{2, 2}));
}

TEST(Backward, DiamondGraphVisitsEachNodeOnce) {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  const Tensor a = mul(x, x);       // x^2
  const Tensor b = add(a, a);       // 2x^2
  const Tensor c = mul(b, a);       // 2x^4
  backward(sum(c));
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0 * 8.0);  // d/dx 2x^4 = 8x^3
}

TEST(Backward, TopologicalOrderListsInputsFirst) {
  Tensor x = Tensor::scalar(1.0);
  x.set_requires_grad(true);
  const Tensor y = sigmoid(mul(x, x));
  const auto order = topological_order(y);
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ(order.front(), x.node());
  EXPECT_EQ(order.back(), y.node());
}

TEST(GradCheck, QuadraticFormPasses) {
  Rng rng(6);
  const Tensor a = random_tensor({4, 4}, rng);
  const Tensor v = random_tensor({4, 1}, rng);
  const auto report = check_gradients(
      [&](const Tensor& x) { return sum(mul(x, matmul(a, x))); }, v, GradCheckOptions{1e-5, 1e-6, 1e-8});
  EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(GradCheck, CorruptedRuleFails) {
  // x^2 whose backward claims 3x instead of 2x.
  auto bad_square = [](const Tensor& x) {
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) * x.at(i);
    return Tensor::make_op("bad_square", x.shape(), std::move(v), {x}, [](detail::Node& n) {
      auto& g = n.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * n.inputs[0]->value[i] * n.grad[i];
    });
  };
  Rng rng(8);
  const auto report = check_gradients([&](const Tensor& x) { return sum(bad_square(x)); }, random_tensor({5}, rng));
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_relative_error, 0.1);
}

TEST(GradCheck, TargetMustRequireGradients) {
  const Tensor x = Tensor::zeros({2});
  EXPECT_THROW(check_parameter_gradients([&] { return sum(x); }, x), ContractError);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto cases = test::op_cases();
  const auto& c = cases.at(GetParam());
  const GradCheckOptions options{1e-5, 1e-5, 1e-8};
  for (const auto& r : c.run(options)) {
    EXPECT_TRUE(r.passed) << c.name << ": relative error " << r.max_relative_error << " at " << r.worst_index
                          << " (analytic " << r.worst_analytic << ", numeric " << r.worst_numeric << ")";
    EXPECT_GT(r.checked, 0u);
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, test::op_cases().size()),
                         [](const auto& info) { return test::op_cases().at(info.param).name; });

TEST(Ops, MaskedSoftmaxMatchesUnfusedComposition) {
  Rng rng(31);
  const Tensor s = random_tensor({3 * 2, 5, 5}, rng, -2, 2);
  const auto mask = build_masks(std::vector<std::size_t>{4, 2, 3}, 5, EncodeMode::classify).additive();
  const Tensor fused = masked_softmax(s, mask, 2, 0.35);
  const Tensor plain = softmax(scaled_masked_scores(s, mask, 2, 0.35));
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused.at(i), plain.at(i), 1e-15);
}

TEST(Ops, SplitMergeHeadsRoundTrip) {
  Rng rng(2);
  const Tensor x = random_tensor({3 * 4, 6}, rng);
  const Tensor split = split_heads(x, 3, 4, 2);
  EXPECT_EQ(split.shape(), (Shape{6, 4, 3}));
  // Head h of batch b, position t holds columns [h*3, h*3+3) of row b*4+t.
  EXPECT_EQ(split.at(((1 * 2 + 1) * 4 + 2) * 3 + 1), x.at((1 * 4 + 2) * 6 + 1 * 3 + 1));
  EXPECT_EQ(vals(merge_heads(split, 3, 2)), vals(x));
}

TEST(Ops, BceWithLogitsMatchesDefinition) {
  const Tensor logits = Tensor::from({3}, {-1.0, 0.0, 2.0});
  const double got = binary_cross_entropy_with_logits(logits, std::vector<int>{0, 1, 1}).item();
  auto s = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double want = -(std::log(1 - s(-1.0)) + std::log(s(0.0)) + std::log(s(2.0))) / 3.0;
  EXPECT_NEAR(got, want, 1e-15);
}

}  // namespace
}  // namespace urlt
