#include <gtest/gtest.h>

#include <cmath>

#include "urlt/baseline.hpp"
#include "urlt/error.hpp"
#include "urlt/evaluation.hpp"

namespace urlt {
namespace {

TEST(NgramFeatures, NormalizedAndSorted) {
  const SparseVector f = ngram_features("http://abc.com/abc", 3, 1 << 16);
  double norm = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    norm += f[i].second * f[i].second;
    if (i > 0) {
      EXPECT_LT(f[i - 1].first, f[i].first);
    }
    EXPECT_LT(f[i].first, 1u << 16);
  }
  EXPECT_NEAR(norm, 1.0, 1e-12);
  EXPECT_TRUE(ngram_features("", 3, 16).empty());
}

TEST(NgramFeatures, UnigramCounts) {
  // One bucket collects everything: the single value is 1 after normalization.
  const SparseVector one = ngram_features("aab", 1, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one[0].second, 1.0);
}

TEST(NgramLogistic, RejectsBadData) {
  EXPECT_THROW(NgramLogistic::train(UrlDataset{}), ConfigError);
  EXPECT_THROW(NgramLogistic::train(parse_tsv("a\t1\nb\t1\n", true)), ConfigError);
  EXPECT_THROW(NgramLogistic::train(parse_tsv("a\nb\n", false)), ConfigError);
  NgramOptions bad;
  bad.max_n = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(NgramLogistic, LearnsSyntheticData) {
  const UrlDataset all = generate_synthetic({.n_benign = 2000, .n_malicious = 2000, .seed = 7});
  const DatasetSplits s = split(all, {}, 1);
  const NgramLogistic model = NgramLogistic::train(s.train);
  const auto scores = model.predict(s.test);
  EXPECT_GE(auc(scores, s.test.labels()), 0.9);
  for (double p : scores) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  EXPECT_NEAR(model.score(s.test.records[0].url), 1.0 / (1.0 + std::exp(-model.logit(s.test.records[0].url))),
              1e-15);
}

TEST(NgramLogistic, DeterministicUnderSeed) {
  const UrlDataset d = generate_synthetic({.n_benign = 300, .n_malicious = 300, .seed = 2});
  NgramOptions o;
  o.epochs = 3;
  const NgramLogistic a = NgramLogistic::train(d, o);
  const NgramLogistic b = NgramLogistic::train(d, o);
  EXPECT_EQ(a.weights(), b.weights());
  EXPECT_EQ(a.bias(), b.bias());
  o.seed = 2;
  EXPECT_NE(NgramLogistic::train(d, o).weights(), a.weights());
}

}  // namespace
}  // namespace urlt
