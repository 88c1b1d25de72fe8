#pragma once

// Reference classifier: logistic regression on hashed character n-grams.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "urlt/data.hpp"

namespace urlt {

struct NgramOptions {
  std::size_t max_n = 3;
  std::size_t buckets = std::size_t{1} << 18;
  std::size_t epochs = 10;
  double learning_rate = 0.5;
  double l2 = 1e-6;
  std::uint64_t seed = 1;

  void validate() const;
};

// Sorted (bucket, value) pairs of the L2-normalized n-gram count vector.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;
SparseVector ngram_features(const std::string& url, std::size_t max_n, std::size_t buckets);

class NgramLogistic {
 public:
  // Plain SGD over a seeded shuffle each epoch with a 1/sqrt(epoch) step decay.
  static NgramLogistic train(const UrlDataset& data, const NgramOptions& options = {});

  double logit(const std::string& url) const;
  double score(const std::string& url) const;
  std::vector<double> predict(const UrlDataset& data) const;

  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }

 private:
  NgramOptions options_;
  std::vector<double> weights_;
  double bias_ = 0.0;
};

}  // namespace urlt
