#include "urlt/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "urlt/error.hpp"

namespace urlt {
namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t n) {
  std::uint64_t h = 1469598103934665603ull ^ n;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double sigmoid_of(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

void NgramOptions::validate() const {
  if (max_n == 0) throw ConfigError("n-gram order must be positive");
  if (buckets == 0 || buckets > (std::size_t{1} << 32)) throw ConfigError("bucket count out of range");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (l2 < 0.0) throw ConfigError("l2 penalty must be non-negative");
}

SparseVector ngram_features(const std::string& url, std::size_t max_n, std::size_t buckets) {
  std::map<std::uint32_t, double> counts;
  for (std::size_t n = 1; n <= max_n; ++n)
    for (std::size_t i = 0; i + n <= url.size(); ++i)
      counts[static_cast<std::uint32_t>(fnv1a(std::string_view(url).substr(i, n), n) % buckets)] += 1.0;
  double norm = 0.0;
  for (const auto& [_, v] : counts) norm += v * v;
  norm = std::sqrt(norm);
  SparseVector out(counts.begin(), counts.end());
  if (norm > 0.0)
    for (auto& [_, v] : out) v /= norm;
  return out;
}

NgramLogistic NgramLogistic::train(const UrlDataset& data, const NgramOptions& options) {
  options.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  if (!data.labeled()) throw ConfigError("training set must be labeled");
  if (data.count_label(0) == 0 || data.count_label(1) == 0)
    throw ConfigError("training set needs both benign and malicious URLs");

  NgramLogistic model;
  model.options_ = options;
  model.weights_.assign(options.buckets, 0.0);
  std::vector<SparseVector> features;
  features.reserve(data.size());
  for (const auto& r : data.records) features.push_back(ngram_features(r.url, options.max_n, options.buckets));
  const auto labels = data.labels();

  Rng rng(options.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
      std::swap(order[i - 1], order[j]);
    }
    const double lr = options.learning_rate / std::sqrt(static_cast<double>(epoch));
    for (auto i : order) {
      double z = model.bias_;
      for (const auto& [k, v] : features[i]) z += model.weights_[k] * v;
      const double err = sigmoid_of(z) - labels[i];
      for (const auto& [k, v] : features[i])
        model.weights_[k] -= lr * (err * v + options.l2 * model.weights_[k]);
      model.bias_ -= lr * err;
    }
  }
  return model;
}

double NgramLogistic::logit(const std::string& url) const {
  double z = bias_;
  for (const auto& [k, v] : ngram_features(url, options_.max_n, options_.buckets)) z += weights_[k] * v;
  return z;
}

double NgramLogistic::score(const std::string& url) const { return sigmoid_of(logit(url)); }

std::vector<double> NgramLogistic::predict(const UrlDataset& data) const {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& r : data.records) out.push_back(score(r.url));
  return out;
}

}  // namespace urlt
