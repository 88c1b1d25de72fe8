#include <algorithm>
#include <array>
#include <cmath>

#include "urlt/data.hpp"
#include "urlt/error.hpp"

namespace urlt {
namespace {

constexpr std::array<std::string_view, 2> kSchemes = {"http://", "https://"};
constexpr std::array<std::string_view, 10> kTlds = {".com", ".net", ".org", ".io",   ".info",
                                                     ".co",  ".biz", ".us",  ".xyz", ".online"};
constexpr std::string_view kAlphanumeric =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
constexpr std::array<std::string_view, 5> kExtensions = {".html", ".php", ".htm", ".aspx", ".jsp"};

class Generator {
 public:
  explicit Generator(const SyntheticSpec& spec) : spec_(spec), rng_(spec.seed) {
    const auto all = common_words();
    words_ = all.subspan(0, std::min(all.size(), spec.word_list_size));
  }

  std::string benign() {
    std::string url(pick(kSchemes));
    if (chance(0.5)) url += "www.";
    url += word();
    if (chance(0.3)) url += (chance(0.5) ? "-" : "") + std::string(word());
    url += pick(kTlds);
    const std::size_t segments = below(4);
    for (std::size_t i = 0; i < segments; ++i) {
      url += '/';
      url += word();
      if (chance(0.25)) url += "-" + std::string(word());
    }
    if (segments > 0 && chance(0.2)) url += pick(kExtensions);
    if (chance(0.15)) url += "?" + std::string(word()) + "=" + std::string(word());
    return url;
  }

  std::string malicious() {
    std::string url(pick(kSchemes));
    const bool entropy_host = chance(0.4);
    if (entropy_host) {
      url += entropy() + ".";
    } else if (chance(0.3)) {
      url += "www.";
    }
    url += word();
    if (chance(0.3)) url += std::to_string(below(1000));
    url += pick(kTlds);
    // At least one high-entropy segment; it leads the path when the host has none.
    const std::size_t segments = (entropy_host ? 0 : 1) + below(3);
    for (std::size_t i = 0; i < segments; ++i) {
      url += '/';
      url += (i == 0 && !entropy_host) || chance(0.5) ? entropy() : std::string(word());
    }
    if (segments > 0 && chance(0.3)) url += pick(kExtensions);
    if (chance(0.15)) url += "?" + std::string(word()) + "=" + entropy();
    return url;
  }

  void shuffle(std::vector<UrlRecord>& records) {
    for (std::size_t i = records.size(); i > 1; --i) std::swap(records[i - 1], records[below(i)]);
  }

 private:
  std::size_t below(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(n)));
  }
  bool chance(double p) { return uniform01(rng_) < p; }
  template <std::size_t N>
  std::string_view pick(const std::array<std::string_view, N>& pool) {
    return pool[below(N)];
  }
  std::string_view word() { return words_[below(words_.size())]; }
  std::string entropy() {
    const std::size_t len = spec_.entropy_min + below(spec_.entropy_max - spec_.entropy_min + 1);
    std::string s(len, ' ');
    for (auto& c : s) c = kAlphanumeric[below(kAlphanumeric.size())];
    return s;
  }

  const SyntheticSpec& spec_;
  Rng rng_;
  std::span<const std::string_view> words_;
};

}  // namespace

std::span<const std::string_view> synthetic_schemes() { return kSchemes; }
std::span<const std::string_view> synthetic_tlds() { return kTlds; }

UrlDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_benign == 0 || spec.n_malicious == 0)
    throw ConfigError("synthetic data needs at least one URL per class");
  if (spec.entropy_min == 0 || spec.entropy_min > spec.entropy_max)
    throw ConfigError("invalid entropy segment length range");
  if (spec.word_list_size == 0) throw ConfigError("word list size must be positive");
  Generator gen(spec);
  UrlDataset data;
  data.provenance = "synthetic(seed=" + std::to_string(spec.seed) + ")";
  data.records.reserve(spec.n_benign + spec.n_malicious);
  auto capped = [&](std::string url) {
    if (url.size() > spec.max_length) url.resize(spec.max_length);
    return url;
  };
  for (std::size_t i = 0; i < spec.n_benign; ++i) data.records.push_back({capped(gen.benign()), 0});
  for (std::size_t i = 0; i < spec.n_malicious; ++i) data.records.push_back({capped(gen.malicious()), 1});
  gen.shuffle(data.records);
  return data;
}

double mean_shannon_entropy(std::span<const std::string> segments) {
  if (segments.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : segments) {
    if (s.empty()) continue;
    std::array<std::size_t, 256> counts{};
    for (unsigned char c : s) ++counts[c];
    double h = 0.0;
    for (auto c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / static_cast<double>(s.size());
      h -= p * std::log2(p);
    }
    total += h;
  }
  return total / static_cast<double>(segments.size());
}

}  // namespace urlt
