#pragma once

// URL datasets: TSV ingestion, stratified splitting and a synthetic generator
// whose malicious class is marked by high-entropy segments.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "urlt/url_codec.hpp"

namespace urlt {

struct UrlRecord {
  std::string url;
  std::optional<int> label;
  bool operator==(const UrlRecord&) const = default;
};

struct UrlDataset {
  std::vector<UrlRecord> records;
  std::string provenance;
  std::string split;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  bool labeled() const;
  std::size_t count_label(int label) const;
  std::vector<int> labels() const;

  // Encodes every record; labels are attached when present.
  std::vector<EncodedUrl> encode(EncodeMode mode, std::size_t context_window) const;
};

// `url<TAB>label` per line when labeled, `url` otherwise; '#' lines and empty
// lines are skipped. Unlabeled loading also accepts labeled lines and drops
// the label, so a training file can double as a pretraining corpus.
UrlDataset load_tsv(const std::filesystem::path& path, bool labeled);
UrlDataset parse_tsv(std::string_view text, bool labeled, const std::string& source = "<memory>");
void save_tsv(const UrlDataset& data, const std::filesystem::path& path);
std::string format_tsv(const UrlDataset& data);

struct SplitFractions {
  double train = 0.72;
  double validation = 0.08;
  double test = 0.20;
};

struct DatasetSplits {
  UrlDataset train, validation, test;
};

// Deterministic stratified split: each class is shuffled and spread evenly
// over a single ordering, which is then cut at the rounded split sizes.
DatasetSplits split(const UrlDataset& data, const SplitFractions& fractions, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t n_benign = 100;
  std::size_t n_malicious = 100;
  std::uint64_t seed = 7;
  std::size_t word_list_size = 2000;
  std::size_t entropy_min = 8;
  std::size_t entropy_max = 16;
  std::size_t max_length = 255;
};

// Both classes draw schemes and TLDs from the same pools. Benign URLs are
// dictionary-word hosts and paths; malicious URLs carry at least one random
// alphanumeric segment in the host or first path segment.
UrlDataset generate_synthetic(const SyntheticSpec& spec);

std::span<const std::string_view> common_words();
std::span<const std::string_view> synthetic_schemes();
std::span<const std::string_view> synthetic_tlds();

// Mean Shannon entropy (bits per character) of the given strings.
double mean_shannon_entropy(std::span<const std::string> segments);

}  // namespace urlt
