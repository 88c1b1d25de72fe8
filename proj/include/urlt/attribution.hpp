#pragma once

// Integrated gradients over token embeddings, from a zero-embedding baseline.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "urlt/model.hpp"
#include "urlt/tensor.hpp"

namespace urlt {

inline constexpr std::size_t kDefaultAttributionSteps = 128;

struct Attribution {
  std::string url;  // the attributed bytes (after truncation to the window)
  std::vector<double> contributions;  // one per byte, summed over embedding dims
  double baseline_score = 0.0;  // F(0), a logit
  double sample_score = 0.0;    // F(x), a logit
  double residual = 0.0;        // |sum(contributions) - (F(x) - F(0))|
  std::size_t steps = 0;

  double contribution_sum() const;
  // residual / |F(x) - F(0)|; 0 when both are zero.
  double relative_residual() const;
};

// Maps embeddings [S, M, d] to one scalar score per row, [S].
using PathScore = std::function<Tensor(const Tensor& embeddings)>;

// Midpoint-rule integrated gradients of `score` from zero to `sample` [M, d].
// The S path points are evaluated as one batch.
Attribution integrated_gradients(const PathScore& score, const Tensor& sample, std::size_t steps);

// Attribution of the classifier logit to each byte of `url`. Positional
// encodings and the CLS embedding stay at their sample values along the path.
Attribution integrated_gradients(const TransformerModel& model, const std::string& url,
                                 std::size_t steps = kDefaultAttributionSteps);

enum class CharCategory { scaffold, dictionary, high_entropy, other };
inline constexpr std::size_t kCharCategories = 4;
std::string to_string(CharCategory category);

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  CharCategory category = CharCategory::other;
};

// Splits a URL into scheme, TLD, and alphanumeric runs. A run is dictionary
// text when it segments into common lowercase words, high-entropy when it
// does not and has at least 6 characters. Everything else is "other".
std::vector<Segment> segment_url(const std::string& url);

struct CategoryStats {
  std::size_t segments = 0;
  std::size_t characters = 0;
  double total = 0.0;
  double mean_per_segment() const;
  double mean_per_character() const;
};

struct AttributionReport {
  std::vector<Attribution> attributions;
  std::array<CategoryStats, kCharCategories> categories{};
  double max_relative_residual = 0.0;
};

AttributionReport summarize(std::vector<Attribution> attributions);
std::string format_report(const AttributionReport& report);

// Attributes every URL and writes the report: one row per byte
// (url_index, position, byte, char, contribution), then after blank lines
// the category aggregates and per-URL completeness figures.
AttributionReport attribute_report(const TransformerModel& model, std::span<const std::string> urls,
                                   std::size_t steps, const std::filesystem::path& path);

}  // namespace urlt
