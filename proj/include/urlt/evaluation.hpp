#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace urlt {

// ROC curve over all distinct score thresholds (ties grouped), from (0,0) to
// (1,1). thresholds[0] is +inf for the empty prediction set.
struct RocResult {
  std::vector<double> thresholds;
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// Single-class inputs raise EvaluationError.
RocResult roc_curve(std::span<const double> scores, std::span<const int> labels);
// P(random positive outranks random negative), ties counting one half.
double auc(std::span<const double> scores, std::span<const int> labels);
// Trapezoidal area under a stored curve.
double trapezoid_area(std::span<const double> fpr, std::span<const double> tpr);

struct NamedRoc {
  std::string name;
  RocResult roc;
};

// Tab-separated `model fpr tpr` rows, a blank line, then `model auc n_pos n_neg`.
void export_curves(std::span<const NamedRoc> results, const std::filesystem::path& path);
std::string format_curves(std::span<const NamedRoc> results);
// Reads an exported file back (thresholds are not stored).
std::vector<NamedRoc> read_curves(const std::filesystem::path& path);

}  // namespace urlt
