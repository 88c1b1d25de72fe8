#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "urlt/error.hpp"
#include "urlt/evaluation.hpp"

namespace urlt {
namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw EvaluationError(std::to_string(scores.size()) + " scores but " +
                          std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y != 0 && y != 1) throw EvaluationError("labels must be 0 or 1");
  for (double s : scores)
    if (std::isnan(s)) throw EvaluationError("scores contain NaN");
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0 || pos == labels.size())
    throw EvaluationError("ROC needs at least one positive and one negative label");
}

}  // namespace

RocResult roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

  RocResult r;
  r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.negatives = labels.size() - r.positives;
  const double p = static_cast<double>(r.positives), n = static_cast<double>(r.negatives);
  r.thresholds.push_back(std::numeric_limits<double>::infinity());
  r.fpr.push_back(0.0);
  r.tpr.push_back(0.0);
  std::size_t tp = 0, fp = 0;
  // Twice the area in count units: sum dFP * (TP_prev + TP), exact in integers.
  unsigned long long doubled = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    const std::size_t tp_before = tp, fp_before = fp;
    for (; i < order.size() && scores[order[i]] == threshold; ++i) (labels[order[i]] ? tp : fp)++;
    doubled += static_cast<unsigned long long>(fp - fp_before) * (tp_before + tp);
    r.thresholds.push_back(threshold);
    r.fpr.push_back(static_cast<double>(fp) / n);
    r.tpr.push_back(static_cast<double>(tp) / p);
  }
  r.auc = static_cast<double>(doubled) / (2.0 * p * n);
  return r;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  // Mann-Whitney U with mid-ranks, kept in doubled integer ranks.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  unsigned long long doubled_rank_sum = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1..j share the mid-rank (i+1+j)/2
    const unsigned long long doubled_mid = i + 1 + j;
    for (std::size_t q = i; q < j; ++q) {
      if (labels[order[q]] == 1) {
        doubled_rank_sum += doubled_mid;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  const unsigned long long doubled_u =
      doubled_rank_sum - static_cast<unsigned long long>(positives) * (positives + 1);
  return static_cast<double>(doubled_u) /
         (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double trapezoid_area(std::span<const double> fpr, std::span<const double> tpr) {
  if (fpr.size() != tpr.size()) throw EvaluationError("curve coordinate counts differ");
  double area = 0.0;
  for (std::size_t i = 1; i < fpr.size(); ++i) area += (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) / 2.0;
  return area;
}

std::string format_curves(std::span<const NamedRoc> results) {
  std::ostringstream out;
  out.precision(17);
  out << "model\tfpr\ttpr\n";
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.roc.fpr.size(); ++i)
      out << r.name << '\t' << r.roc.fpr[i] << '\t' << r.roc.tpr[i] << '\n';
  out << "\nmodel\tauc\tn_pos\tn_neg\n";
  for (const auto& r : results)
    out << r.name << '\t' << r.roc.auc << '\t' << r.roc.positives << '\t' << r.roc.negatives << '\n';
  return out.str();
}

void export_curves(std::span<const NamedRoc> results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write curves to " + path.string());
  out << format_curves(results);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<NamedRoc> read_curves(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<NamedRoc> out;
  auto find = [&](const std::string& name) -> NamedRoc& {
    for (auto& r : out)
      if (r.name == name) return r;
    out.push_back({name, {}});
    return out.back();
  };
  std::string line;
  bool summary = false;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) {
      summary = true;
      std::getline(in, line);  // summary header
      continue;
    }
    std::istringstream fields(line);
    std::string name, a, b, c;
    std::getline(fields, name, '\t');
    std::getline(fields, a, '\t');
    std::getline(fields, b, '\t');
    if (summary) {
      std::getline(fields, c, '\t');
      NamedRoc& r = find(name);
      r.roc.auc = std::stod(a);
      r.roc.positives = std::stoul(b);
      r.roc.negatives = std::stoul(c);
    } else {
      NamedRoc& r = find(name);
      r.roc.fpr.push_back(std::stod(a));
      r.roc.tpr.push_back(std::stod(b));
    }
  }
  return out;
}

}  // namespace urlt
