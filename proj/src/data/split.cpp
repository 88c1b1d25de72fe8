#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "urlt/data.hpp"
#include "urlt/error.hpp"

namespace urlt {

DatasetSplits split(const UrlDataset& data, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.validation > 0.0 && f.test > 0.0))
    throw ConfigError("split fractions must be positive");
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");

  // Group record indices by label (-1 for unlabeled) and shuffle each group.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) groups[data.records[i].label.value_or(-1)].push_back(i);
  Rng rng(seed);
  struct Keyed {
    double key;
    int group;
    std::size_t index;
  };
  std::vector<Keyed> order;
  order.reserve(data.size());
  for (auto& [label, members] : groups) {
    for (std::size_t i = members.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(members[i - 1], members[std::min(j, i - 1)]);
    }
    // Evenly spaced keys interleave the classes in proportion.
    for (std::size_t r = 0; r < members.size(); ++r)
      order.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(members.size()), label, members[r]});
  }
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    if (a.key != b.key) return a.key < b.key;
    return a.group < b.group;
  });

  const auto n = static_cast<double>(data.size());
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
  const auto n_val = std::min(data.size() - n_train, static_cast<std::size_t>(std::llround(f.validation * n)));

  DatasetSplits out;
  out.train.split = "train";
  out.validation.split = "validation";
  out.test.split = "test";
  for (auto* part : {&out.train, &out.validation, &out.test}) part->provenance = data.provenance;
  for (std::size_t i = 0; i < order.size(); ++i) {
    UrlDataset& target = i < n_train ? out.train : i < n_train + n_val ? out.validation : out.test;
    target.records.push_back(data.records[order[i].index]);
  }
  return out;
}

}  // namespace urlt
