#include <algorithm>
#include <cmath>
#include <numeric>

#include "urlt/error.hpp"
#include "urlt/tensor.hpp"

namespace urlt {

GradCheckReport check_parameter_gradients(const std::function<Tensor()>& loss_fn, Tensor target,
                                          std::span<const std::size_t> indices,
                                          const GradCheckOptions& options) {
  if (!target.requires_grad()) throw ContractError("gradient check target must require gradients");
  target.zero_grad();
  backward(loss_fn());
  std::vector<double> analytic(target.size(), 0.0);
  if (target.has_grad()) std::ranges::copy(target.grad(), analytic.begin());

  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(target.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    indices = all;
  }

  GradCheckReport report;
  auto values = target.mutable_values();
  for (auto i : indices) {
    const double original = values[i];
    values[i] = original + options.step;
    const double up = loss_fn().item();
    values[i] = original - options.step;
    const double down = loss_fn().item();
    values[i] = original;
    const double numeric = (up - down) / (2.0 * options.step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.scale_floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    ++report.checked;
    if (rel >= report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

GradCheckReport check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                const GradCheckOptions& options) {
  Tensor input = x.clone();
  input.set_requires_grad(true);
  return check_parameter_gradients([&] { return f(input); }, input, {}, options);
}

}  // namespace urlt
