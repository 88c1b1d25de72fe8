#include <cmath>

#include "urlt/error.hpp"
#include "urlt/training.hpp"

namespace urlt {

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 const AdamOptions& options, std::uint64_t step) {
  if (grad.size() != param.size())
    throw ContractError("adam: gradient size " + std::to_string(grad.size()) + " vs parameter size " +
                        std::to_string(param.size()));
  if (step == 0) throw ContractError("adam: step counts from 1");
  if (moments.first.empty()) {
    moments.first.assign(param.size(), 0.0);
    moments.second.assign(param.size(), 0.0);
  }
  if (moments.first.size() != param.size()) throw ContractError("adam: moment shape mismatch");
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    moments.first[i] = options.beta1 * moments.first[i] + (1.0 - options.beta1) * g;
    moments.second[i] = options.beta2 * moments.second[i] + (1.0 - options.beta2) * g * g;
    const double m_hat = moments.first[i] / correction1;
    const double v_hat = moments.second[i] / correction2;
    param[i] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
  }
}

void sgd_update(std::span<double> param, std::span<const double> grad, double learning_rate) {
  if (grad.size() != param.size()) throw ContractError("sgd: gradient/parameter size mismatch");
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= learning_rate * grad[i];
}

void Adam::step(const TransformerModel& model) {
  for (auto& p : model.parameters()) {
    if (model.is_frozen(p) || !p.tensor.has_grad()) continue;
    AdamMoments& m = state_[p.name];
    ++m.step;
    adam_update(p.tensor.mutable_values(), p.tensor.grad(), m, options_, m.step);
  }
}

const AdamMoments* Adam::moments(const std::string& parameter) const {
  auto it = state_.find(parameter);
  return it == state_.end() ? nullptr : &it->second;
}

void Sgd::step(const TransformerModel& model) {
  for (auto& p : model.parameters()) {
    if (model.is_frozen(p) || !p.tensor.has_grad()) continue;
    sgd_update(p.tensor.mutable_values(), p.tensor.grad(), learning_rate_);
  }
}

void zero_grad(const TransformerModel& model) {
  for (auto& p : model.parameters()) p.tensor.zero_grad();
}

double clip_grad_norm(const TransformerModel& model, double max_norm) {
  double total = 0.0;
  auto params = model.parameters();
  for (const auto& p : params)
    for (double g : p.tensor.grad()) total += g * g;
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      // grad() is read-only; rebuild through the node.
      for (double& g : p.tensor.node()->grad) g *= factor;
    }
  }
  return norm;
}

}  // namespace urlt
