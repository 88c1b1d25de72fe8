#include <cmath>

#include "urlt/attribution.hpp"
#include "urlt/error.hpp"

namespace urlt {

double Attribution::contribution_sum() const {
  double s = 0.0;
  for (double c : contributions) s += c;
  return s;
}

double Attribution::relative_residual() const {
  const double gap = std::abs(sample_score - baseline_score);
  if (gap == 0.0) return residual == 0.0 ? 0.0 : INFINITY;
  return residual / gap;
}

Attribution integrated_gradients(const PathScore& score, const Tensor& sample, std::size_t steps) {
  if (steps == 0) throw ContractError("integrated gradients needs at least one step");
  if (sample.rank() != 2) throw DimensionError("sample embeddings must be [M, d], got " + to_string(sample.shape()));
  const std::size_t m = sample.dim(0), d = sample.dim(1), md = m * d;
  const auto e = sample.values();

  std::vector<double> path(steps * md);
  for (std::size_t k = 0; k < steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < md; ++i) path[k * md + i] = alpha * e[i];
  }
  Tensor points = Tensor::from({steps, m, d}, std::move(path));
  points.set_requires_grad(true);
  const Tensor scores = score(points);
  if (scores.size() != steps) throw ContractError("path score must return one value per path point");
  backward(sum(scores));
  const auto g = points.grad();

  Attribution out;
  out.steps = steps;
  out.contributions.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double c = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double avg = 0.0;
      for (std::size_t k = 0; k < steps; ++k) avg += g[k * md + i * d + j];
      c += e[i * d + j] * avg / static_cast<double>(steps);
    }
    out.contributions[i] = c;
  }

  std::vector<double> ends(2 * md, 0.0);
  std::copy(e.begin(), e.end(), ends.begin() + static_cast<std::ptrdiff_t>(md));
  const Tensor end_scores = score(Tensor::from({2, m, d}, std::move(ends)));
  out.baseline_score = end_scores.at(0);
  out.sample_score = end_scores.at(1);
  out.residual = std::abs(out.contribution_sum() - (out.sample_score - out.baseline_score));
  if (!std::isfinite(out.residual)) throw ContractError("integrated gradients produced non-finite values");
  return out;
}

Attribution integrated_gradients(const TransformerModel& model, const std::string& url, std::size_t steps) {
  for (const auto& p : model.parameters())
    for (double v : p.tensor.values())
      if (!std::isfinite(v)) throw ContractError("model parameter " + p.name + " is not finite");

  const std::size_t window = model.config().context_window;
  const EncodedUrl encoded = encode(url, EncodeMode::classify, window);
  const std::size_t m = encoded.length, d = model.config().model_dim;
  const TransformerModel frozen = model.detached();

  const std::vector<std::size_t> bytes(encoded.tokens.begin(), encoded.tokens.begin() + static_cast<std::ptrdiff_t>(m));
  const Tensor sample = reshape(embedding_lookup(frozen.embedding(), bytes), {m, d});

  Rng unused(0);
  const PathScore score = [&](const Tensor& points) {
    const std::size_t s = points.dim(0);
    const std::vector<EncodedUrl> copies(s, encoded);
    const Batch batch = make_batch(copies, window);
    const Tensor cls = reshape(embedding_lookup(frozen.embedding(), std::vector<std::size_t>(s, kClsToken)), {s, 1, d});
    const Tensor hidden = frozen.forward_embedded(concat_seq(points, cls), batch, false, unused);
    return frozen.classify_logits(hidden, batch.cls_positions);
  };
  Attribution out = integrated_gradients(score, sample, steps);
  out.url = url.substr(0, m);
  return out;
}

}  // namespace urlt
