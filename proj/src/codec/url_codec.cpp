#include "urlt/url_codec.hpp"

#include <algorithm>
#include <numeric>

#include "urlt/error.hpp"

namespace urlt {

std::string EncodedUrl::decode() const {
  std::string out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) out.push_back(static_cast<char>(tokens[i]));
  return out;
}

EncodedUrl encode(std::string_view url, EncodeMode mode, std::size_t context_window,
                  std::optional<int> label, Truncation truncation) {
  if (context_window < 2) throw ConfigError("context window must be at least 2");
  if (url.empty()) throw InputError("cannot encode an empty URL");
  const std::size_t max_len = context_window - 1;
  if (url.size() > max_len)
    url = truncation == Truncation::head ? url.substr(0, max_len) : url.substr(url.size() - max_len);

  EncodedUrl out;
  out.mode = mode;
  out.label = label;
  out.length = url.size();
  out.tokens.assign(context_window, kPadToken);
  for (std::size_t i = 0; i < url.size(); ++i) out.tokens[i] = static_cast<unsigned char>(url[i]);
  if (mode != EncodeMode::pretrain) {
    out.cls_position = out.length;
    out.tokens[out.length] = kClsToken;
  }
  if (mode != EncodeMode::classify) {
    std::vector<std::size_t> labels(out.length);
    for (std::size_t i = 0; i + 1 < out.length; ++i) labels[i] = out.tokens[i + 1];
    labels[out.length - 1] = kClsToken;
    out.next_char_labels = std::move(labels);
  }
  return out;
}

std::vector<double> Masks::additive() const {
  std::vector<double> out(batch * width * width);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < width; ++i)
      for (std::size_t j = 0; j < width; ++j)
        out[(b * width + i) * width + j] = can_attend(b, i, j) ? 0.0 : kMaskedScore;
  return out;
}

Masks build_masks(std::span<const std::size_t> lengths, std::size_t width, EncodeMode mode) {
  Masks m;
  m.width = width;
  m.batch = lengths.size();
  m.causal.assign(width * width, 0);
  for (std::size_t i = 0; i < width; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.causal[i * width + j] = 1;
  m.valid.assign(m.batch * width, 0);
  m.next_char.assign(m.batch * width, 0);
  m.cls.assign(m.batch * width, 0);
  for (std::size_t b = 0; b < m.batch; ++b) {
    const std::size_t len = lengths[b];
    if (len == 0 || len >= width)
      throw ContractError("sequence length " + std::to_string(len) + " needs 1 <= M <= " +
                          std::to_string(width - 1));
    const std::size_t extent = mode == EncodeMode::pretrain ? len : len + 1;
    for (std::size_t i = 0; i < extent; ++i) m.valid[b * width + i] = 1;
    if (mode != EncodeMode::classify)
      for (std::size_t i = 0; i < len; ++i) m.next_char[b * width + i] = 1;
    if (mode != EncodeMode::pretrain) m.cls[b * width + len] = 1;
  }
  return m;
}

Batch make_batch(std::span<const EncodedUrl> items, std::size_t context_window, bool trim) {
  if (items.empty()) throw ContractError("cannot build an empty batch");
  Batch batch;
  batch.mode = items.front().mode;
  batch.context_window = context_window;
  std::size_t width = 0;
  for (const auto& item : items) {
    if (item.mode != batch.mode) throw ContractError("batch mixes encode modes");
    if (item.tokens.size() != context_window)
      throw ContractError("encoded URL window " + std::to_string(item.tokens.size()) +
                          " does not match context window " + std::to_string(context_window));
    width = std::max(width, item.length + 1);
  }
  batch.width = trim ? width : context_window;
  batch.tokens.reserve(items.size() * batch.width);
  bool all_labeled = true;
  for (const auto& item : items) {
    batch.tokens.insert(batch.tokens.end(), item.tokens.begin(),
                        item.tokens.begin() + static_cast<std::ptrdiff_t>(batch.width));
    batch.lengths.push_back(item.length);
    if (item.cls_position) batch.cls_positions.push_back(*item.cls_position);
    if (item.next_char_labels) batch.next_char_labels.push_back(*item.next_char_labels);
    all_labeled = all_labeled && item.label.has_value();
  }
  if (all_labeled)
    for (const auto& item : items) batch.labels.push_back(*item.label);
  batch.masks = build_masks(batch.lengths, batch.width, batch.mode);
  return batch;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    bool shuffle, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    // Fisher-Yates with our own uniform draw so the order is portable.
    for (std::size_t i = count; i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, start + batch_size)));
  return out;
}

std::vector<Batch> make_batches(std::span<const EncodedUrl> dataset, std::size_t batch_size,
                                bool shuffle, Rng& rng, std::size_t context_window) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(dataset.size(), batch_size, shuffle, rng)) {
    std::vector<EncodedUrl> items;
    items.reserve(idx.size());
    for (auto i : idx) items.push_back(dataset[i]);
    out.push_back(make_batch(items, context_window));
  }
  return out;
}

}  // namespace urlt
