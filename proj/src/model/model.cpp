#include "urlt/model.hpp"

#include <cmath>

#include "urlt/error.hpp"

namespace urlt {
namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(fan_in * fan_out);
  for (auto& v : values) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return Tensor::from({fan_in, fan_out}, std::move(values));
}

Tensor zeros(std::size_t n) { return Tensor::zeros({n}); }
Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0); }

HeadParameters make_head(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  HeadParameters h;
  h.norm_gain = ones(in);
  h.norm_bias = zeros(in);
  h.hidden_w = xavier(in, hidden, rng);
  h.hidden_b = zeros(hidden);
  h.out_w = xavier(hidden, out, rng);
  h.out_b = zeros(out);
  return h;
}

template <typename Fn>
void for_each_tensor(LayerParameters& l, Fn&& fn) {
  fn("query_w", l.query_w);
  fn("query_b", l.query_b);
  fn("key_w", l.key_w);
  fn("key_b", l.key_b);
  fn("value_w", l.value_w);
  fn("value_b", l.value_b);
  fn("output_w", l.output_w);
  fn("output_b", l.output_b);
  fn("attn_norm_gain", l.attn_norm_gain);
  fn("attn_norm_bias", l.attn_norm_bias);
  fn("ffn_in_w", l.ffn_in_w);
  fn("ffn_in_b", l.ffn_in_b);
  fn("ffn_out_w", l.ffn_out_w);
  fn("ffn_out_b", l.ffn_out_b);
  fn("ffn_norm_gain", l.ffn_norm_gain);
  fn("ffn_norm_bias", l.ffn_norm_bias);
}

template <typename Fn>
void for_each_tensor(HeadParameters& h, Fn&& fn) {
  fn("norm_gain", h.norm_gain);
  fn("norm_bias", h.norm_bias);
  fn("hidden_w", h.hidden_w);
  fn("hidden_b", h.hidden_b);
  fn("out_w", h.out_w);
  fn("out_b", h.out_b);
}

}  // namespace

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.num_layers = 20;
  c.context_window = 256;
  c.model_dim = 64;
  c.ffn_dim = 128;
  c.num_heads = 4;
  c.dropout = 0.1;
  return c;
}

void ModelConfig::validate() const {
  if (num_layers == 0) throw ConfigError("num_layers must be positive");
  if (context_window < 2) throw ConfigError("context window must be at least 2");
  if (model_dim == 0 || ffn_dim == 0 || num_heads == 0 || head_hidden == 0)
    throw ConfigError("model dimensions must be positive");
  if (model_dim % num_heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  if (model_dim % 2 != 0) throw ConfigError("model_dim must be even for sinusoidal positions");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (vocab_size != kVocabSize) throw ConfigError("vocabulary size is fixed at 257");
}

Tensor positional_encoding(std::size_t context_window, std::size_t model_dim) {
  if (model_dim == 0 || model_dim % 2 != 0)
    throw ConfigError("positional encoding needs an even width, got " + std::to_string(model_dim));
  std::vector<double> pe(context_window * model_dim);
  for (std::size_t pos = 0; pos < context_window; ++pos) {
    for (std::size_t i = 0; i < model_dim / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(model_dim));
      pe[pos * model_dim + 2 * i] = std::sin(angle);
      pe[pos * model_dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({context_window, model_dim}, std::move(pe));
}

TransformerModel TransformerModel::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  TransformerModel m;
  m.config_ = config;
  const std::size_t d = config.model_dim, f = config.ffn_dim;
  m.embedding_ = xavier(config.vocab_size, d, rng);
  m.positional_ = positional_encoding(config.context_window, d);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    LayerParameters l;
    l.query_w = xavier(d, d, rng);
    l.query_b = zeros(d);
    l.key_w = xavier(d, d, rng);
    l.key_b = zeros(d);
    l.value_w = xavier(d, d, rng);
    l.value_b = zeros(d);
    l.output_w = xavier(d, d, rng);
    l.output_b = zeros(d);
    l.attn_norm_gain = ones(d);
    l.attn_norm_bias = zeros(d);
    l.ffn_in_w = xavier(d, f, rng);
    l.ffn_in_b = zeros(f);
    l.ffn_out_w = xavier(f, d, rng);
    l.ffn_out_b = zeros(d);
    l.ffn_norm_gain = ones(d);
    l.ffn_norm_bias = zeros(d);
    m.layers_.push_back(std::move(l));
  }
  m.classifier_ = make_head(d, config.head_hidden, 1, rng);
  m.next_char_ = make_head(d, config.head_hidden, config.vocab_size, rng);
  m.sync_requires_grad();
  return m;
}

std::vector<NamedParameter> TransformerModel::parameters() const {
  std::vector<NamedParameter> out;
  out.push_back({"embedding", embedding_, -1});
  auto& self = const_cast<TransformerModel&>(*this);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for_each_tensor(self.layers_[i], [&](const char* name, Tensor& t) {
      out.push_back({"layer" + std::to_string(i) + "." + name, t, static_cast<int>(i)});
    });
  }
  const int head_group = static_cast<int>(layers_.size());
  for_each_tensor(self.classifier_, [&](const char* name, Tensor& t) {
    out.push_back({std::string("classifier.") + name, t, head_group});
  });
  for_each_tensor(self.next_char_, [&](const char* name, Tensor& t) {
    out.push_back({std::string("next_char.") + name, t, head_group});
  });
  return out;
}

std::size_t TransformerModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

void TransformerModel::freeze_layers(std::size_t k) {
  if (k > config_.num_layers)
    throw ConfigError("cannot freeze " + std::to_string(k) + " of " +
                      std::to_string(config_.num_layers) + " layers");
  frozen_layers_ = k;
  sync_requires_grad();
}

bool TransformerModel::is_frozen(const NamedParameter& p) const {
  return p.group < static_cast<int>(frozen_layers_) && frozen_layers_ > 0;
}

void TransformerModel::sync_requires_grad() {
  for (auto& p : parameters()) p.tensor.set_requires_grad(!is_frozen(p));
}

TransformerModel TransformerModel::clone() const {
  TransformerModel m;
  m.config_ = config_;
  m.frozen_layers_ = frozen_layers_;
  m.embedding_ = embedding_.clone();
  m.positional_ = positional_;
  m.layers_ = layers_;
  for (auto& l : m.layers_) for_each_tensor(l, [](const char*, Tensor& t) { t = t.clone(); });
  m.classifier_ = classifier_;
  for_each_tensor(m.classifier_, [](const char*, Tensor& t) { t = t.clone(); });
  m.next_char_ = next_char_;
  for_each_tensor(m.next_char_, [](const char*, Tensor& t) { t = t.clone(); });
  m.sync_requires_grad();
  return m;
}

TransformerModel TransformerModel::detached() const {
  TransformerModel m = clone();
  for (auto& p : m.parameters()) p.tensor.set_requires_grad(false);
  return m;
}

Tensor TransformerModel::embed_tokens(const Batch& batch) const {
  return reshape(embedding_lookup(embedding_, batch.tokens),
                 {batch.size(), batch.width, config_.model_dim});
}

Tensor TransformerModel::forward(const Batch& batch, bool training, Rng& rng) const {
  return forward_embedded(embed_tokens(batch), batch, training, rng);
}

Tensor TransformerModel::forward_embedded(const Tensor& token_embeddings, const Batch& batch,
                                          bool training, Rng& rng) const {
  const std::size_t n = batch.size(), w = batch.width, d = config_.model_dim;
  const std::size_t heads = config_.num_heads;
  if (batch.context_window != config_.context_window || w > config_.context_window ||
      batch.masks.width != w || batch.masks.batch != n)
    throw ContractError("batch window " + std::to_string(batch.context_window) + "/" +
                        std::to_string(w) + " does not match model window " +
                        std::to_string(config_.context_window));
  if (token_embeddings.shape() != Shape{n, w, d})
    throw DimensionError("token embeddings " + to_string(token_embeddings.shape()) + " expected " +
                         to_string(Shape{n, w, d}));

  const auto pe = positional_.values();
  Tensor positions = Tensor::from({w, d}, std::vector<double>(pe.begin(), pe.begin() + static_cast<std::ptrdiff_t>(w * d)));
  Tensor x = dropout(add_tiled(token_embeddings, positions), config_.dropout, training, rng);
  x = reshape(x, {n * w, d});

  const std::vector<double> mask = batch.masks.additive();
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(d / heads));
  for (const auto& l : layers_) {
    Tensor q = split_heads(linear(x, l.query_w, l.query_b), n, w, heads);
    Tensor k = split_heads(linear(x, l.key_w, l.key_b), n, w, heads);
    Tensor v = split_heads(linear(x, l.value_w, l.value_b), n, w, heads);
    Tensor weights = dropout(masked_softmax(batched_matmul(q, k, true), mask, heads, score_scale),
                             config_.dropout, training, rng);
    Tensor context = merge_heads(batched_matmul(weights, v, false), n, heads);
    Tensor attended = linear(context, l.output_w, l.output_b);
    x = layer_norm(add(x, attended), l.attn_norm_gain, l.attn_norm_bias);

    Tensor hidden = dropout(relu(linear(x, l.ffn_in_w, l.ffn_in_b)), config_.dropout, training, rng);
    Tensor ffn = linear(hidden, l.ffn_out_w, l.ffn_out_b);
    x = layer_norm(add(x, ffn), l.ffn_norm_gain, l.ffn_norm_bias);
  }
  return reshape(x, {n, w, d});
}

Tensor TransformerModel::head_forward(const HeadParameters& head, const Tensor& x) const {
  Tensor h = layer_norm(x, head.norm_gain, head.norm_bias);
  h = elu(linear(h, head.hidden_w, head.hidden_b));
  return linear(h, head.out_w, head.out_b);
}

Tensor TransformerModel::classify_logits(const Tensor& hidden,
                                         std::span<const std::size_t> cls_positions) const {
  if (hidden.rank() != 3 || cls_positions.size() != hidden.dim(0))
    throw ContractError("classify: " + std::to_string(cls_positions.size()) +
                        " CLS positions for hidden states " + to_string(hidden.shape()));
  const std::size_t w = hidden.dim(1);
  std::vector<std::size_t> rows(cls_positions.size());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (cls_positions[b] >= w) throw ContractError("CLS position outside the sequence");
    rows[b] = b * w + cls_positions[b];
  }
  Tensor out = head_forward(classifier_, gather_rows(hidden, rows));
  return reshape(out, {rows.size()});
}

Tensor TransformerModel::classify(const Tensor& hidden, std::span<const std::size_t> cls_positions) const {
  return sigmoid(classify_logits(hidden, cls_positions));
}

Tensor TransformerModel::next_char_logits(const Tensor& hidden, std::span<const std::size_t> rows) const {
  return head_forward(next_char_, gather_rows(hidden, rows));
}

Tensor TransformerModel::predict_next(const Tensor& hidden) const {
  if (hidden.rank() != 3) throw DimensionError("predict_next expects [B, W, d]");
  std::vector<std::size_t> rows(hidden.dim(0) * hidden.dim(1));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  Tensor probs = softmax(next_char_logits(hidden, rows));
  return reshape(probs, {hidden.dim(0), hidden.dim(1), config_.vocab_size});
}

}  // namespace urlt
