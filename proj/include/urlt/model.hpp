#pragma once

// Decoder-only (left-to-right) transformer over byte tokens with a binary
// classifier head on the CLS position and a 257-way next-character head.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "urlt/tensor.hpp"
#include "urlt/url_codec.hpp"

namespace urlt {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t context_window = 64;
  std::size_t model_dim = 32;
  std::size_t ffn_dim = 64;
  std::size_t num_heads = 4;
  double dropout = 0.1;
  std::size_t vocab_size = kVocabSize;
  std::size_t head_hidden = 32;

  // 20 layers, window 256, width 64, FFN 128, 4 heads, dropout 0.1.
  static ModelConfig full_scale();
  static ModelConfig desk_scale() { return {}; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParameters {
  Tensor query_w, query_b, key_w, key_b, value_w, value_b, output_w, output_b;
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  Tensor ffn_norm_gain, ffn_norm_bias;
};

// d -> LayerNorm -> head_hidden -> ELU -> out
struct HeadParameters {
  Tensor norm_gain, norm_bias, hidden_w, hidden_b, out_w, out_b;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
  // -1 for the embedding table, layer index for blocks, num_layers for heads.
  int group = 0;
};

class TransformerModel {
 public:
  // Xavier-uniform weights, zero biases, unit layer-norm gains.
  static TransformerModel init(const ModelConfig& config, Rng& rng);

  TransformerModel(TransformerModel&&) = default;
  TransformerModel& operator=(TransformerModel&&) = default;
  TransformerModel(const TransformerModel&) = delete;
  TransformerModel& operator=(const TransformerModel&) = delete;

  // Independent deep copy (frozen set included).
  TransformerModel clone() const;
  // Deep copy in which no parameter requires gradients, for read-only
  // gradient computations with respect to inputs.
  TransformerModel detached() const;

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParameter> parameters() const;
  std::size_t parameter_count() const;

  // Excludes the embedding table and layers [0, k) from training.
  void freeze_layers(std::size_t k);
  std::size_t frozen_layers() const { return frozen_layers_; }
  bool is_frozen(const NamedParameter& p) const;

  // Token embeddings (no positional signal) for the batch: [B, width, d].
  Tensor embed_tokens(const Batch& batch) const;
  // Top-layer hidden states [B, width, d].
  Tensor forward(const Batch& batch, bool training, Rng& rng) const;
  // Same, starting from caller-supplied token embeddings [B, width, d].
  Tensor forward_embedded(const Tensor& token_embeddings, const Batch& batch, bool training,
                          Rng& rng) const;

  // Pre-sigmoid classifier outputs [B], read at each row's CLS position.
  Tensor classify_logits(const Tensor& hidden, std::span<const std::size_t> cls_positions) const;
  // Sigmoid scores [B].
  Tensor classify(const Tensor& hidden, std::span<const std::size_t> cls_positions) const;
  // Next-character logits for selected flat rows (b * width + position): [rows, 257].
  Tensor next_char_logits(const Tensor& hidden, std::span<const std::size_t> rows) const;
  // Softmax over 257 symbols at every position: [B, width, 257].
  Tensor predict_next(const Tensor& hidden) const;

  const Tensor& embedding() const { return embedding_; }
  const std::vector<LayerParameters>& layers() const { return layers_; }
  const HeadParameters& classifier_head() const { return classifier_; }
  const HeadParameters& next_char_head() const { return next_char_; }

 private:
  TransformerModel() = default;
  Tensor head_forward(const HeadParameters& head, const Tensor& x) const;
  void sync_requires_grad();

  ModelConfig config_;
  Tensor embedding_;
  Tensor positional_;
  std::vector<LayerParameters> layers_;
  HeadParameters classifier_;
  HeadParameters next_char_;
  std::size_t frozen_layers_ = 0;
};

// Sinusoidal table [N, d]: sin at even dims, cos at odd dims.
Tensor positional_encoding(std::size_t context_window, std::size_t model_dim);

// Little-endian checkpoint: "URLT", u32 version, eight u32 config fields
// (layers, window, width, ffn, heads, dropout in parts per million, vocab,
// head hidden), u32 parameter count, then per parameter: u32 name length,
// name bytes, u32 rank, u32 extents, f64 values in row-major order.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path);
TransformerModel load_checkpoint(const std::filesystem::path& path);

}  // namespace urlt
