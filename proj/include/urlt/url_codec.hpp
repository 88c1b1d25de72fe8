#pragma once

// Byte-level URL encoding: each byte is its own token (0..255), 256 is the
// end-of-sequence / classification token, and padding reuses id 0 but is
// excluded from attention and from every loss by the masks.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "urlt/tensor.hpp"

namespace urlt {

inline constexpr std::size_t kVocabSize = 257;
inline constexpr std::size_t kClsToken = 256;
inline constexpr std::size_t kPadToken = 0;

enum class EncodeMode { classify, pretrain, mixed };
enum class Truncation { head, tail };

struct EncodedUrl {
  std::vector<std::size_t> tokens;  // length N, padded
  std::size_t length = 0;           // M, real bytes
  std::optional<std::size_t> cls_position;
  std::optional<std::vector<std::size_t>> next_char_labels;  // length M
  std::optional<int> label;
  EncodeMode mode = EncodeMode::classify;

  // Positions holding real tokens (bytes plus CLS when present).
  std::size_t extent() const { return cls_position ? *cls_position + 1 : length; }
  std::string decode() const;
};

EncodedUrl encode(std::string_view url, EncodeMode mode, std::size_t context_window,
                  std::optional<int> label = std::nullopt, Truncation truncation = Truncation::head);

// Masks over a width x width window for a batch of sequences. All matrices are
// row-major; bool-like entries are stored as uint8_t.
struct Masks {
  std::size_t width = 0;
  std::size_t batch = 0;
  std::vector<std::uint8_t> causal;     // width x width, causal[i*w+j] = j <= i
  std::vector<std::uint8_t> valid;      // batch x width, real tokens (bytes + CLS)
  std::vector<std::uint8_t> next_char;  // batch x width, positions 0..M-1 (pretrain/mixed)
  std::vector<std::uint8_t> cls;        // batch x width, the CLS position (classify/mixed)

  bool can_attend(std::size_t row, std::size_t from, std::size_t to) const {
    return causal[from * width + to] && valid[row * width + from] && valid[row * width + to];
  }
  // batch x width x width additive mask: 0 where attention is allowed, -1e9 elsewhere.
  std::vector<double> additive() const;
};

inline constexpr double kMaskedScore = -1e9;

Masks build_masks(std::span<const std::size_t> lengths, std::size_t width, EncodeMode mode);

struct Batch {
  EncodeMode mode = EncodeMode::classify;
  std::size_t context_window = 0;
  std::size_t width = 0;                 // stored columns, <= context_window
  std::vector<std::size_t> tokens;       // size x width
  std::vector<std::size_t> lengths;
  std::vector<int> labels;               // empty when unlabeled
  std::vector<std::size_t> cls_positions;
  std::vector<std::vector<std::size_t>> next_char_labels;
  Masks masks;

  std::size_t size() const { return lengths.size(); }
  std::size_t token(std::size_t row, std::size_t pos) const { return tokens[row * width + pos]; }
};

// Stacks encoded URLs. With trim the width shrinks to the longest sequence
// (plus one column in pretrain mode so M <= width - 1 still holds); results
// on real positions are unaffected because padding is fully masked.
Batch make_batch(std::span<const EncodedUrl> items, std::size_t context_window, bool trim = true);

// Minibatch order over `count` items: shuffled with rng when requested,
// final partial batch included.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    bool shuffle, Rng& rng);

std::vector<Batch> make_batches(std::span<const EncodedUrl> dataset, std::size_t batch_size,
                                bool shuffle, Rng& rng, std::size_t context_window);

}  // namespace urlt
