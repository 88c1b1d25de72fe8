#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include "urlt/error.hpp"
#include "urlt/model.hpp"

namespace urlt {
namespace {

constexpr std::array<char, 4> kMagic = {'U', 'R', 'L', 'T'};
constexpr double kDropoutScale = 1e6;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t narrow(std::size_t v) {
  if (v > 0xFFFFFFFFu) throw CheckpointError("value too large for checkpoint field");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  Writer w;
  w.raw({kMagic.data(), kMagic.size()});
  w.u32(kCheckpointVersion);
  w.u32(narrow(c.num_layers));
  w.u32(narrow(c.context_window));
  w.u32(narrow(c.model_dim));
  w.u32(narrow(c.ffn_dim));
  w.u32(narrow(c.num_heads));
  w.u32(narrow(static_cast<std::size_t>(std::llround(c.dropout * kDropoutScale))));
  w.u32(narrow(c.vocab_size));
  w.u32(narrow(c.head_hidden));
  const auto params = model.parameters();
  w.u32(narrow(params.size()));
  for (const auto& p : params) {
    w.u32(narrow(p.name.size()));
    w.raw(p.name);
    w.u32(narrow(p.tensor.rank()));
    for (auto extent : p.tensor.shape()) w.u32(narrow(extent));
    for (double v : p.tensor.values()) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

TransformerModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  const std::string magic = r.raw(kMagic.size());
  if (magic != std::string_view(kMagic.data(), kMagic.size()))
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  ModelConfig c;
  c.num_layers = r.u32();
  c.context_window = r.u32();
  c.model_dim = r.u32();
  c.ffn_dim = r.u32();
  c.num_heads = r.u32();
  c.dropout = static_cast<double>(r.u32()) / kDropoutScale;
  c.vocab_size = r.u32();
  c.head_hidden = r.u32();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  }
  if (c.num_layers > 4096 || c.model_dim > 1 << 16 || c.context_window > 1 << 20)
    throw CheckpointError("checkpoint configuration is implausibly large");

  Rng unused(0);
  TransformerModel model = TransformerModel::init(c, unused);
  std::map<std::string, Tensor> by_name;
  for (auto& p : model.parameters()) by_name.emplace(p.name, p.tensor);

  const std::uint32_t count = r.u32();
  if (count != by_name.size())
    throw CheckpointError("checkpoint has " + std::to_string(count) + " parameters, expected " +
                          std::to_string(by_name.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len > 256) throw CheckpointError("corrupt parameter name length");
    const std::string name = r.raw(name_len);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("unknown parameter '" + name + "'");
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != it->second.shape())
      throw CheckpointError("parameter '" + name + "' has shape " + to_string(shape) +
                            ", expected " + to_string(it->second.shape()));
    auto values = it->second.mutable_values();
    for (auto& v : values) v = r.f64();
    by_name.erase(it);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return model;
}

}  // namespace urlt
