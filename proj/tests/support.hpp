#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "urlt/data.hpp"
#include "urlt/model.hpp"
#include "urlt/tensor.hpp"

namespace urlt::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "urlt_test_XXXXXX").string();
    path_ = ::mkdtemp(pattern.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

inline std::string random_url(Rng& rng, std::size_t min_len, std::size_t max_len) {
  static const std::string chars = "abcdefghijklmnopqrstuvwxyz0123456789./:-_?=";
  const std::size_t len = min_len + rng() % (max_len - min_len + 1);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += chars[rng() % chars.size()];
  return s;
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.num_layers = 2;
  c.context_window = 16;
  c.model_dim = 8;
  c.ffn_dim = 12;
  c.num_heads = 2;
  c.head_hidden = 6;
  return c;
}

}  // namespace urlt::test
