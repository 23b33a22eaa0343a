#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "poisonlab/poisonlab.hpp"

namespace testutil {

using namespace poisonlab;

// Small random model with non-trivial biases.
inline ModelParams random_model(std::size_t v, std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed,
                                double scale = 0.8) {
  ModelParams p({v, d, h, c});
  Rng rng(seed);
  for (double& x : p.values()) x = scale * rng.normal();
  return p;
}

inline Dataset random_dataset(std::size_t n, std::size_t vocab, std::size_t classes, std::uint64_t seed,
                              std::size_t min_len = 1, std::size_t max_len = 6) {
  Dataset ds;
  ds.num_classes = classes;
  ds.name = "random";
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    const auto len = min_len + rng.below(max_len - min_len + 1);
    for (std::size_t k = 0; k < len; ++k) ex.token_ids.push_back(static_cast<TokenId>(1 + rng.below(vocab - 1)));
    ex.label = static_cast<Label>(rng.below(classes));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

inline FlatVector random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  FlatVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

inline double norm(const FlatVector& v) { return std::sqrt(dot(v, v)); }

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// |a - b| / max(|a|, |b|) over whole vectors.
inline double vec_rel_err(const FlatVector& a, const FlatVector& b) {
  FlatVector d = a;
  axpy(-1.0, b, d);
  return norm(d) / std::max({norm(a), norm(b), 1e-12});
}

// Scratch directory under the build tree, wiped on construction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("poisonlab_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
