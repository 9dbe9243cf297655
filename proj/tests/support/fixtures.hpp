#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "scd2te/pipeline.hpp"
#include "scd2te/synthetic.hpp"

namespace scd2te::testing {

namespace fs = std::filesystem;

/// Desktop-sized model used for the trend and end-to-end checks on the
/// 200x200 synthetic corpus (8 train / 4 test).
inline ModelConfig desk_config() {
  ModelConfig c;
  c.layer_count = 4;
  c.filter_sides = {9, 9, 9, 9};
  c.atom_counts = {8, 8, 8, 8};
  c.compressed_channels = {32, 32, 32, 32};
  const int radii[] = {2, 5, 10};
  c.context_offsets = compass_offsets(radii);
  c.samples_per_layer = 15000;
  c.compressor_samples = 3000;
  c.sparse.dict_epochs = 8;
  c.sparse.patches_per_epoch = 16;
  c.ensemble.tree_count = 30;
  c.ensemble.max_depth = 4;
  c.highpass_radius = 8;
  c.seed = 42;
  return c;
}

/// Seconds-scale model for unit tests on small images.
inline ModelConfig tiny_config(int layers = 2) {
  ModelConfig c;
  c.layer_count = layers;
  c.filter_sides.assign(static_cast<std::size_t>(layers), 5);
  c.atom_counts.assign(static_cast<std::size_t>(layers), 4);
  c.compressed_channels.assign(static_cast<std::size_t>(layers), 8);
  const int radii[] = {2};
  c.context_offsets = compass_offsets(radii);
  c.samples_per_layer = 1200;
  c.compressor_samples = 400;
  c.sparse.dict_epochs = 2;
  c.sparse.patches_per_epoch = 8;
  c.ensemble.tree_count = 6;
  c.ensemble.max_depth = 3;
  c.highpass_radius = 3;
  c.seed = 42;
  return c;
}

inline SyntheticConfig small_synthetic(int side = 48) {
  SyntheticConfig s;
  s.width = side;
  s.height = side;
  s.nuclei_min = 3;
  s.nuclei_max = 5;
  s.radius_min = 4.0;
  s.radius_max = 6.0;
  s.fibres = 2;
  s.specks = 5;
  return s;
}

inline std::vector<TrainingExample> synthetic_examples(const SyntheticConfig& cfg, int count,
                                                       int first = 0) {
  std::vector<TrainingExample> out;
  for (const SyntheticSample& s : synthetic_corpus(cfg, count, first)) {
    out.push_back({{s.image}, s.mask});
  }
  return out;
}

inline ScalarGrid random_grid(int w, int h, std::mt19937_64& gen, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ScalarGrid g(w, h);
  for (double& v : g.values()) v = u(gen);
  return g;
}

inline BinaryMask random_mask(int w, int h, double p, std::mt19937_64& gen) {
  std::bernoulli_distribution b(p);
  BinaryMask m(w, h);
  for (auto& v : m.values()) v = b(gen) ? 1 : 0;
  return m;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("scd2te_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

}  // namespace scd2te::testing
