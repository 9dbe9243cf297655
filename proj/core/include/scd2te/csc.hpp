#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scd2te/grid.hpp"

namespace scd2te {

/// Knobs of the l1-penalised convolutional coding problem and of dictionary
/// learning. Defaults give structured atoms on [0,1] images.
struct SparseCodingConfig {
  double lambda = 0.15;
  int max_inner_iters = 12;
  /// Stop when the relative objective decrease of one sweep drops below tol.
  double tol = 1e-4;
  /// Upper bound on the fraction of nonzero code entries after encoding.
  double sparsity_ceiling = 0.25;
  int dict_epochs = 20;
  int patches_per_epoch = 32;
  /// Fraction of the per-atom Newton step taken before backtracking.
  double step_size = 1.0;
  std::uint64_t seed = 42;

  /// Throws InvalidArgument on out-of-range fields. atom_count is checked
  /// against patches_per_epoch when positive.
  void validate(int atom_count = 0) const;
};

/// Bank of square, odd-sided, unit-norm filters. Atom j occupies
/// atoms()[j*d, (j+1)*d) with d = filter_side^2, row-major inside the filter.
class LocalDictionary {
 public:
  LocalDictionary() = default;
  /// Validates odd side and unit-norm columns (tolerance 1e-9).
  LocalDictionary(int filter_side, int atom_count, std::vector<double> atoms);

  /// Normalises every column, replacing zero columns with a canonical unit vector.
  static LocalDictionary normalized(int filter_side, int atom_count, std::vector<double> atoms);

  int filter_side() const noexcept { return side_; }
  int half() const noexcept { return side_ / 2; }
  int atom_count() const noexcept { return count_; }
  int atom_size() const noexcept { return side_ * side_; }
  std::span<const double> atom(int j) const {
    return std::span<const double>(atoms_).subspan(static_cast<std::size_t>(j) * atom_size(),
                                                   static_cast<std::size_t>(atom_size()));
  }
  const std::vector<double>& atoms() const noexcept { return atoms_; }
  /// Gram matrix d^T d, row-major atom_count x atom_count.
  std::vector<double> gram() const;

  friend bool operator==(const LocalDictionary&, const LocalDictionary&) = default;

 private:
  int side_ = 0;
  int count_ = 0;
  std::vector<double> atoms_;
};

/// Per-pixel code vectors. codes()[(y*width + x)*channels + k].
class FeatureMaps {
 public:
  FeatureMaps() = default;
  FeatureMaps(int width, int height, int channels, int layer_index = 0);
  FeatureMaps(int width, int height, int channels, std::vector<double> codes,
              int layer_index = 0);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  int layer_index() const noexcept { return layer_index_; }
  void set_layer_index(int index) noexcept { layer_index_ = index; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::span<double> pixel(int x, int y) {
    return std::span<double>(codes_).subspan(offset(x, y), static_cast<std::size_t>(channels_));
  }
  std::span<const double> pixel(int x, int y) const {
    return std::span<const double>(codes_).subspan(offset(x, y),
                                                   static_cast<std::size_t>(channels_));
  }
  std::span<const double> pixel(std::size_t linear) const {
    return std::span<const double>(codes_).subspan(linear * static_cast<std::size_t>(channels_),
                                                   static_cast<std::size_t>(channels_));
  }
  std::span<double> codes() noexcept { return codes_; }
  std::span<const double> codes() const noexcept { return codes_; }

  double nonzero_fraction() const;
  template <typename U>
  bool same_geometry(const Grid<U>& g) const noexcept {
    return width_ == g.width() && height_ == g.height();
  }
  bool same_geometry(const FeatureMaps& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const FeatureMaps&, const FeatureMaps&) = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
           static_cast<std::size_t>(channels_);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  int layer_index_ = 0;
  std::vector<double> codes_;
};

struct Offset {
  int dx = 0;
  int dy = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// side x side window centred at `center`, reflect-padded, row-major.
/// Throws InvalidArgument if side is even, non-positive, or exceeds both
/// image dimensions.
std::vector<double> extract_patch(const ScalarGrid& image, Pixel center, int side);

/// Sum over pixels of (placement of d * a_i), the adjoint of extract_patch:
/// window samples that reflect back into the image accumulate there.
ScalarGrid reconstruct(const FeatureMaps& codes, const LocalDictionary& dict);

/// 0.5 * ||image - reconstruct(codes)||^2 + lambda * ||codes||_1.
double csc_objective(const ScalarGrid& image, const FeatureMaps& codes,
                     const LocalDictionary& dict, double lambda);

/// Per-sweep record of an encode call.
struct EncodeTrace {
  /// Objective after each sweep (index 0 is the starting point).
  std::vector<double> objective;
  /// Penalty in force for the matching objective entry.
  std::vector<double> lambda;
  /// Penalty of the returned codes; exceeds cfg.lambda if the sparsity
  /// ceiling forced an increase.
  double final_lambda = 0.0;
  int sweeps = 0;
};

/// Codes step of the l1 convolutional coding problem with the dictionary
/// fixed. Cyclic per-pixel block coordinate descent with soft thresholding;
/// each pixel re-reads the current global residual before its update.
/// `warm_start`, if given, seeds the codes. Throws InvalidInput on non-finite
/// pixels and InternalError if the objective ever increases.
FeatureMaps encode(const ScalarGrid& image, const LocalDictionary& dict,
                   const SparseCodingConfig& cfg, EncodeTrace* trace = nullptr,
                   const FeatureMaps* warm_start = nullptr);

struct DictionaryLearningResult {
  LocalDictionary dictionary;
  /// Held-out objective before the first epoch and after each epoch.
  std::vector<double> objective_trace;
  bool degenerate_input = false;
  std::string warning;
};

/// Alternates convolutional coding of random training windows with a
/// curvature-scaled step on the atoms, projected onto the unit sphere. Each
/// epoch also offers candidates with atoms recentred by their energy centroid
/// and with an unused, duplicated or (in turn) arbitrary atom reseeded from
/// the worst-fit residual window. A candidate is kept only if it does not
/// raise the objective on a fixed held-out window sample.
DictionaryLearningResult learn_dictionary(std::span<const ScalarGrid> images, int atom_count,
                                          int filter_side, const SparseCodingConfig& cfg);

/// Per-pixel affine projection: out = projection * (in - mean).
class Compressor {
 public:
  Compressor() = default;
  /// projection is row-major out_channels x in_channels with orthonormal rows.
  Compressor(int in_channels, int out_channels, std::vector<double> projection,
             std::vector<double> mean);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  const std::vector<double>& projection() const noexcept { return projection_; }
  const std::vector<double>& mean() const noexcept { return mean_; }
  std::span<const double> row(int r) const {
    return std::span<const double>(projection_)
        .subspan(static_cast<std::size_t>(r) * in_, static_cast<std::size_t>(in_));
  }
  /// -projection * mean, accumulated in input order.
  const std::vector<double>& bias() const noexcept { return bias_; }
  /// Variance of the fitting pool captured by each output channel.
  const std::vector<double>& explained_variance() const noexcept { return variance_; }
  void set_explained_variance(std::vector<double> v) { variance_ = std::move(v); }

  void apply(std::span<const double> in, std::span<double> out) const;

  friend bool operator==(const Compressor& a, const Compressor& b) {
    return a.in_ == b.in_ && a.out_ == b.out_ && a.projection_ == b.projection_ &&
           a.mean_ == b.mean_;
  }

 private:
  int in_ = 0;
  int out_ = 0;
  std::vector<double> projection_;
  std::vector<double> mean_;
  std::vector<double> bias_;
  std::vector<double> variance_;
};

/// PCA of the pool's per-pixel vectors: mean plus the top out_channels
/// principal directions. Each pixel of `pool` is one sample.
Compressor fit_compressor(const FeatureMaps& pool, int out_channels);

FeatureMaps apply_compressor(const Compressor& comp, const FeatureMaps& pool);

/// Channel block 0 is the input, block k+1 holds the input sampled at
/// offsets[k] (reflect padded).
FeatureMaps build_context_features(const FeatureMaps& maps, std::span<const Offset> offsets);

/// Stacks channels of same-geometry maps in order.
FeatureMaps concatenate(std::span<const FeatureMaps* const> maps);

/// Eight compass directions at radii 2, 4 and 8.
std::vector<Offset> default_context_offsets();
std::vector<Offset> compass_offsets(std::span<const int> radii);

/// Concatenation, context augmentation and compression in one pass, without
/// materialising the augmented pool. Equals
/// apply_compressor(comp, build_context_features(concatenate(maps), offsets)).
FeatureMaps compress_with_context(const Compressor& comp, std::span<const FeatureMaps* const> maps,
                                  std::span<const Offset> offsets);

/// Augmented vectors (as build_context_features would produce) at the given
/// pixels only. Result has width = pixels.size(), height = 1.
FeatureMaps gather_context_vectors(std::span<const FeatureMaps* const> maps,
                                   std::span<const Offset> offsets,
                                   std::span<const std::size_t> pixels);

}  // namespace scd2te
