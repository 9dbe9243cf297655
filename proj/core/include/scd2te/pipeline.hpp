#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scd2te/boosting.hpp"
#include "scd2te/csc.hpp"
#include "scd2te/grid.hpp"

namespace scd2te {

enum class ColorMode : std::uint32_t { luminance = 0, per_channel = 1 };

/// Which earlier feature maps a layer concatenates with its own codes.
enum class ReuseMode : std::uint32_t { none = 0, previous_only = 1, dense = 2 };

std::string to_string(ColorMode mode);
std::string to_string(ReuseMode mode);
ColorMode parse_color_mode(const std::string& text);
ReuseMode parse_reuse_mode(const std::string& text);

/// One input image as a list of same-geometry planes on [0,1]: a single
/// luminance plane or three colour planes.
using ImagePlanes = std::vector<ScalarGrid>;

struct ModelConfig {
  int layer_count = 4;
  std::vector<int> filter_sides{17, 29, 29, 29};
  std::vector<int> atom_counts{32, 32, 32, 32};
  std::vector<int> compressed_channels{32, 32, 32, 32};
  std::vector<Offset> context_offsets = default_context_offsets();
  /// Training pixels drawn per layer for the ensemble.
  int samples_per_layer = 50000;
  /// Pixels drawn per layer for fitting the compressor (capped by samples_per_layer).
  int compressor_samples = 4000;
  EnsembleConfig ensemble{};
  SparseCodingConfig sparse{};
  double threshold = 0.5;
  ColorMode color_mode = ColorMode::luminance;
  ReuseMode reuse_mode = ReuseMode::dense;
  /// Layer inputs are encoded after subtracting their local mean over a
  /// (2r+1)^2 box; 0 encodes the input as is.
  int highpass_radius = 8;
  /// Append each layer's unfiltered input planes to its feature maps.
  bool append_input = true;
  /// Master seed; every dictionary, sampler and ensemble seed derives from it.
  std::uint64_t seed = 42;

  /// Throws InvalidArgument on inconsistent list lengths or out-of-range fields.
  void validate() const;
  int planes() const noexcept { return color_mode == ColorMode::luminance ? 1 : 3; }
  int largest_filter_side() const;
};

struct Layer {
  int index = 1;
  /// One dictionary per input plane: the image planes for layer 1, the
  /// rescaled previous score map for later layers.
  std::vector<LocalDictionary> dictionaries;
  Compressor compressor;
  TreeEnsemble ensemble;
  /// Affine map of the previous score map onto [0,1] before encoding
  /// (identity for layer 1).
  double input_min = 0.0;
  double input_max = 1.0;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct Model {
  static constexpr std::uint16_t kFormatVersion = 1;

  std::vector<Layer> layers;
  ModelConfig config;
  std::uint16_t format_version = kFormatVersion;

  /// Throws InvalidState unless layer indices run 1..L and widths chain.
  void validate() const;
};

/// Carried feature maps: entry k holds the codes of layer k+1, followed by
/// that layer's input planes when append_input is set.
using FeatureCarry = std::vector<FeatureMaps>;

/// image - (local mean over a (2r+1)^2 reflect-padded box). r = 0 returns
/// the image unchanged.
ScalarGrid highpass(const ScalarGrid& image, int radius);

/// Channels layer `layer` contributes to the carry.
int layer_channels(const ModelConfig& cfg, int layer);

/// Indices into a carry of length `layer` selected by the reuse mode; the
/// layer's own maps are always last.
std::vector<std::size_t> reuse_selection(ReuseMode mode, int layer);

/// Width of the augmented pool the layer's compressor consumes.
int pooled_width(const ModelConfig& cfg, int layer);

/// Rescales a score map to [0,1] with the layer's stored range; values
/// outside the training range are clamped.
ScalarGrid rescale_scores(const ScoreMap& scores, double lo, double hi);

/// Encodes the layer input (image planes for layer 1, the previous raw score
/// map otherwise), appends the codes to `carry`, then pools, compresses and
/// scores every pixel. Throws InvalidState if carry.size() != layer - 1.
ScoreMap forward_layer(const Model& model, int layer, const ImagePlanes& input, FeatureCarry& carry);

/// Score map after every layer, in order.
std::vector<ScoreMap> predict_layers(const Model& model, const ImagePlanes& image);

struct Prediction {
  ScoreMap scores;
  BinaryMask mask;
};

/// Runs every layer; mask = (final score >= threshold). Throws
/// InvalidArgument if the image is smaller than the largest filter.
Prediction predict_image(const Model& model, const ImagePlanes& image);

struct TrainingExample {
  ImagePlanes planes;
  BinaryMask mask;
};

struct LayerReport {
  int layer = 0;
  double time_s = 0.0;
  /// Mean per-image F1 of the thresholded training score maps.
  double train_f1 = 0.0;
  std::vector<std::string> warnings;
};

struct TrainReport {
  std::vector<LayerReport> layers;
};

/// Layer-wise training; layer k never changes once layer k+1 starts.
Model train(std::span<const TrainingExample> dataset, const ModelConfig& cfg,
            TrainReport* report = nullptr);

struct AblationPoint {
  ReuseMode mode = ReuseMode::dense;
  int layer = 0;
  double time_s = 0.0;
  /// Mean per-image held-out F1 after this layer; images where F1 is
  /// undefined are skipped.
  double f1 = 0.0;
};

/// Trains one model with cfg.reuse_mode replaced by `mode` and scores the
/// held-out set after every layer.
std::vector<AblationPoint> train_ablation(std::span<const TrainingExample> train_set,
                                          std::span<const TrainingExample> heldout,
                                          const ModelConfig& cfg, ReuseMode mode);

/// Mean per-image F1 of thresholded score maps against masks.
double mean_f1(std::span<const ScoreMap> scores, std::span<const BinaryMask> masks,
               double threshold);

}  // namespace scd2te
