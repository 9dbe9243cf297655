#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scd2te/io.hpp"
#include "scd2te/metrics.hpp"
#include "scd2te/pipeline.hpp"
#include "scd2te/run_config.hpp"

namespace scd2te::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Parses `args` (args[0] is the program name) and runs the subcommand.
/// Normal output goes to `out`, diagnostics to `err`. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Building blocks shared by the subcommands. Each one is what the matching
// subcommand writes, so callers can compare file output against them.

/// Config file (or defaults when absent) with the seed override applied.
RunConfig resolve_config(const std::optional<fs::path>& config_path,
                         std::optional<std::uint64_t> seed);

/// Loads the manifest entries of the given splits with their masks.
std::vector<TrainingExample> load_split(const DatasetManifest& manifest,
                                        std::initializer_list<Split> splits, ColorMode mode);

/// Header `layer,time_s,train_f1`, one row per layer.
void write_train_log(std::ostream& out, const TrainReport& report);

/// Header `mode,layer,time_s,f1`.
void write_ablation_csv(std::ostream& out, const std::vector<AblationPoint>& points);

/// Per-image metrics for every same_test and different_test entry.
MetricsReport evaluate_manifest(const Model& model, const DatasetManifest& manifest);

/// Min-max maps the scores onto 0..255 (all zero for a constant map).
RasterImage score_to_raster(const ScoreMap& scores);

/// Raw sidecar: "SCDF", u32 width, u32 height, then width*height f64 in
/// raster order, all little-endian.
void write_score_sidecar(const fs::path& path, const ScoreMap& scores);
ScoreMap read_score_sidecar(const fs::path& path);

/// Tile grid of a montage holding `tiles` square tiles.
struct MontageLayout {
  int tiles = 0;
  int columns = 0;
  int rows = 0;
  int tile_side = 0;
  int width() const noexcept { return columns * (tile_side + 1) + 1; }
  int height() const noexcept { return rows * (tile_side + 1) + 1; }
  /// Top-left pixel of tile t.
  Pixel origin(int t) const noexcept {
    return {1 + (t % columns) * (tile_side + 1), 1 + (t / columns) * (tile_side + 1)};
  }
};

MontageLayout montage_layout(int tiles, int tile_side);

/// Every atom of every dictionary of the layer, plane by plane, each tile
/// min-max stretched to 0..255, separated by 1-pixel black lines.
RasterImage layer_montage(const Layer& layer);

/// Layer sizes, compressor widths, tree counts and leaf statistics.
void write_model_summary(std::ostream& out, const Model& model);

}  // namespace scd2te::cli
