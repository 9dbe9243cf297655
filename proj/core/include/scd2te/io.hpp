#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scd2te/grid.hpp"
#include "scd2te/pipeline.hpp"

namespace scd2te {

// ---- images ---------------------------------------------------------------

/// Raw decoded pixels: channels is 1 (grey) or 3 (RGB), samples interleaved,
/// maxval the largest representable sample (255 or 65535).
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  int maxval = 255;
  std::vector<std::uint16_t> samples;
};

/// Reads binary PGM (P5) or PNG, chosen by file signature. Throws FormatError
/// naming the path on unreadable or unsupported files.
RasterImage read_raster(const std::filesystem::path& path);

/// Binary PGM, grey only; maxval up to 65535 (16-bit samples big-endian).
void write_pgm(const std::filesystem::path& path, const RasterImage& image);
/// 8- or 16-bit grey or RGB PNG.
void write_png(const std::filesystem::path& path, const RasterImage& image);

/// Samples divided by maxval. Luminance mode maps RGB with weights
/// 0.299/0.587/0.114; per_channel returns three planes (grey is replicated).
ImagePlanes load_image(const std::filesystem::path& path, ColorMode mode = ColorMode::luminance);

/// Zero is background, any nonzero sample is foreground. Colour masks are
/// foreground where any channel is nonzero.
BinaryMask load_mask(const std::filesystem::path& path);

/// Quantises [0,1] values to 8 bits (values are clamped).
void save_grey_pgm(const std::filesystem::path& path, const ScalarGrid& grid);
/// 0 -> 0, 1 -> 255.
void save_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);

// ---- model file -----------------------------------------------------------

/// "SCD2TE", u16 version, u32 layer count, then checksummed blocks: CONF,
/// and per layer DICT, COMP, RESC, ENSB. Each block is a 4-byte tag, a u32
/// payload length, the payload and a CRC32 of the payload. All integers
/// and IEEE-754 doubles are little-endian.
std::vector<std::uint8_t> serialize_model(const Model& model);
/// Throws IntegrityError naming the failing block, or FormatError on a bad
/// magic or unknown version.
Model deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// ---- manifest -------------------------------------------------------------

enum class Split { train, validation, same_test, different_test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  Split split = Split::train;
  std::string organ;
  std::filesystem::path image;
  std::optional<std::filesystem::path> mask;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> with_split(Split split) const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Lines `split,organ,image_path[,mask_path]`; blank lines and lines starting
/// with `#` are skipped. Relative paths resolve against `base_dir`. Train
/// entries need a mask; duplicate image paths are rejected. Throws ParseError
/// with the 1-based line number.
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});

/// parse_manifest relative to the file's directory, then checks that every
/// referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes paths as given (relative paths stay relative).
void write_manifest(std::ostream& out, const DatasetManifest& manifest);

/// Image planes and mask for a manifest entry. Throws InvalidArgument if the
/// entry has no mask.
TrainingExample load_example(const ManifestEntry& entry, ColorMode mode);

}  // namespace scd2te
