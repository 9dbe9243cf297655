#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "scd2te/io.hpp"

namespace scd2te {
namespace {

namespace fs = std::filesystem;

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw FormatError(path.string() + ": cannot open file");
  return f;
}

// ---- PGM -------------------------------------------------------------------

class PgmHeaderReader {
 public:
  PgmHeaderReader(std::istream& in, const fs::path& path) : in_(in), path_(path) {}

  int next_int() {
    skip_space_and_comments();
    long value = 0;
    int digits = 0;
    while (std::isdigit(in_.peek())) {
      value = value * 10 + (in_.get() - '0');
      if (value > 1 << 30) fail("header value too large");
      ++digits;
    }
    if (digits == 0) fail("malformed header");
    return static_cast<int>(value);
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path_.string() + ": " + what);
  }

 private:
  void skip_space_and_comments() {
    while (true) {
      const int c = in_.peek();
      if (c == '#') {
        std::string line;
        std::getline(in_, line);
      } else if (c != EOF && std::isspace(c)) {
        in_.get();
      } else {
        return;
      }
    }
  }

  std::istream& in_;
  const fs::path& path_;
};

RasterImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open file");
  char magic[2] = {};
  in.read(magic, 2);
  PgmHeaderReader header(in, path);
  if (!in || magic[0] != 'P' || magic[1] != '5') header.fail("not a binary PGM (P5) file");
  RasterImage img;
  img.width = header.next_int();
  img.height = header.next_int();
  img.maxval = header.next_int();
  if (img.width < 1 || img.height < 1) header.fail("empty image");
  if (img.maxval < 1 || img.maxval > 65535) header.fail("maxval must lie in [1, 65535]");
  if (!std::isspace(in.get())) header.fail("missing whitespace after header");

  const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  const std::size_t bytes_per = img.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) header.fail("truncated pixel data");
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t v = bytes_per == 2
                                ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1])
                                : raw[i];
    if (v > img.maxval) header.fail("sample exceeds maxval");
    img.samples[i] = v;
  }
  return img;
}

void check_raster(const RasterImage& image, const fs::path& path) {
  if (image.width < 1 || image.height < 1) throw InvalidArgument(path.string() + ": empty image");
  if (image.channels != 1 && image.channels != 3) {
    throw InvalidArgument(path.string() + ": channels must be 1 or 3");
  }
  if (image.maxval < 1 || image.maxval > 65535) {
    throw InvalidArgument(path.string() + ": maxval must lie in [1, 65535]");
  }
  if (image.samples.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw InvalidArgument(path.string() + ": sample count does not match geometry");
  }
  for (std::uint16_t v : image.samples) {
    if (v > image.maxval) throw InvalidArgument(path.string() + ": sample exceeds maxval");
  }
}

// ---- PNG -------------------------------------------------------------------

struct PngError {
  std::string message;
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  err->message = msg != nullptr ? msg : "libpng error";
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

RasterImage read_png(const fs::path& path) {
  FilePtr file = open_file(path, "rb");
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (png == nullptr) throw FormatError(path.string() + ": libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError(path.string() + ": libpng initialisation failed");
  }
  RasterImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": " + err.message);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // samples arrive as little-endian byte pairs
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  img.maxval = out_depth == 16 ? 65535 : 255;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(img.height));
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (img.channels != 1 && img.channels != 3) {
    throw FormatError(path.string() + ": unsupported PNG channel layout");
  }
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.samples[i] = out_depth == 16
                         ? static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8))
                         : buffer[i];
  }
  return img;
}

}  // namespace

RasterImage read_raster(const fs::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError(path.string() + ": cannot open file");
  std::array<unsigned char, 8> sig{};
  probe.read(reinterpret_cast<char*>(sig.data()), sig.size());
  const auto got = static_cast<std::size_t>(probe.gcount());
  probe.close();
  if (got >= 2 && sig[0] == 'P' && sig[1] == '5') return read_pgm(path);
  if (got == 8 && png_sig_cmp(sig.data(), 0, 8) == 0) return read_png(path);
  throw FormatError(path.string() + ": unsupported image format (expected PNG or binary PGM)");
}

void write_pgm(const fs::path& path, const RasterImage& image) {
  check_raster(image, path);
  if (image.channels != 1) throw InvalidArgument(path.string() + ": PGM holds grey images only");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot open file for writing");
  out << "P5\n" << image.width << ' ' << image.height << '\n' << image.maxval << '\n';
  std::vector<unsigned char> raw;
  raw.reserve(image.samples.size() * 2);
  for (std::uint16_t v : image.samples) {
    if (image.maxval > 255) raw.push_back(static_cast<unsigned char>(v >> 8));
    raw.push_back(static_cast<unsigned char>(v & 0xff));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

void write_png(const fs::path& path, const RasterImage& image) {
  check_raster(image, path);
  const bool sixteen = image.maxval > 255;
  if (image.maxval != 255 && image.maxval != 65535) {
    throw InvalidArgument(path.string() + ": PNG needs maxval 255 or 65535");
  }
  FilePtr file = open_file(path, "wb");
  PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (png == nullptr) throw FormatError(path.string() + ": libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError(path.string() + ": libpng initialisation failed");
  }
  const std::size_t rowbytes =
      static_cast<std::size_t>(image.width) * image.channels * (sixteen ? 2 : 1);
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(image.height));
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (sixteen) {
      buffer[2 * i] = static_cast<unsigned char>(image.samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(image.samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(image.samples[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * y;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError(path.string() + ": " + err.message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), sixteen ? 16 : 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImagePlanes load_image(const fs::path& path, ColorMode mode) {
  const RasterImage img = read_raster(path);
  const double scale = 1.0 / img.maxval;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  auto sample = [&](std::size_t i, int c) {
    return img.samples[i * static_cast<std::size_t>(img.channels) + static_cast<std::size_t>(c)] *
           scale;
  };
  if (mode == ColorMode::luminance) {
    ScalarGrid plane(img.width, img.height);
    auto v = plane.values();
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = img.channels == 1
                 ? sample(i, 0)
                 : std::clamp(0.299 * sample(i, 0) + 0.587 * sample(i, 1) + 0.114 * sample(i, 2),
                              0.0, 1.0);
    }
    return {std::move(plane)};
  }
  ImagePlanes planes;
  for (int c = 0; c < 3; ++c) {
    ScalarGrid plane(img.width, img.height);
    auto v = plane.values();
    const int src = img.channels == 1 ? 0 : c;
    for (std::size_t i = 0; i < n; ++i) v[i] = sample(i, src);
    planes.push_back(std::move(plane));
  }
  return planes;
}

BinaryMask load_mask(const fs::path& path) {
  const RasterImage img = read_raster(path);
  BinaryMask mask(img.width, img.height, 0);
  auto v = mask.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (int c = 0; c < img.channels; ++c) {
      if (img.samples[i * static_cast<std::size_t>(img.channels) + static_cast<std::size_t>(c)] != 0) {
        v[i] = 1;
      }
    }
  }
  return mask;
}

void save_grey_pgm(const fs::path& path, const ScalarGrid& grid) {
  RasterImage img{grid.width(), grid.height(), 1, 255, {}};
  img.samples.reserve(grid.size());
  for (double v : grid.values()) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    img.samples.push_back(static_cast<std::uint16_t>(std::lround(c * 255.0)));
  }
  write_pgm(path, img);
}

void save_mask_pgm(const fs::path& path, const BinaryMask& mask) {
  RasterImage img{mask.width(), mask.height(), 1, 255, {}};
  img.samples.reserve(mask.size());
  for (std::uint8_t v : mask.values()) img.samples.push_back(v != 0 ? 255 : 0);
  write_pgm(path, img);
}

}  // namespace scd2te
