#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scd2te/error.hpp"

namespace scd2te {

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Row-major 2D grid. Width is the x extent, height the y extent.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw InvalidArgument("grid dimensions must be non-negative");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  Grid(int width, int height, std::vector<T> values)
      : width_(width), height_(height), data_(std::move(values)) {
    if (width < 0 || height < 0) throw InvalidArgument("grid dimensions must be non-negative");
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw InvalidArgument("grid value count does not match " + std::to_string(width) + "x" +
                            std::to_string(height));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }

  T& at(int x, int y) {
    check(x, y);
    return data_[index(x, y)];
  }
  const T& at(int x, int y) const {
    check(x, y);
    return data_[index(x, y)];
  }

  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  void check(int x, int y) const {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) {
      throw InvalidArgument("pixel (" + std::to_string(x) + "," + std::to_string(y) +
                            ") outside " + std::to_string(width_) + "x" +
                            std::to_string(height_) + " grid");
    }
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Real-valued grid. Images hold values in [0,1]; score maps are unbounded.
using ScalarGrid = Grid<double>;
using Image = ScalarGrid;
using ScoreMap = ScalarGrid;
/// Foreground = 1, background = 0.
using BinaryMask = Grid<std::uint8_t>;
/// 0 = background, 1..n = component id.
using LabelMap = Grid<std::int32_t>;

/// Mirror an index into [0, n) without repeating the edge sample
/// (-1 -> 1, n -> n-2). Periodic for offsets beyond one reflection.
int reflect_index(int i, int n) noexcept;

/// Throws InvalidInput if any value is NaN or infinite.
void require_finite(const ScalarGrid& grid, const char* what);

/// Throws InvalidInput unless every value lies in [0,1].
void require_unit_range(const ScalarGrid& grid, const char* what);

/// (value >= threshold) per pixel.
BinaryMask threshold_grid(const ScalarGrid& grid, double threshold);

}  // namespace scd2te
