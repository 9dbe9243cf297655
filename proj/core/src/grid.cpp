#include "scd2te/grid.hpp"

#include <cmath>

namespace scd2te {

int reflect_index(int i, int n) noexcept {
  if (n <= 1) return 0;
  const int period = 2 * (n - 1);
  int r = i % period;
  if (r < 0) r += period;
  return r < n ? r : period - r;
}

void require_finite(const ScalarGrid& grid, const char* what) {
  for (double v : grid.values()) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + " contains non-finite values");
  }
}

void require_unit_range(const ScalarGrid& grid, const char* what) {
  for (double v : grid.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidInput(std::string(what) + " has values outside [0,1]");
    }
  }
}

BinaryMask threshold_grid(const ScalarGrid& grid, double threshold) {
  BinaryMask mask(grid.width(), grid.height());
  auto in = grid.values();
  auto out = mask.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= threshold ? 1 : 0;
  return mask;
}

}  // namespace scd2te
