#pragma once

#include <cstdint>
#include <vector>

#include "scd2te/grid.hpp"

namespace scd2te {

/// Stained-tissue look-alike: dark textured elliptical nuclei on an uneven
/// bright background, with dark fibres and specks as clutter.
struct SyntheticConfig {
  int width = 200;
  int height = 200;
  int nuclei_min = 12;
  int nuclei_max = 20;
  double radius_min = 6.0;
  double radius_max = 11.0;
  /// Share of nuclei drawn with a dark rim, pale interior and a nucleolus.
  double vesicular_fraction = 0.5;
  int fibres = 6;
  int specks = 25;
  double noise = 0.06;
  std::uint64_t seed = 42;
};

struct SyntheticSample {
  ScalarGrid image;
  BinaryMask mask;
  int nuclei = 0;
};

/// Image `index` of the corpus defined by cfg; independent of other indices.
SyntheticSample generate_synthetic(const SyntheticConfig& cfg, int index);

std::vector<SyntheticSample> synthetic_corpus(const SyntheticConfig& cfg, int count, int first_index = 0);

}  // namespace scd2te
