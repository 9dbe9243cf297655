#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "scd2te/grid.hpp"

namespace scd2te {

/// Boundary pixel coordinates in raster order.
using BoundarySet = std::vector<Pixel>;

/// |P & R| / |P | R|. Throws UndefinedMetric if both masks are empty.
double jaccard(const BinaryMask& predicted, const BinaryMask& reference);

/// 2|P & R| / (|P| + |R|). Throws UndefinedMetric if both masks are empty.
double f1(const BinaryMask& predicted, const BinaryMask& reference);

/// Mask pixels with at least one 4-neighbour outside the mask or off-image.
BoundarySet boundary(const BinaryMask& mask);

/// Average of the two mean nearest-boundary Euclidean distances, in pixels.
/// Throws UndefinedMetric if either boundary is empty.
double abd(const BinaryMask& predicted, const BinaryMask& reference);

/// 4-connected component labelling; ids are assigned in raster order of each
/// component's first pixel.
LabelMap label_components(const BinaryMask& mask);
int component_count(const LabelMap& labels);

/// Object-level overlap. Each reference component is paired with at most one
/// predicted component, greedily by descending intersection size (ties: lower
/// reference id, then lower predicted id). With I the matched intersection
/// total, OV = 2I / (2I + FN + FP) where FN = |R| - I and FP = |P| - I.
/// Throws UndefinedMetric if both maps are empty.
double overlap(const LabelMap& predicted, const LabelMap& reference);

/// Reference components matched one-to-one (greedy by IoU) to a predicted
/// component with IoU >= iou_threshold.
std::size_t count_matched_nuclei(const LabelMap& predicted, const LabelMap& reference,
                                 double iou_threshold = 0.5);

struct ImageMetrics {
  double ji = 0.0;
  double f1 = 0.0;
  double abd = 0.0;
  double ov = 0.0;
};

/// All four metrics for one mask pair; undefined metrics come back as NaN.
ImageMetrics evaluate_masks(const BinaryMask& predicted, const BinaryMask& reference);

struct MetricsRow {
  std::string image;
  std::string organ;
  ImageMetrics metrics;
};

enum class TestGroup { same, different };

struct MetricsReport {
  struct Entry {
    MetricsRow row;
    TestGroup group = TestGroup::same;
  };
  std::vector<Entry> per_image;

  /// Mean of the defined (non-NaN) values per metric; NaN if none.
  ImageMetrics aggregate(const TestGroup* group) const;

  /// Header `image,organ,ji,f1,abd,ov`, one row per image, then the
  /// `__same__`, `__different__` and `__overall__` aggregate rows.
  void write_csv(std::ostream& out) const;
};

}  // namespace scd2te
