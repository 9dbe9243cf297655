#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "scd2te/metrics.hpp"

namespace scd2te {
namespace {

using testing::random_mask;

BinaryMask rect(int w, int h, int x0, int y0, int x1, int y1) {
  BinaryMask m(w, h, 0);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) m(x, y) = 1;
  }
  return m;
}

BinaryMask blobs(int w, int h, int count, std::mt19937_64& gen) {
  BinaryMask m(w, h, 0);
  std::uniform_int_distribution<int> px(0, w - 1);
  std::uniform_int_distribution<int> py(0, h - 1);
  std::uniform_int_distribution<int> rad(1, 3);
  for (int k = 0; k < count; ++k) {
    const int cx = px(gen);
    const int cy = py(gen);
    const int r = rad(gen);
    for (int y = std::max(0, cy - r); y <= std::min(h - 1, cy + r); ++y) {
      for (int x = std::max(0, cx - r); x <= std::min(w - 1, cx + r); ++x) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m(x, y) = 1;
      }
    }
  }
  return m;
}

// OV from a pixel-count intersection table and greedy pairing by
// descending intersection (lower reference id, then lower predicted id).
double overlap_oracle(const LabelMap& p, const LabelMap& r) {
  std::map<std::pair<int, int>, long> inter;
  long np = 0;
  long nr = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    np += p.values()[i] != 0;
    nr += r.values()[i] != 0;
    if (p.values()[i] != 0 && r.values()[i] != 0) ++inter[{r.values()[i], p.values()[i]}];
  }
  std::map<int, bool> ref_used;
  std::map<int, bool> pred_used;
  long matched = 0;
  while (true) {
    long best = 0;
    std::pair<int, int> key{0, 0};
    for (const auto& [k, v] : inter) {
      if (ref_used[k.first] || pred_used[k.second]) continue;
      if (v > best) {
        best = v;
        key = k;
      }
    }
    if (best == 0) break;
    ref_used[key.first] = true;
    pred_used[key.second] = true;
    matched += best;
  }
  const double fn = static_cast<double>(nr - matched);
  const double fp = static_cast<double>(np - matched);
  return 2.0 * matched / (2.0 * matched + fn + fp);
}

TEST(Metrics, F1IsMonotoneInJaccard) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const BinaryMask p = random_mask(12, 9, 0.3, gen);
    const BinaryMask r = random_mask(12, 9, 0.4, gen);
    const double ji = jaccard(p, r);
    EXPECT_NEAR(f1(p, r), 2.0 * ji / (1.0 + ji), 1e-12);
  }
}

TEST(Metrics, PerfectAndDisjoint) {
  const BinaryMask a = rect(10, 10, 2, 2, 6, 6);
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(f1(a, a), 1.0);
  EXPECT_EQ(abd(a, a), 0.0);
  EXPECT_EQ(overlap(label_components(a), label_components(a)), 1.0);
  const BinaryMask b = rect(10, 10, 7, 7, 9, 9);
  EXPECT_EQ(jaccard(a, b), 0.0);
  EXPECT_EQ(f1(a, b), 0.0);
  EXPECT_EQ(overlap(label_components(a), label_components(b)), 0.0);
}

TEST(Metrics, UndefinedCases) {
  const BinaryMask empty(6, 6, 0);
  const BinaryMask some = rect(6, 6, 1, 1, 3, 3);
  EXPECT_THROW(jaccard(empty, empty), UndefinedMetric);
  EXPECT_THROW(f1(empty, empty), UndefinedMetric);
  EXPECT_THROW(abd(empty, some), UndefinedMetric);
  EXPECT_THROW(overlap(label_components(empty), label_components(empty)), UndefinedMetric);
  EXPECT_THROW(jaccard(some, BinaryMask(5, 6, 0)), InvalidArgument);
  const ImageMetrics m = evaluate_masks(empty, empty);
  EXPECT_TRUE(std::isnan(m.ji) && std::isnan(m.f1) && std::isnan(m.abd) && std::isnan(m.ov));
}

TEST(Metrics, BoundaryIsInnerFourConnected) {
  const BinaryMask a = rect(8, 8, 1, 1, 5, 5);
  const auto b = boundary(a);
  EXPECT_EQ(b.size(), 12u);
  EXPECT_EQ(b, oracle::inner_boundary(a));
  const BinaryMask full(3, 3, 1);
  EXPECT_EQ(boundary(full).size(), 8u);
}

TEST(Metrics, AbdMatchesAllPairsOracle) {
  std::mt19937_64 gen(2);
  int checked = 0;
  while (checked < 100) {
    const BinaryMask p = random_mask(14, 11, 0.35, gen);
    const BinaryMask r = blobs(14, 11, 3, gen);
    if (boundary(p).empty() || boundary(r).empty()) continue;
    EXPECT_NEAR(abd(p, r), oracle::abd_all_pairs(p, r), 1e-9);
    EXPECT_EQ(abd(p, r), abd(r, p));
    ++checked;
  }
}

TEST(Metrics, AbdShiftedSquare) {
  const BinaryMask a = rect(20, 20, 4, 4, 10, 10);
  const BinaryMask b = rect(20, 20, 6, 4, 12, 10);
  EXPECT_NEAR(abd(a, b), oracle::abd_all_pairs(a, b), 1e-12);
  EXPECT_GT(abd(a, b), 0.0);
}

TEST(Metrics, LabelsMatchFloodFill) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask m = random_mask(15, 12, 0.45, gen);
    const LabelMap l = label_components(m);
    EXPECT_EQ(l, oracle::flood_labels(m));
    int max_id = 0;
    for (int v : l.values()) max_id = std::max(max_id, v);
    EXPECT_EQ(component_count(l), max_id);
  }
}

TEST(Metrics, DiagonalPixelsAreSeparateComponents) {
  BinaryMask m(3, 3, 0);
  m(0, 0) = 1;
  m(1, 1) = 1;
  EXPECT_EQ(component_count(label_components(m)), 2);
}

TEST(Metrics, OverlapMatchesOracle) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 300; ++trial) {
    const BinaryMask p = blobs(16, 16, 4, gen);
    const BinaryMask r = blobs(16, 16, 4, gen);
    const LabelMap lp = label_components(p);
    const LabelMap lr = label_components(r);
    const double got = overlap(lp, lr);
    EXPECT_NEAR(got, overlap_oracle(lp, lr), 1e-12);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(Metrics, OverlapPenalisesMerging) {
  // Two reference nuclei covered by one predicted blob: only one pairing counts.
  BinaryMask r(12, 5, 0);
  for (int x : {1, 2, 3, 7, 8, 9}) r(x, 2) = 1;
  BinaryMask p(12, 5, 0);
  for (int x = 1; x <= 9; ++x) p(x, 2) = 1;
  const double ov = overlap(label_components(p), label_components(r));
  EXPECT_NEAR(ov, 6.0 / (6.0 + 3.0 + 6.0), 1e-12);
  EXPECT_LT(ov, f1(p, r));
}

TEST(Metrics, CountMatchedNuclei) {
  const BinaryMask r = rect(20, 10, 1, 1, 5, 5);
  BinaryMask two = r;
  for (int y = 1; y < 5; ++y) {
    for (int x = 10; x < 14; ++x) two(x, y) = 1;
  }
  const BinaryMask shifted = rect(20, 10, 2, 1, 6, 5);  // IoU 12/20
  const BinaryMask far = rect(20, 10, 3, 1, 7, 5);      // IoU 8/24
  EXPECT_EQ(count_matched_nuclei(label_components(r), label_components(two)), 1u);
  EXPECT_EQ(count_matched_nuclei(label_components(two), label_components(two)), 2u);
  EXPECT_EQ(count_matched_nuclei(label_components(shifted), label_components(r)), 1u);
  EXPECT_EQ(count_matched_nuclei(label_components(far), label_components(r)), 0u);
  EXPECT_EQ(count_matched_nuclei(label_components(far), label_components(r), 0.3), 1u);
}

TEST(Metrics, ReportRowsAndAggregates) {
  MetricsReport report;
  const BinaryMask a = rect(8, 8, 1, 1, 4, 4);
  const BinaryMask b = rect(8, 8, 2, 1, 5, 4);
  report.per_image.push_back({{"a.pgm", "liver", evaluate_masks(a, a)}, TestGroup::same});
  report.per_image.push_back({{"b.pgm", "lung", evaluate_masks(b, a)}, TestGroup::different});
  report.per_image.push_back({{"c.pgm", "lung", evaluate_masks(BinaryMask(8, 8, 0), BinaryMask(8, 8, 0))},
                              TestGroup::different});
  std::ostringstream out;
  report.write_csv(out);
  std::istringstream in(out.str());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 1u + 3u + 3u);
  EXPECT_EQ(lines[0], "image,organ,ji,f1,abd,ov");
  EXPECT_EQ(lines[1], "a.pgm,liver,1,1,0,1");
  EXPECT_EQ(lines[3], "c.pgm,lung,nan,nan,nan,nan");
  EXPECT_EQ(lines[4].rfind("__same__,", 0), 0u);
  EXPECT_EQ(lines[5].rfind("__different__,", 0), 0u);
  EXPECT_EQ(lines[6].rfind("__overall__,", 0), 0u);

  const TestGroup diff = TestGroup::different;
  EXPECT_EQ(report.aggregate(&diff).ji, jaccard(b, a));
  EXPECT_NEAR(report.aggregate(nullptr).ji, 0.5 * (1.0 + jaccard(b, a)), 1e-15);
}

}  // namespace
}  // namespace scd2te
