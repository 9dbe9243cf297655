#include "scd2te/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "scd2te/error.hpp"

namespace scd2te {
namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) {
    throw InvalidArgument("mask geometry differs: " + std::to_string(a.width()) + "x" +
                          std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                          std::to_string(b.height()));
  }
}

struct Counts {
  std::size_t p = 0;
  std::size_t r = 0;
  std::size_t both = 0;
};

Counts count(const BinaryMask& predicted, const BinaryMask& reference) {
  require_same_shape(predicted, reference);
  Counts c;
  const auto p = predicted.values();
  const auto r = reference.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool in_p = p[i] != 0;
    const bool in_r = r[i] != 0;
    c.p += in_p;
    c.r += in_r;
    c.both += in_p && in_r;
  }
  return c;
}

// Exact squared Euclidean distance transform to the nonzero sites
// (separable lower-envelope algorithm of Felzenszwalb and Huttenlocher).
std::vector<double> squared_distance_to(const BoundarySet& sites, int width, int height) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(static_cast<std::size_t>(width) * height, inf);
  for (const Pixel& s : sites) f[static_cast<std::size_t>(s.y) * width + s.x] = 0.0;

  auto transform_1d = [](std::vector<double>& line) {
    const int n = static_cast<int>(line.size());
    std::vector<double> d(n);
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
      if (line[q] == inf) continue;
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      double s;
      while (true) {
        const int p = v[k];
        s = ((line[q] + double(q) * q) - (line[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
        if (s <= z[k] && k > 0) {
          --k;
        } else {
          break;
        }
      }
      if (s <= z[k]) {
        // k == 0 and the new parabola dominates everywhere.
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
    if (k < 0) return;  // no finite sites on this line
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      const double dq = q - v[j];
      d[q] = dq * dq + line[v[j]];
    }
    line = std::move(d);
  };

  std::vector<double> line;
  for (int x = 0; x < width; ++x) {
    line.resize(height);
    for (int y = 0; y < height; ++y) line[y] = f[static_cast<std::size_t>(y) * width + x];
    transform_1d(line);
    for (int y = 0; y < height; ++y) f[static_cast<std::size_t>(y) * width + x] = line[y];
  }
  for (int y = 0; y < height; ++y) {
    line.assign(f.begin() + static_cast<std::ptrdiff_t>(y) * width,
                f.begin() + static_cast<std::ptrdiff_t>(y + 1) * width);
    transform_1d(line);
    std::copy(line.begin(), line.end(), f.begin() + static_cast<std::ptrdiff_t>(y) * width);
  }
  return f;
}

double mean_distance(const BoundarySet& from, const std::vector<double>& sq_dist, int width) {
  double sum = 0.0;
  for (const Pixel& p : from) sum += std::sqrt(sq_dist[static_cast<std::size_t>(p.y) * width + p.x]);
  return sum / static_cast<double>(from.size());
}

// Intersection sizes keyed by (reference id, predicted id), plus component sizes.
struct ComponentOverlap {
  std::map<std::pair<int, int>, std::size_t> intersections;
  std::vector<std::size_t> ref_sizes;
  std::vector<std::size_t> pred_sizes;
};

ComponentOverlap component_overlap(const LabelMap& predicted, const LabelMap& reference) {
  if (!predicted.same_shape(reference)) throw InvalidArgument("label map geometry differs");
  ComponentOverlap o;
  o.ref_sizes.assign(static_cast<std::size_t>(component_count(reference)) + 1, 0);
  o.pred_sizes.assign(static_cast<std::size_t>(component_count(predicted)) + 1, 0);
  const auto p = predicted.values();
  const auto r = reference.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || r[i] < 0) throw InvalidArgument("label maps must be non-negative");
    if (p[i] > 0) ++o.pred_sizes[static_cast<std::size_t>(p[i])];
    if (r[i] > 0) ++o.ref_sizes[static_cast<std::size_t>(r[i])];
    if (p[i] > 0 && r[i] > 0) ++o.intersections[{r[i], p[i]}];
  }
  return o;
}

}  // namespace

double jaccard(const BinaryMask& predicted, const BinaryMask& reference) {
  const Counts c = count(predicted, reference);
  const std::size_t uni = c.p + c.r - c.both;
  if (uni == 0) throw UndefinedMetric("jaccard undefined: both masks are empty");
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

double f1(const BinaryMask& predicted, const BinaryMask& reference) {
  const Counts c = count(predicted, reference);
  if (c.p + c.r == 0) throw UndefinedMetric("f1 undefined: both masks are empty");
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.p + c.r);
}

BoundarySet boundary(const BinaryMask& mask) {
  BoundarySet out;
  const int w = mask.width();
  const int h = mask.height();
  auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && mask(x, y) != 0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(x, y) == 0) continue;
      if (!inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1)) {
        out.push_back({x, y});
      }
    }
  }
  return out;
}

double abd(const BinaryMask& predicted, const BinaryMask& reference) {
  require_same_shape(predicted, reference);
  const BoundarySet pb = boundary(predicted);
  const BoundarySet rb = boundary(reference);
  if (pb.empty() || rb.empty()) throw UndefinedMetric("abd undefined: a boundary set is empty");
  const int w = predicted.width();
  const int h = predicted.height();
  const auto to_r = squared_distance_to(rb, w, h);
  const auto to_p = squared_distance_to(pb, w, h);
  return 0.5 * (mean_distance(pb, to_r, w) + mean_distance(rb, to_p, w));
}

LabelMap label_components(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  LabelMap labels(w, h, 0);
  std::int32_t next = 0;
  std::vector<Pixel> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(x, y) == 0 || labels(x, y) != 0) continue;
      ++next;
      labels(x, y) = next;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        const Pixel nbrs[4] = {{p.x - 1, p.y}, {p.x + 1, p.y}, {p.x, p.y - 1}, {p.x, p.y + 1}};
        for (const Pixel& q : nbrs) {
          if (q.x < 0 || q.y < 0 || q.x >= w || q.y >= h) continue;
          if (mask(q.x, q.y) == 0 || labels(q.x, q.y) != 0) continue;
          labels(q.x, q.y) = next;
          stack.push_back(q);
        }
      }
    }
  }
  return labels;
}

int component_count(const LabelMap& labels) {
  std::int32_t m = 0;
  for (std::int32_t v : labels.values()) m = std::max(m, v);
  return m;
}

double overlap(const LabelMap& predicted, const LabelMap& reference) {
  const ComponentOverlap o = component_overlap(predicted, reference);
  std::size_t total_p = 0;
  std::size_t total_r = 0;
  for (std::size_t s : o.pred_sizes) total_p += s;
  for (std::size_t s : o.ref_sizes) total_r += s;
  if (total_p + total_r == 0) throw UndefinedMetric("overlap undefined: both maps are empty");

  std::vector<std::tuple<std::size_t, int, int>> pairs;
  for (const auto& [key, inter] : o.intersections) pairs.emplace_back(inter, key.first, key.second);
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<bool> ref_used(o.ref_sizes.size(), false);
  std::vector<bool> pred_used(o.pred_sizes.size(), false);
  std::size_t matched = 0;
  for (const auto& [inter, r, p] : pairs) {
    if (ref_used[static_cast<std::size_t>(r)] || pred_used[static_cast<std::size_t>(p)]) continue;
    ref_used[static_cast<std::size_t>(r)] = true;
    pred_used[static_cast<std::size_t>(p)] = true;
    matched += inter;
  }
  const double i = static_cast<double>(matched);
  const double fn = static_cast<double>(total_r) - i;
  const double fp = static_cast<double>(total_p) - i;
  return 2.0 * i / (2.0 * i + fn + fp);
}

std::size_t count_matched_nuclei(const LabelMap& predicted, const LabelMap& reference,
                                 double iou_threshold) {
  const ComponentOverlap o = component_overlap(predicted, reference);
  std::vector<std::tuple<double, int, int>> pairs;
  for (const auto& [key, inter] : o.intersections) {
    const double uni = static_cast<double>(o.ref_sizes[static_cast<std::size_t>(key.first)] +
                                           o.pred_sizes[static_cast<std::size_t>(key.second)] -
                                           inter);
    const double iou = static_cast<double>(inter) / uni;
    if (iou >= iou_threshold) pairs.emplace_back(iou, key.first, key.second);
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<bool> ref_used(o.ref_sizes.size(), false);
  std::vector<bool> pred_used(o.pred_sizes.size(), false);
  std::size_t matched = 0;
  for (const auto& [iou, r, p] : pairs) {
    if (ref_used[static_cast<std::size_t>(r)] || pred_used[static_cast<std::size_t>(p)]) continue;
    ref_used[static_cast<std::size_t>(r)] = true;
    pred_used[static_cast<std::size_t>(p)] = true;
    ++matched;
  }
  return matched;
}

ImageMetrics evaluate_masks(const BinaryMask& predicted, const BinaryMask& reference) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  require_same_shape(predicted, reference);
  ImageMetrics m{nan, nan, nan, nan};
  try {
    m.ji = jaccard(predicted, reference);
    m.f1 = f1(predicted, reference);
    m.ov = overlap(label_components(predicted), label_components(reference));
  } catch (const UndefinedMetric&) {
  }
  try {
    m.abd = abd(predicted, reference);
  } catch (const UndefinedMetric&) {
  }
  return m;
}

ImageMetrics MetricsReport::aggregate(const TestGroup* group) const {
  double sums[4] = {0, 0, 0, 0};
  int counts[4] = {0, 0, 0, 0};
  for (const Entry& e : per_image) {
    if (group != nullptr && e.group != *group) continue;
    const double v[4] = {e.row.metrics.ji, e.row.metrics.f1, e.row.metrics.abd, e.row.metrics.ov};
    for (int k = 0; k < 4; ++k) {
      if (std::isnan(v[k])) continue;
      sums[k] += v[k];
      ++counts[k];
    }
  }
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  auto mean = [&](int k) { return counts[k] > 0 ? sums[k] / counts[k] : nan; };
  return {mean(0), mean(1), mean(2), mean(3)};
}

void MetricsReport::write_csv(std::ostream& out) const {
  auto value = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  auto line = [&](const std::string& image, const std::string& organ, const ImageMetrics& m) {
    out << image << ',' << organ << ',' << value(m.ji) << ',' << value(m.f1) << ','
        << value(m.abd) << ',' << value(m.ov) << '\n';
  };
  out << "image,organ,ji,f1,abd,ov\n";
  for (const Entry& e : per_image) line(e.row.image, e.row.organ, e.row.metrics);
  const TestGroup same = TestGroup::same;
  const TestGroup different = TestGroup::different;
  line("__same__", "", aggregate(&same));
  line("__different__", "", aggregate(&different));
  line("__overall__", "", aggregate(nullptr));
}

}  // namespace scd2te
