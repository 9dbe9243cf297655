#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <numeric>

#include "scd2te/csc.hpp"
#include "scd2te/parallel.hpp"
#include "scd2te/rng.hpp"

namespace scd2te {
namespace {

constexpr int kMaxBacktracks = 6;
constexpr double kUnusedFraction = 1e-2;
constexpr double kDuplicateCosine = 0.9;
constexpr int kDuplicateShift = 2;

ScalarGrid crop(const ScalarGrid& image, int x0, int y0, int side) {
  ScalarGrid out(side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) out(x, y) = image(x0 + x, y0 + y);
  }
  return out;
}

std::vector<ScalarGrid> draw_windows(std::span<const ScalarGrid> images, int side, int count,
                                     Rng& rng) {
  std::vector<ScalarGrid> windows;
  windows.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const ScalarGrid& img = images[rng.uniform_index(images.size())];
    const int x0 = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(img.width() - side + 1)));
    const int y0 = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(img.height() - side + 1)));
    windows.push_back(crop(img, x0, y0, side));
  }
  return windows;
}

bool is_constant(const ScalarGrid& g) {
  const auto [lo, hi] = std::minmax_element(g.values().begin(), g.values().end());
  return *hi - *lo < 1e-12;
}

// Shifts each atom by whole pixels (zero fill) so that its energy centroid
// lies within half a pixel of the filter centre. Returns false if no atom moved.
bool recentre(std::vector<double>& atoms, int side, int count) {
  const int d = side * side;
  const int h = side / 2;
  bool moved = false;
  for (int j = 0; j < count; ++j) {
    double* a = atoms.data() + static_cast<std::size_t>(j) * d;
    double mass = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const double e = a[y * side + x] * a[y * side + x];
        mass += e;
        cx += e * x;
        cy += e * y;
      }
    }
    if (!(mass > 0.0)) continue;
    const int sx = static_cast<int>(std::lround(cx / mass)) - h;
    const int sy = static_cast<int>(std::lround(cy / mass)) - h;
    if (sx == 0 && sy == 0) continue;
    std::vector<double> shifted(static_cast<std::size_t>(d), 0.0);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const int src_x = x + sx;
        const int src_y = y + sy;
        if (src_x >= 0 && src_y >= 0 && src_x < side && src_y < side) {
          shifted[static_cast<std::size_t>(y * side + x)] = a[src_y * side + src_x];
        }
      }
    }
    std::copy(shifted.begin(), shifted.end(), a);
    moved = true;
  }
  return moved;
}

// Largest |correlation| of two atoms over whole-pixel shifts up to
// kDuplicateShift (zero fill).
double shifted_similarity(std::span<const double> a, std::span<const double> b, int side) {
  const int reach = std::min(kDuplicateShift, side - 1);
  double best = 0.0;
  for (int sy = -reach; sy <= reach; ++sy) {
    for (int sx = -reach; sx <= reach; ++sx) {
      double c = 0.0;
      for (int y = std::max(0, -sy); y < std::min(side, side - sy); ++y) {
        for (int x = std::max(0, -sx); x < std::min(side, side - sx); ++x) {
          c += a[static_cast<std::size_t>(y * side + x)] *
               b[static_cast<std::size_t>((y + sy) * side + x + sx)];
        }
      }
      best = std::max(best, std::abs(c));
    }
  }
  return best;
}

// Mean coding objective over a window set with the dictionary fixed.
double mean_objective(std::span<const ScalarGrid> windows, const LocalDictionary& dict,
                      const SparseCodingConfig& cfg) {
  std::vector<double> per(windows.size());
  for (std::size_t k = 0; k < windows.size(); ++k) {
    EncodeTrace trace;
    encode(windows[k], dict, cfg, &trace);
    per[k] = trace.objective.back();
  }
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

}  // namespace

DictionaryLearningResult learn_dictionary(std::span<const ScalarGrid> images, int atom_count,
                                          int filter_side, const SparseCodingConfig& cfg) {
  if (images.empty()) throw InvalidArgument("dictionary learning needs at least one image");
  if (atom_count < 1) throw InvalidArgument("atom_count must be >= 1");
  if (filter_side < 1 || filter_side % 2 == 0) {
    throw InvalidArgument("filter side must be odd and positive");
  }
  cfg.validate(atom_count);

  int min_dim = std::numeric_limits<int>::max();
  bool all_constant = true;
  for (const ScalarGrid& img : images) {
    require_finite(img, "training image");
    min_dim = std::min({min_dim, img.width(), img.height()});
    all_constant = all_constant && is_constant(img);
  }
  if (filter_side > min_dim) {
    throw InvalidArgument("filter side " + std::to_string(filter_side) +
                          " exceeds the smallest training image dimension");
  }
  const int window = std::min(3 * filter_side, min_dim);
  const int d = filter_side * filter_side;

  // Inner coding runs without the sparsity ceiling so the objective is a
  // fixed function of the dictionary.
  SparseCodingConfig inner = cfg;
  inner.sparsity_ceiling = 1.0;

  Rng rng(derive_seed(cfg.seed, 0x64696374));  // "dict"
  Rng heldout_rng(derive_seed(cfg.seed, 0x686f6c64));  // "hold"

  // Initial atoms: normalised training patches.
  std::vector<double> atoms(static_cast<std::size_t>(d) * atom_count);
  for (int j = 0; j < atom_count; ++j) {
    const ScalarGrid& img = images[rng.uniform_index(images.size())];
    const Pixel centre{static_cast<int>(rng.uniform_index(static_cast<std::size_t>(img.width()))),
                       static_cast<int>(rng.uniform_index(static_cast<std::size_t>(img.height())))};
    auto patch = extract_patch(img, centre, filter_side);
    double sq = 0.0;
    for (double v : patch) sq += v * v;
    if (sq < 1e-20) {
      for (double& v : patch) v = rng.normal();
    }
    std::copy(patch.begin(), patch.end(), atoms.begin() + static_cast<std::ptrdiff_t>(j) * d);
  }
  recentre(atoms, filter_side, atom_count);
  LocalDictionary dict = LocalDictionary::normalized(filter_side, atom_count, std::move(atoms));

  const int heldout_count = std::max(4, cfg.patches_per_epoch / 2);
  const auto heldout = draw_windows(images, window, heldout_count, heldout_rng);

  DictionaryLearningResult result;
  if (all_constant) {
    result.degenerate_input = true;
    result.warning = "all training images are constant; dictionary carries no structure";
  }
  double current = mean_objective(heldout, dict, inner);
  result.objective_trace.push_back(current);

  for (int epoch = 1; epoch <= cfg.dict_epochs; ++epoch) {
    const auto batch = draw_windows(images, window, cfg.patches_per_epoch, rng);

    // Per window: the reconstruction gradient -sum_i a_ij E_i r of every
    // atom, followed by the curvature sum_i a_ij^2.
    const std::size_t block = static_cast<std::size_t>(d + 1) * atom_count;
    std::vector<std::vector<double>> partial(batch.size());
    std::vector<std::pair<double, std::vector<double>>> worst(batch.size());
    parallel_for(batch.size(), [&](std::size_t k) {
      std::vector<double> g(block, 0.0);
      double* curv = g.data() + static_cast<std::size_t>(d) * atom_count;
      const FeatureMaps codes = encode(batch[k], dict, inner);
      ScalarGrid residual = reconstruct(codes, dict);
      {
        auto r = residual.values();
        const auto x = batch[k].values();
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] - r[i];
      }
      // Highest-energy residual window, a replacement for a wasted atom.
      for (int y = 0; y < window; ++y) {
        for (int x = 0; x < window; ++x) {
          auto patch = extract_patch(residual, {x, y}, filter_side);
          double e = 0.0;
          for (double v : patch) e += v * v;
          if (e > worst[k].first) worst[k] = {e, std::move(patch)};
        }
      }
      for (int y = 0; y < window; ++y) {
        for (int x = 0; x < window; ++x) {
          const auto a = codes.pixel(x, y);
          bool any = false;
          for (int j = 0; j < atom_count && !any; ++j) any = a[j] != 0.0;
          if (!any) continue;
          const auto patch = extract_patch(residual, {x, y}, filter_side);
          for (int j = 0; j < atom_count; ++j) {
            if (a[j] == 0.0) continue;
            double* gj = g.data() + static_cast<std::size_t>(j) * d;
            for (int p = 0; p < d; ++p) gj[p] -= a[j] * patch[p];
            curv[j] += a[j] * a[j];
          }
        }
      }
      partial[k] = std::move(g);
    });
    std::vector<double> grad(block, 0.0);
    for (const auto& g : partial) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
    const double* curv = grad.data() + static_cast<std::size_t>(d) * atom_count;

    // Per-atom Newton direction on the tangent space of the unit sphere:
    // the radial component is dropped and the rest divided by the atom's
    // curvature. Atoms no window used stay put.
    std::vector<double> direction(static_cast<std::size_t>(d) * atom_count, 0.0);
    bool moved = false;
    for (int j = 0; j < atom_count; ++j) {
      if (!(curv[j] > 1e-12)) continue;
      const auto atom = dict.atom(j);
      const double* gj = grad.data() + static_cast<std::size_t>(j) * d;
      double* dj = direction.data() + static_cast<std::size_t>(j) * d;
      const double radial = std::inner_product(atom.begin(), atom.end(), gj, 0.0);
      for (int p = 0; p < d; ++p) {
        dj[p] = (gj[p] - radial * atom[p]) / curv[j];
        moved = moved || dj[p] != 0.0;
      }
    }
    // Atoms that are unused or near copies of a busier atom.
    std::vector<int> wasted;
    {
      const double busiest = *std::max_element(curv, curv + atom_count);
      for (int j = 0; j < atom_count; ++j) {
        bool waste = !(curv[j] > kUnusedFraction * busiest);
        for (int i = 0; i < atom_count && !waste; ++i) {
          waste = i != j && (curv[i] > curv[j] || (curv[i] == curv[j] && i < j)) &&
                  shifted_similarity(dict.atom(i), dict.atom(j), filter_side) > kDuplicateCosine;
        }
        if (waste) wasted.push_back(j);
      }
      // Otherwise atoms take turns being offered for reseeding.
      if (wasted.empty()) wasted.push_back((epoch - 1) % atom_count);
    }
    std::stable_sort(worst.begin(), worst.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    while (!worst.empty() && !(worst.back().first > 0.0)) worst.pop_back();
    if (worst.size() < wasted.size()) wasted.resize(worst.size());

    if (moved || !wasted.empty()) {
      double step = cfg.step_size;
      // Each step length is tried with wasted atoms reseeded from the worst
      // residual windows, then with atoms recentred, then as is.
      bool accepted = false;
      for (int attempt = 0; attempt <= kMaxBacktracks && !accepted; ++attempt, step *= 0.5) {
        std::vector<double> next = dict.atoms();
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= step * direction[i];
        std::vector<std::vector<double>> tries;
        if (!wasted.empty()) {
          std::vector<double> reseeded = next;
          for (std::size_t w = 0; w < wasted.size(); ++w) {
            std::copy(worst[w].second.begin(), worst[w].second.end(),
                      reseeded.begin() + static_cast<std::ptrdiff_t>(wasted[w]) * d);
          }
          recentre(reseeded, filter_side, atom_count);
          tries.push_back(std::move(reseeded));
        }
        std::vector<double> centred = next;
        if (recentre(centred, filter_side, atom_count)) tries.push_back(std::move(centred));
        tries.push_back(std::move(next));
        for (auto& atoms : tries) {
          LocalDictionary candidate =
              LocalDictionary::normalized(filter_side, atom_count, std::move(atoms));
          const double value = mean_objective(heldout, candidate, inner);
          if (value <= current) {
            dict = std::move(candidate);
            current = value;
            accepted = true;
            break;
          }
        }
      }
    }
    result.objective_trace.push_back(current);
  }

  result.dictionary = std::move(dict);
  return result;
}

}  // namespace scd2te
