#include "scd2te/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scd2te/error.hpp"
#include "scd2te/rng.hpp"

namespace scd2te {
namespace {

struct Ellipse {
  double cx, cy, a, b, theta;

  // Normalised radius: < 1 inside.
  double rho(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double u = (c * dx + s * dy) / a;
    const double v = (-s * dx + c * dy) / b;
    return std::sqrt(u * u + v * v);
  }
};

}  // namespace

SyntheticSample generate_synthetic(const SyntheticConfig& cfg, int index) {
  if (cfg.width < 16 || cfg.height < 16) throw InvalidArgument("synthetic images must be >= 16x16");
  if (cfg.nuclei_min < 0 || cfg.nuclei_max < cfg.nuclei_min) {
    throw InvalidArgument("invalid synthetic nucleus count range");
  }
  if (!(cfg.radius_min > 1.0) || cfg.radius_max < cfg.radius_min) {
    throw InvalidArgument("invalid synthetic radius range");
  }
  Rng rng(derive_seed(cfg.seed, 0x73796e74, static_cast<std::uint64_t>(index)));  // "synt"
  const int w = cfg.width;
  const int h = cfg.height;
  constexpr double pi = std::numbers::pi;

  // Uneven illumination from a few slow waves.
  ScalarGrid img(w, h);
  double wave[3][4];
  for (auto& p : wave) {
    p[0] = rng.uniform(0.01, 0.04);
    p[1] = rng.uniform(0.0, 2 * pi);
    p[2] = rng.uniform(0.0, 2 * pi);
    p[3] = rng.uniform(0.02, 0.05);
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.78;
      for (const auto& p : wave) v += p[3] * std::sin(p[0] * (x * std::cos(p[1]) + y * std::sin(p[1])) * 2 * pi + p[2]);
      img(x, y) = v;
    }
  }

  // Fibres: thin dark curved strokes.
  for (int f = 0; f < cfg.fibres; ++f) {
    double x = rng.uniform(0, w);
    double y = rng.uniform(0, h);
    double dir = rng.uniform(0, 2 * pi);
    const double width = rng.uniform(0.8, 1.6);
    const double depth = rng.uniform(0.25, 0.4);
    const int steps = static_cast<int>(rng.uniform(40, 90));
    for (int s = 0; s < steps; ++s) {
      dir += rng.uniform(-0.15, 0.15);
      x += std::cos(dir);
      y += std::sin(dir);
      const int r = static_cast<int>(std::ceil(width)) + 1;
      for (int yy = static_cast<int>(y) - r; yy <= static_cast<int>(y) + r; ++yy) {
        for (int xx = static_cast<int>(x) - r; xx <= static_cast<int>(x) + r; ++xx) {
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          const double d = std::hypot(xx - x, yy - y);
          if (d < width) img(xx, yy) = std::min(img(xx, yy), 0.78 - depth);
        }
      }
    }
  }

  // Nuclei: non-overlapping ellipses with granular chromatin texture.
  SyntheticSample out;
  out.mask = BinaryMask(w, h, 0);
  std::vector<Ellipse> placed;
  const int target = cfg.nuclei_min +
                     static_cast<int>(rng.uniform_index(static_cast<std::size_t>(cfg.nuclei_max - cfg.nuclei_min + 1)));
  for (int attempt = 0; attempt < 400 && static_cast<int>(placed.size()) < target; ++attempt) {
    const double a = rng.uniform(cfg.radius_min, cfg.radius_max);
    const double b = a * rng.uniform(0.6, 1.0);
    const Ellipse e{rng.uniform(a, w - a), rng.uniform(a, h - a), a, b, rng.uniform(0, pi)};
    bool clear = true;
    for (const Ellipse& o : placed) {
      if (std::hypot(e.cx - o.cx, e.cy - o.cy) < e.a + o.a + 3.0) {
        clear = false;
        break;
      }
    }
    if (clear) placed.push_back(e);
  }
  for (const Ellipse& e : placed) {
    const double base = rng.uniform(0.30, 0.42);
    const bool vesicular = rng.uniform() < cfg.vesicular_fraction;
    const double interior = rng.uniform(0.58, 0.68);
    const double rim = rng.uniform(0.65, 0.8);
    const double nx = e.cx + rng.uniform(-0.3, 0.3) * e.b;
    const double ny = e.cy + rng.uniform(-0.3, 0.3) * e.b;
    const double nr = rng.uniform(1.2, 2.2);
    const int x0 = std::max(0, static_cast<int>(e.cx - e.a - 2));
    const int x1 = std::min(w - 1, static_cast<int>(e.cx + e.a + 2));
    const int y0 = std::max(0, static_cast<int>(e.cy - e.a - 2));
    const int y1 = std::min(h - 1, static_cast<int>(e.cy + e.a + 2));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double r = e.rho(x, y);
        if (r >= 1.0) continue;
        out.mask(x, y) = 1;
        double v;
        if (vesicular) {
          // Chromatin pushed to the membrane; pale nucleoplasm with one nucleolus.
          v = r > rim ? base : interior + (rng.uniform() < 0.1 ? -0.1 : 0.0);
          if (std::hypot(x - nx, y - ny) < nr) v = base - 0.05;
        } else {
          // Slightly lighter rim-to-centre gradient plus granules.
          v = base + 0.06 * r + (rng.uniform() < 0.15 ? -0.12 : 0.0);
        }
        img(x, y) = std::min(img(x, y), v);
      }
    }
  }
  out.nuclei = static_cast<int>(placed.size());

  // Specks: small dark dots that resemble nucleus interiors locally.
  for (int s = 0; s < cfg.specks; ++s) {
    const double cx = rng.uniform(0, w);
    const double cy = rng.uniform(0, h);
    const double r = rng.uniform(1.0, 2.5);
    const double v = rng.uniform(0.30, 0.45);
    for (int y = static_cast<int>(cy - r) - 1; y <= static_cast<int>(cy + r) + 1; ++y) {
      for (int x = static_cast<int>(cx - r) - 1; x <= static_cast<int>(cx + r) + 1; ++x) {
        if (x < 0 || y < 0 || x >= w || y >= h || out.mask(x, y) != 0) continue;
        if (std::hypot(x - cx, y - cy) < r) img(x, y) = std::min(img(x, y), v);
      }
    }
  }

  for (double& v : img.values()) v = std::clamp(v + cfg.noise * rng.normal(), 0.0, 1.0);
  out.image = std::move(img);
  return out;
}

std::vector<SyntheticSample> synthetic_corpus(const SyntheticConfig& cfg, int count, int first_index) {
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate_synthetic(cfg, first_index + i));
  return out;
}

}  // namespace scd2te
