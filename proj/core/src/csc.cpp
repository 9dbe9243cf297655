#include "scd2te/csc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scd2te/parallel.hpp"

namespace scd2te {

void SparseCodingConfig::validate(int atom_count) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
  if (!(tol > 0.0)) throw InvalidArgument("tol must be > 0");
  if (max_inner_iters < 1) throw InvalidArgument("max_inner_iters must be >= 1");
  if (!(sparsity_ceiling > 0.0 && sparsity_ceiling <= 1.0)) {
    throw InvalidArgument("sparsity_ceiling must lie in (0,1]");
  }
  if (dict_epochs < 0) throw InvalidArgument("dict_epochs must be >= 0");
  if (!(step_size > 0.0)) throw InvalidArgument("step_size must be > 0");
  if (patches_per_epoch < 1) throw InvalidArgument("patches_per_epoch must be >= 1");
  if (atom_count > 0 && patches_per_epoch < atom_count) {
    throw InvalidArgument("patches_per_epoch must be >= atom_count");
  }
}

// ---------------------------------------------------------------------------
// LocalDictionary

LocalDictionary::LocalDictionary(int filter_side, int atom_count, std::vector<double> atoms)
    : side_(filter_side), count_(atom_count), atoms_(std::move(atoms)) {
  if (side_ < 1 || side_ % 2 == 0) throw InvalidArgument("filter side must be odd and positive");
  if (count_ < 1) throw InvalidArgument("atom count must be >= 1");
  if (atoms_.size() != static_cast<std::size_t>(atom_size()) * count_) {
    throw InvalidArgument("atom storage does not match filter_side^2 * atom_count");
  }
  for (int j = 0; j < count_; ++j) {
    double sq = 0.0;
    for (double v : atom(j)) {
      if (!std::isfinite(v)) throw InvalidArgument("dictionary atom has non-finite entries");
      sq += v * v;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
      throw InvalidArgument("dictionary atom " + std::to_string(j) + " is not unit norm");
    }
  }
}

LocalDictionary LocalDictionary::normalized(int filter_side, int atom_count,
                                            std::vector<double> atoms) {
  const std::size_t d = static_cast<std::size_t>(filter_side) * filter_side;
  if (atoms.size() != d * static_cast<std::size_t>(atom_count)) {
    throw InvalidArgument("atom storage does not match filter_side^2 * atom_count");
  }
  for (int j = 0; j < atom_count; ++j) {
    auto col = std::span<double>(atoms).subspan(j * d, d);
    double sq = 0.0;
    for (double v : col) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm < 1e-12 || !std::isfinite(norm)) {
      // Zero atom: fall back to a centred delta.
      std::fill(col.begin(), col.end(), 0.0);
      col[d / 2] = 1.0;
    } else {
      for (double& v : col) v /= norm;
    }
  }
  return LocalDictionary(filter_side, atom_count, std::move(atoms));
}

std::vector<double> LocalDictionary::gram() const {
  std::vector<double> g(static_cast<std::size_t>(count_) * count_);
  for (int a = 0; a < count_; ++a) {
    for (int b = a; b < count_; ++b) {
      const auto u = atom(a);
      const auto v = atom(b);
      const double dot = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
      g[a * count_ + b] = dot;
      g[b * count_ + a] = dot;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// FeatureMaps

FeatureMaps::FeatureMaps(int width, int height, int channels, int layer_index)
    : width_(width), height_(height), channels_(channels), layer_index_(layer_index) {
  if (width < 0 || height < 0 || channels < 0) {
    throw InvalidArgument("feature map dimensions must be non-negative");
  }
  codes_.assign(pixel_count() * static_cast<std::size_t>(channels), 0.0);
}

FeatureMaps::FeatureMaps(int width, int height, int channels, std::vector<double> codes,
                         int layer_index)
    : width_(width),
      height_(height),
      channels_(channels),
      layer_index_(layer_index),
      codes_(std::move(codes)) {
  if (width < 0 || height < 0 || channels < 0) {
    throw InvalidArgument("feature map dimensions must be non-negative");
  }
  if (codes_.size() != pixel_count() * static_cast<std::size_t>(channels)) {
    throw InvalidArgument("feature map storage does not match width*height*channels");
  }
}

double FeatureMaps::nonzero_fraction() const {
  if (codes_.empty()) return 0.0;
  const auto nnz = std::count_if(codes_.begin(), codes_.end(), [](double v) { return v != 0.0; });
  return static_cast<double>(nnz) / static_cast<double>(codes_.size());
}

// ---------------------------------------------------------------------------
// Patch extraction and placement

namespace {

void check_side(const ScalarGrid& image, int side) {
  if (side < 1 || side % 2 == 0) throw InvalidArgument("patch side must be odd and positive");
  if (side > image.width() && side > image.height()) {
    throw InvalidArgument("patch side " + std::to_string(side) + " exceeds both image dimensions");
  }
}

// Linear image index of every window sample, row-major within the window.
void window_indices(int width, int height, int cx, int cy, int side, std::size_t* out) {
  const int half = side / 2;
  std::size_t p = 0;
  for (int dy = -half; dy <= half; ++dy) {
    const std::size_t row = static_cast<std::size_t>(reflect_index(cy + dy, height)) * width;
    for (int dx = -half; dx <= half; ++dx) {
      out[p++] = row + static_cast<std::size_t>(reflect_index(cx + dx, width));
    }
  }
}

bool is_interior(int width, int height, int cx, int cy, int half) {
  return cx - half >= 0 && cy - half >= 0 && cx + half < width && cy + half < height;
}

}  // namespace

std::vector<double> extract_patch(const ScalarGrid& image, Pixel center, int side) {
  check_side(image, side);
  if (center.x < 0 || center.y < 0 || center.x >= image.width() || center.y >= image.height()) {
    throw InvalidArgument("patch centre lies outside the image");
  }
  std::vector<std::size_t> idx(static_cast<std::size_t>(side) * side);
  window_indices(image.width(), image.height(), center.x, center.y, side, idx.data());
  std::vector<double> patch(idx.size());
  const auto v = image.values();
  for (std::size_t p = 0; p < idx.size(); ++p) patch[p] = v[idx[p]];
  return patch;
}

ScalarGrid reconstruct(const FeatureMaps& codes, const LocalDictionary& dict) {
  if (codes.channels() != dict.atom_count()) {
    throw InvalidArgument("code channels (" + std::to_string(codes.channels()) +
                          ") do not match atom count (" + std::to_string(dict.atom_count()) +
                          ")");
  }
  const int w = codes.width();
  const int h = codes.height();
  ScalarGrid out(w, h);
  if (w == 0 || h == 0) return out;
  const int side = dict.filter_side();
  const int c = dict.atom_count();
  const std::size_t d = static_cast<std::size_t>(dict.atom_size());
  std::vector<std::size_t> idx(d);
  std::vector<double> stamp(d);
  auto acc = out.values();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto a = codes.pixel(x, y);
      bool any = false;
      std::fill(stamp.begin(), stamp.end(), 0.0);
      for (int j = 0; j < c; ++j) {
        if (a[j] == 0.0) continue;
        any = true;
        const auto atom = dict.atom(j);
        for (std::size_t p = 0; p < d; ++p) stamp[p] += atom[p] * a[j];
      }
      if (!any) continue;
      window_indices(w, h, x, y, side, idx.data());
      for (std::size_t p = 0; p < d; ++p) acc[idx[p]] += stamp[p];
    }
  }
  return out;
}

double csc_objective(const ScalarGrid& image, const FeatureMaps& codes,
                     const LocalDictionary& dict, double lambda) {
  if (!codes.same_geometry(image)) throw InvalidArgument("codes and image geometry differ");
  const ScalarGrid recon = reconstruct(codes, dict);
  double fit = 0.0;
  const auto x = image.values();
  const auto r = recon.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = x[i] - r[i];
    fit += e * e;
  }
  double l1 = 0.0;
  for (double a : codes.codes()) l1 += std::abs(a);
  return 0.5 * fit + lambda * l1;
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

double soft_threshold(double u, double t) {
  if (u > t) return u - t;
  if (u < -t) return u + t;
  return 0.0;
}

// Coordinate passes over one pixel's code block per visit.
constexpr int kBlockPasses = 8;

// Gauss-Seidel block coordinate descent over pixels. Pixels are visited tile
// by tile; tiles are coloured 2x2 and tiles of one colour are separated by at
// least one full filter width, so their supports never overlap and can be
// processed concurrently without changing the visiting order semantics.
class CodeSolver {
 public:
  CodeSolver(const ScalarGrid& image, const LocalDictionary& dict, FeatureMaps& codes)
      : image_(image),
        dict_(dict),
        codes_(codes),
        w_(image.width()),
        h_(image.height()),
        c_(dict.atom_count()),
        side_(dict.filter_side()),
        half_(dict.half()),
        d_(static_cast<std::size_t>(dict.atom_size())),
        gram_(dict.gram()),
        atoms_t_(d_ * static_cast<std::size_t>(c_)) {
    for (int j = 0; j < c_; ++j) {
      const auto atom = dict.atom(j);
      for (std::size_t p = 0; p < d_; ++p) atoms_t_[p * c_ + j] = atom[p];
    }
    build_border_grams();
    tile_ = std::max(side_, 32);
    tiles_x_ = (w_ + tile_ - 1) / tile_;
    tiles_y_ = (h_ + tile_ - 1) / tile_;
    refresh_residual();
  }

  void refresh_residual() {
    const ScalarGrid recon = reconstruct(codes_, dict_);
    residual_.resize(image_.size());
    const auto x = image_.values();
    const auto r = recon.values();
    for (std::size_t i = 0; i < residual_.size(); ++i) residual_[i] = x[i] - r[i];
  }

  double objective(double lambda) const {
    double fit = 0.0;
    for (double e : residual_) fit += e * e;
    double l1 = 0.0;
    for (double a : codes_.codes()) l1 += std::abs(a);
    return 0.5 * fit + lambda * l1;
  }

  void sweep(double lambda) {
    for (int colour = 0; colour < 4; ++colour) {
      std::vector<std::pair<int, int>> tiles;
      for (int ty = colour / 2; ty < tiles_y_; ty += 2) {
        for (int tx = colour % 2; tx < tiles_x_; tx += 2) tiles.emplace_back(tx, ty);
      }
      parallel_for(tiles.size(), [&](std::size_t t) {
        Scratch scratch(*this);
        const int x0 = tiles[t].first * tile_;
        const int y0 = tiles[t].second * tile_;
        const int x1 = std::min(w_, x0 + tile_);
        const int y1 = std::min(h_, y0 + tile_);
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) update_pixel(x, y, lambda, scratch);
        }
      });
    }
  }

  // Drops the smallest-magnitude codes until at most `keep` remain nonzero.
  void hard_prune(std::size_t keep) {
    auto codes = codes_.codes();
    std::vector<std::size_t> order(codes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(codes[a]) > std::abs(codes[b]);
    });
    for (std::size_t k = keep; k < order.size(); ++k) codes[order[k]] = 0.0;
    refresh_residual();
  }

 private:
  struct Scratch {
    explicit Scratch(const CodeSolver& s)
        : idx(s.d_), z(s.c_), delta(s.c_), local_gram(s.c_ * s.c_), folded(s.d_ * s.c_),
          window(s.d_) {}
    std::vector<std::size_t> idx;
    std::vector<double> z;
    std::vector<double> delta;
    std::vector<double> local_gram;
    std::vector<double> folded;
    std::vector<double> window;
  };

  // Gram of the placed atoms E^T d at a border pixel, where reflected window
  // samples collide on the same image pixel.
  void border_gram(int cx, int cy, Scratch& s) const {
    // Reflected samples stay within [c-half, c+half], so a side x side buffer
    // anchored at the window origin holds every placed value.
    const int ox = cx - half_;
    const int oy = cy - half_;
    for (int j = 0; j < c_; ++j) {
      double* buf = s.folded.data() + j * d_;
      std::fill(buf, buf + d_, 0.0);
      const auto atom = dict_.atom(j);
      for (std::size_t p = 0; p < d_; ++p) {
        const int ix = static_cast<int>(s.idx[p] % w_) - ox;
        const int iy = static_cast<int>(s.idx[p] / w_) - oy;
        buf[iy * side_ + ix] += atom[p];
      }
    }
    for (int a = 0; a < c_; ++a) {
      for (int b = a; b < c_; ++b) {
        const double* u = s.folded.data() + a * d_;
        const double* v = s.folded.data() + b * d_;
        const double dot = std::inner_product(u, u + d_, v, 0.0);
        s.local_gram[a * c_ + b] = dot;
        s.local_gram[b * c_ + a] = dot;
      }
    }
  }

  // The folded Gram at a border pixel depends only on how far the pixel sits
  // from each edge, so one Gram per edge-distance class covers the image.
  int edge_class(int v, int n) const noexcept {
    if (v < half_) return v;
    if (v >= n - half_) return 2 * half_ - (n - 1 - v);
    return half_;
  }

  void build_border_grams() {
    const int classes = 2 * half_ + 1;
    border_grams_.assign(static_cast<std::size_t>(classes) * classes, {});
    Scratch s(*this);
    for (int ky = 0; ky < classes; ++ky) {
      for (int kx = 0; kx < classes; ++kx) {
        if (kx == half_ && ky == half_) continue;
        const int x = kx < half_ ? kx : (kx > half_ ? w_ - 1 - (2 * half_ - kx) : w_ / 2);
        const int y = ky < half_ ? ky : (ky > half_ ? h_ - 1 - (2 * half_ - ky) : h_ / 2);
        window_indices(w_, h_, x, y, side_, s.idx.data());
        border_gram(x, y, s);
        border_grams_[static_cast<std::size_t>(ky) * classes + kx] = s.local_gram;
      }
    }
  }

  const double* border_gram_for(int x, int y) const {
    const int classes = 2 * half_ + 1;
    return border_grams_[static_cast<std::size_t>(edge_class(y, h_)) * classes + edge_class(x, w_)]
        .data();
  }

  void update_pixel(int x, int y, double lambda, Scratch& s) {
    const bool interior = is_interior(w_, h_, x, y, half_);
    if (interior) {
      const std::size_t origin = static_cast<std::size_t>(y - half_) * w_ + (x - half_);
      for (int r = 0; r < side_; ++r) {
        const double* src = residual_.data() + origin + static_cast<std::size_t>(r) * w_;
        std::copy(src, src + side_, s.window.data() + static_cast<std::size_t>(r) * side_);
      }
    } else {
      window_indices(w_, h_, x, y, side_, s.idx.data());
      for (std::size_t p = 0; p < d_; ++p) s.window[p] = residual_[s.idx[p]];
    }
    std::fill(s.z.begin(), s.z.end(), 0.0);
    for (std::size_t p = 0; p < d_; ++p) {
      const double* col = atoms_t_.data() + p * c_;
      const double v = s.window[p];
      for (int j = 0; j < c_; ++j) s.z[j] += col[j] * v;
    }
    const double* g = interior ? gram_.data() : border_gram_for(x, y);

    auto a = codes_.pixel(x, y);
    std::fill(s.delta.begin(), s.delta.end(), 0.0);
    // z_j holds the correlation of atom j with the residual that already
    // accounts for the current codes; coordinate j minimises exactly.
    bool moved = false;
    for (int pass = 0; pass < kBlockPasses; ++pass) {
      double max_change = 0.0;
      double max_code = 0.0;
      for (int j = 0; j < c_; ++j) {
        const double gjj = g[j * c_ + j];
        double next = 0.0;
        if (gjj > 1e-14) next = soft_threshold(s.z[j] + gjj * a[j], lambda) / gjj;
        const double step = next - a[j];
        if (step != 0.0) {
          for (int k = 0; k < c_; ++k) s.z[k] -= g[k * c_ + j] * step;
          a[j] = next;
          s.delta[j] += step;
          moved = true;
          max_change = std::max(max_change, std::abs(step));
        }
        max_code = std::max(max_code, std::abs(a[j]));
      }
      if (max_change <= 1e-12 * (1.0 + max_code)) break;
    }
    if (!moved) return;

    // Stamp of the code change, then scatter it into the residual.
    std::fill(s.window.begin(), s.window.end(), 0.0);
    const double* atoms = dict_.atoms().data();
    for (int j = 0; j < c_; ++j) {
      const double dj = s.delta[j];
      if (dj == 0.0) continue;
      const double* atom = atoms + static_cast<std::size_t>(j) * d_;
      double* out = s.window.data();
      for (std::size_t p = 0; p < d_; ++p) out[p] += atom[p] * dj;
    }
    if (interior) {
      const std::size_t origin = static_cast<std::size_t>(y - half_) * w_ + (x - half_);
      for (int r = 0; r < side_; ++r) {
        double* dst = residual_.data() + origin + static_cast<std::size_t>(r) * w_;
        const double* src = s.window.data() + static_cast<std::size_t>(r) * side_;
        for (int c = 0; c < side_; ++c) dst[c] -= src[c];
      }
    } else {
      for (std::size_t p = 0; p < d_; ++p) residual_[s.idx[p]] -= s.window[p];
    }
  }

  const ScalarGrid& image_;
  const LocalDictionary& dict_;
  FeatureMaps& codes_;
  int w_, h_, c_, side_, half_;
  std::size_t d_;
  std::vector<double> gram_;
  // Atoms transposed to d x c so one window sample touches all atoms at once.
  std::vector<double> atoms_t_;
  std::vector<double> residual_;
  std::vector<std::vector<double>> border_grams_;
  int tile_ = 32;
  int tiles_x_ = 0;
  int tiles_y_ = 0;
};

}  // namespace

FeatureMaps encode(const ScalarGrid& image, const LocalDictionary& dict,
                   const SparseCodingConfig& cfg, EncodeTrace* trace,
                   const FeatureMaps* warm_start) {
  cfg.validate();
  if (dict.atom_count() < 1) throw InvalidArgument("dictionary is empty");
  if (dict.filter_side() > std::min(image.width(), image.height())) {
    throw InvalidArgument("filter side " + std::to_string(dict.filter_side()) +
                          " exceeds image dimensions " + std::to_string(image.width()) + "x" +
                          std::to_string(image.height()));
  }
  require_finite(image, "image");

  FeatureMaps codes(image.width(), image.height(), dict.atom_count());
  if (warm_start != nullptr) {
    if (!warm_start->same_geometry(image) || warm_start->channels() != dict.atom_count()) {
      throw InvalidArgument("warm start codes do not match image and dictionary");
    }
    codes = *warm_start;
  }

  CodeSolver solver(image, dict, codes);
  EncodeTrace local;
  EncodeTrace& tr = trace != nullptr ? *trace : local;
  tr = EncodeTrace{};

  double lambda = cfg.lambda;
  const std::size_t total = codes.codes().size();
  const auto allowed = static_cast<std::size_t>(std::floor(cfg.sparsity_ceiling * total));

  auto solve = [&] {
    double prev = solver.objective(lambda);
    tr.objective.push_back(prev);
    tr.lambda.push_back(lambda);
    for (int it = 0; it < cfg.max_inner_iters; ++it) {
      solver.sweep(lambda);
      const double cur = solver.objective(lambda);
      tr.objective.push_back(cur);
      tr.lambda.push_back(lambda);
      ++tr.sweeps;
      if (cur > prev + 1e-9 * std::max(1.0, std::abs(prev))) {
        throw InternalError("encode objective increased from " + std::to_string(prev) + " to " +
                            std::to_string(cur));
      }
      const double decrease = prev - cur;
      if (prev <= 0.0 || decrease <= cfg.tol * std::abs(prev)) break;
      prev = cur;
    }
  };

  solve();
  auto nonzeros = [&] {
    const auto c = codes.codes();
    return static_cast<std::size_t>(
        std::count_if(c.begin(), c.end(), [](double v) { return v != 0.0; }));
  };
  // A larger penalty can only lower the objective at the requested lambda
  // relative to the zero code, so escalation keeps the descent guarantee.
  for (int round = 0; round < 40 && nonzeros() > allowed; ++round) {
    lambda = lambda > 0.0 ? lambda * 1.5 : 1e-3;
    solve();
  }
  if (nonzeros() > allowed) solver.hard_prune(allowed);

  tr.final_lambda = lambda;
  return codes;
}

// ---------------------------------------------------------------------------
// Context augmentation and concatenation

std::vector<Offset> compass_offsets(std::span<const int> radii) {
  static constexpr int dirs[8][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1},
                                     {-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
  std::vector<Offset> out;
  for (int r : radii) {
    for (const auto& d : dirs) out.push_back({d[0] * r, d[1] * r});
  }
  return out;
}

std::vector<Offset> default_context_offsets() {
  static constexpr int radii[] = {2, 4, 8};
  return compass_offsets(radii);
}

FeatureMaps build_context_features(const FeatureMaps& maps, std::span<const Offset> offsets) {
  const int w = maps.width();
  const int h = maps.height();
  const int c = maps.channels();
  const int blocks = 1 + static_cast<int>(offsets.size());
  FeatureMaps out(w, h, c * blocks, maps.layer_index());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto dst = out.pixel(x, y);
      for (int b = 0; b < blocks; ++b) {
        const Offset o = b == 0 ? Offset{} : offsets[b - 1];
        const auto src = maps.pixel(reflect_index(x + o.dx, w), reflect_index(y + o.dy, h));
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(b) * c);
      }
    }
  }
  return out;
}

FeatureMaps concatenate(std::span<const FeatureMaps* const> maps) {
  if (maps.empty()) return {};
  int channels = 0;
  for (const FeatureMaps* m : maps) {
    if (!m->same_geometry(*maps.front())) {
      throw InvalidArgument("cannot concatenate feature maps of different geometry");
    }
    channels += m->channels();
  }
  const int w = maps.front()->width();
  const int h = maps.front()->height();
  FeatureMaps out(w, h, channels, maps.back()->layer_index());
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    auto dst = out.codes().subspan(p * channels, static_cast<std::size_t>(channels));
    auto it = dst.begin();
    for (const FeatureMaps* m : maps) {
      const auto src = m->pixel(p);
      it = std::copy(src.begin(), src.end(), it);
    }
  }
  return out;
}

namespace {

int total_channels(std::span<const FeatureMaps* const> maps) {
  int channels = 0;
  for (const FeatureMaps* m : maps) channels += m->channels();
  return channels;
}

void check_carry(std::span<const FeatureMaps* const> maps) {
  if (maps.empty()) throw InvalidArgument("no feature maps to combine");
  for (const FeatureMaps* m : maps) {
    if (!m->same_geometry(*maps.front())) {
      throw InvalidArgument("feature maps to combine differ in geometry");
    }
  }
}

}  // namespace

FeatureMaps gather_context_vectors(std::span<const FeatureMaps* const> maps,
                                   std::span<const Offset> offsets,
                                   std::span<const std::size_t> pixels) {
  check_carry(maps);
  const int w = maps.front()->width();
  const int h = maps.front()->height();
  const int base = total_channels(maps);
  const int blocks = 1 + static_cast<int>(offsets.size());
  FeatureMaps out(static_cast<int>(pixels.size()), 1, base * blocks);
  for (std::size_t s = 0; s < pixels.size(); ++s) {
    if (pixels[s] >= maps.front()->pixel_count()) throw InvalidArgument("pixel index out of range");
    const int x = static_cast<int>(pixels[s] % w);
    const int y = static_cast<int>(pixels[s] / w);
    auto dst = out.pixel(static_cast<int>(s), 0);
    auto it = dst.begin();
    for (int b = 0; b < blocks; ++b) {
      const Offset o = b == 0 ? Offset{} : offsets[b - 1];
      const int sx = reflect_index(x + o.dx, w);
      const int sy = reflect_index(y + o.dy, h);
      for (const FeatureMaps* m : maps) {
        const auto src = m->pixel(sx, sy);
        it = std::copy(src.begin(), src.end(), it);
      }
    }
  }
  return out;
}

FeatureMaps compress_with_context(const Compressor& comp, std::span<const FeatureMaps* const> maps,
                                  std::span<const Offset> offsets) {
  check_carry(maps);
  const int w = maps.front()->width();
  const int h = maps.front()->height();
  const int base = total_channels(maps);
  const int blocks = 1 + static_cast<int>(offsets.size());
  if (base * blocks != comp.in_channels()) {
    throw InvalidArgument("augmented width " + std::to_string(base * blocks) +
                          " does not match compressor input " +
                          std::to_string(comp.in_channels()));
  }
  const int out_c = comp.out_channels();
  const int in_c = comp.in_channels();
  // Transposed projection so that one input coordinate touches a contiguous column.
  std::vector<double> pt(static_cast<std::size_t>(in_c) * out_c);
  for (int r = 0; r < out_c; ++r) {
    for (int i = 0; i < in_c; ++i) pt[static_cast<std::size_t>(i) * out_c + r] = comp.row(r)[i];
  }
  const auto& bias = comp.bias();

  FeatureMaps out(w, h, out_c, maps.back()->layer_index());
  parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    std::vector<double> acc(out_c);
    for (int x = 0; x < w; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      int i = 0;
      for (int b = 0; b < blocks; ++b) {
        const Offset o = b == 0 ? Offset{} : offsets[b - 1];
        const int sx = reflect_index(x + o.dx, w);
        const int sy = reflect_index(y + o.dy, h);
        for (const FeatureMaps* m : maps) {
          for (double v : m->pixel(sx, sy)) {
            if (v != 0.0) {
              const double* col = pt.data() + static_cast<std::size_t>(i) * out_c;
              for (int r = 0; r < out_c; ++r) acc[r] += col[r] * v;
            }
            ++i;
          }
        }
      }
      auto dst = out.pixel(x, y);
      for (int r = 0; r < out_c; ++r) dst[r] = acc[r] + bias[r];
    }
  });
  return out;
}

}  // namespace scd2te
