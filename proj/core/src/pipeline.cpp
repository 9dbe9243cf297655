#include "scd2te/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "scd2te/metrics.hpp"
#include "scd2te/parallel.hpp"
#include "scd2te/rng.hpp"

namespace scd2te {
namespace {

constexpr std::uint64_t kStreamDict = 0x64696374;     // "dict"
constexpr std::uint64_t kStreamSample = 0x73616d70;   // "samp"
constexpr std::uint64_t kStreamCompress = 0x636f6d70; // "comp"
constexpr std::uint64_t kStreamEnsemble = 0x656e7362; // "ensb"

int input_planes(const ModelConfig& cfg, int layer) { return layer == 1 ? cfg.planes() : 1; }

int compressed_width(const ModelConfig& cfg, int layer) {
  return std::min(cfg.compressed_channels[static_cast<std::size_t>(layer - 1)],
                  pooled_width(cfg, layer));
}

// Codes of every plane, then (optionally) the planes themselves.
FeatureMaps layer_features(const ImagePlanes& planes, std::span<const LocalDictionary> dicts,
                           const ModelConfig& cfg, int layer) {
  std::vector<FeatureMaps> parts;
  parts.reserve(2 * planes.size());
  for (std::size_t p = 0; p < planes.size(); ++p) {
    parts.push_back(encode(highpass(planes[p], cfg.highpass_radius), dicts[p], cfg.sparse));
  }
  if (cfg.append_input) {
    for (const ScalarGrid& plane : planes) {
      parts.emplace_back(plane.width(), plane.height(), 1, plane.storage());
    }
  }
  std::vector<const FeatureMaps*> ptrs;
  for (const FeatureMaps& c : parts) ptrs.push_back(&c);
  FeatureMaps out = parts.size() == 1 ? std::move(parts.front()) : concatenate(ptrs);
  out.set_layer_index(layer);
  return out;
}

std::vector<const FeatureMaps*> select_maps(const FeatureCarry& carry, ReuseMode mode, int layer) {
  std::vector<const FeatureMaps*> out;
  for (std::size_t k : reuse_selection(mode, layer)) out.push_back(&carry[k]);
  return out;
}

ScoreMap score_pixels(const TreeEnsemble& ensemble, const FeatureMaps& compressed) {
  ScoreMap scores(compressed.width(), compressed.height());
  auto out = scores.values();
  parallel_for(compressed.pixel_count(),
               [&](std::size_t i) { out[i] = ensemble.predict_row(compressed.pixel(i)); });
  return scores;
}

ImagePlanes layer_input(const Layer& layer, const ImagePlanes& input) {
  if (layer.index == 1) return input;
  return {rescale_scores(input.front(), layer.input_min, layer.input_max)};
}

struct SamplePixel {
  std::size_t image = 0;
  std::size_t pixel = 0;
  friend auto operator<=>(const SamplePixel&, const SamplePixel&) = default;
};

// Up to t pixels, half foreground and half background where available; the
// shorter class is topped up from the other. Returned in (image, pixel) order.
std::vector<SamplePixel> stratified_sample(std::span<const TrainingExample> dataset, std::size_t t,
                                           Rng& rng) {
  std::vector<SamplePixel> fg;
  std::vector<SamplePixel> bg;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto m = dataset[i].mask.values();
    for (std::size_t p = 0; p < m.size(); ++p) (m[p] != 0 ? fg : bg).push_back({i, p});
  }
  t = std::min(t, fg.size() + bg.size());
  std::size_t want_fg = std::min((t + 1) / 2, fg.size());
  const std::size_t want_bg = std::min(t - want_fg, bg.size());
  want_fg = std::min(t - want_bg, fg.size());

  std::vector<SamplePixel> out;
  out.reserve(want_fg + want_bg);
  for (std::size_t k : rng.sample_without_replacement(fg.size(), want_fg)) out.push_back(fg[k]);
  for (std::size_t k : rng.sample_without_replacement(bg.size(), want_bg)) out.push_back(bg[k]);
  std::sort(out.begin(), out.end());
  return out;
}

// Augmented pool vectors at the chosen pixels, stacked as one row of maps.
FeatureMaps gather_pool(const std::vector<FeatureCarry>& carries,
                        std::span<const SamplePixel> pixels, const ModelConfig& cfg, int layer) {
  const int width = pooled_width(cfg, layer);
  FeatureMaps pool(static_cast<int>(pixels.size()), 1, width);
  std::size_t begin = 0;
  while (begin < pixels.size()) {
    std::size_t end = begin;
    std::vector<std::size_t> idx;
    while (end < pixels.size() && pixels[end].image == pixels[begin].image) {
      idx.push_back(pixels[end].pixel);
      ++end;
    }
    const auto maps = select_maps(carries[pixels[begin].image], cfg.reuse_mode, layer);
    const FeatureMaps part = gather_context_vectors(maps, cfg.context_offsets, idx);
    std::copy(part.codes().begin(), part.codes().end(),
              pool.codes().begin() + static_cast<std::ptrdiff_t>(begin * width));
    begin = end;
  }
  return pool;
}

void check_dataset(std::span<const TrainingExample> dataset, const ModelConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("training set is empty");
  const int side = cfg.largest_filter_side();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const TrainingExample& ex = dataset[i];
    const std::string tag = "training example " + std::to_string(i);
    if (static_cast<int>(ex.planes.size()) != cfg.planes()) {
      throw InvalidArgument(tag + " has " + std::to_string(ex.planes.size()) +
                            " planes, colour mode needs " + std::to_string(cfg.planes()));
    }
    for (const ScalarGrid& plane : ex.planes) {
      if (!plane.same_shape(ex.mask)) throw InvalidArgument(tag + ": mask and image geometry differ");
      require_finite(plane, "training image");
    }
    if (ex.mask.width() < side || ex.mask.height() < side) {
      throw InvalidArgument(tag + " is smaller than the largest filter side " + std::to_string(side));
    }
    for (std::uint8_t v : ex.mask.values()) {
      if (v > 1) throw InvalidArgument(tag + ": mask is not binary");
    }
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string to_string(ColorMode mode) {
  return mode == ColorMode::luminance ? "luminance" : "per_channel";
}

std::string to_string(ReuseMode mode) {
  switch (mode) {
    case ReuseMode::none:
      return "none";
    case ReuseMode::previous_only:
      return "previous_only";
    case ReuseMode::dense:
      return "dense";
  }
  return "unknown";
}

ColorMode parse_color_mode(const std::string& text) {
  if (text == "luminance") return ColorMode::luminance;
  if (text == "per_channel") return ColorMode::per_channel;
  throw InvalidArgument("unknown colour mode '" + text + "' (luminance|per_channel)");
}

ReuseMode parse_reuse_mode(const std::string& text) {
  if (text == "none") return ReuseMode::none;
  if (text == "previous_only") return ReuseMode::previous_only;
  if (text == "dense") return ReuseMode::dense;
  throw InvalidArgument("unknown reuse mode '" + text + "' (none|previous_only|dense)");
}

void ModelConfig::validate() const {
  if (layer_count < 1) throw InvalidArgument("layer_count must be >= 1");
  const auto n = static_cast<std::size_t>(layer_count);
  if (filter_sides.size() != n || atom_counts.size() != n || compressed_channels.size() != n) {
    throw InvalidArgument("filter_sides, atom_counts and compressed_channels need " +
                          std::to_string(layer_count) + " entries each");
  }
  for (std::size_t l = 0; l < n; ++l) {
    if (filter_sides[l] < 1 || filter_sides[l] % 2 == 0) {
      throw InvalidArgument("filter side of layer " + std::to_string(l + 1) + " must be odd");
    }
    if (atom_counts[l] < 1) throw InvalidArgument("atom count must be >= 1");
    if (compressed_channels[l] < 1) throw InvalidArgument("compressed channel count must be >= 1");
    sparse.validate(atom_counts[l]);
  }
  if (samples_per_layer < 2) throw InvalidArgument("samples_per_layer must be >= 2");
  if (compressor_samples < 2) throw InvalidArgument("compressor_samples must be >= 2");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must lie in (0,1)");
  if (highpass_radius < 0) throw InvalidArgument("highpass_radius must be >= 0");
  ensemble.validate();
}

int ModelConfig::largest_filter_side() const {
  return filter_sides.empty() ? 0 : *std::max_element(filter_sides.begin(), filter_sides.end());
}

std::vector<std::size_t> reuse_selection(ReuseMode mode, int layer) {
  const auto own = static_cast<std::size_t>(layer - 1);
  switch (mode) {
    case ReuseMode::none:
      return {own};
    case ReuseMode::previous_only:
      if (layer == 1) return {own};
      return {own - 1, own};
    case ReuseMode::dense: {
      std::vector<std::size_t> all(own + 1);
      for (std::size_t k = 0; k <= own; ++k) all[k] = k;
      return all;
    }
  }
  throw InvalidArgument("unknown reuse mode");
}

int layer_channels(const ModelConfig& cfg, int layer) {
  const int planes = input_planes(cfg, layer);
  return cfg.atom_counts[static_cast<std::size_t>(layer - 1)] * planes +
         (cfg.append_input ? planes : 0);
}

ScalarGrid highpass(const ScalarGrid& image, int radius) {
  if (radius < 0) throw InvalidArgument("high-pass radius must be >= 0");
  if (radius == 0) return image;
  const int w = image.width();
  const int h = image.height();
  const double norm = 1.0 / ((2.0 * radius + 1) * (2.0 * radius + 1));
  ScalarGrid rows(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int d = -radius; d <= radius; ++d) sum += image(reflect_index(x + d, w), y);
      rows(x, y) = sum;
    }
  }
  ScalarGrid out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int d = -radius; d <= radius; ++d) sum += rows(x, reflect_index(y + d, h));
      out(x, y) = image(x, y) - sum * norm;
    }
  }
  return out;
}

int pooled_width(const ModelConfig& cfg, int layer) {
  int channels = 0;
  for (std::size_t k : reuse_selection(cfg.reuse_mode, layer)) {
    channels += layer_channels(cfg, static_cast<int>(k) + 1);
  }
  return channels * (1 + static_cast<int>(cfg.context_offsets.size()));
}

void Model::validate() const {
  if (format_version != kFormatVersion) {
    throw InvalidState("unsupported model format version " + std::to_string(format_version));
  }
  config.validate();
  if (static_cast<int>(layers.size()) != config.layer_count) {
    throw InvalidState("model has " + std::to_string(layers.size()) + " layers, config says " +
                       std::to_string(config.layer_count));
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& layer = layers[k];
    const int l = static_cast<int>(k) + 1;
    const std::string tag = "layer " + std::to_string(l);
    if (layer.index != l) throw InvalidState(tag + " has index " + std::to_string(layer.index));
    if (static_cast<int>(layer.dictionaries.size()) != input_planes(config, l)) {
      throw InvalidState(tag + " has the wrong number of dictionaries");
    }
    for (const LocalDictionary& d : layer.dictionaries) {
      if (d.filter_side() != config.filter_sides[k] || d.atom_count() != config.atom_counts[k]) {
        throw InvalidState(tag + " dictionary shape disagrees with the config");
      }
    }
    if (layer.compressor.in_channels() != pooled_width(config, l) ||
        layer.compressor.out_channels() != compressed_width(config, l)) {
      throw InvalidState(tag + " compressor shape disagrees with the config");
    }
    if (layer.ensemble.feature_count() != static_cast<std::size_t>(layer.compressor.out_channels())) {
      throw InvalidState(tag + " ensemble width disagrees with the compressor");
    }
    if (!(layer.input_max > layer.input_min) || !std::isfinite(layer.input_min) ||
        !std::isfinite(layer.input_max)) {
      throw InvalidState(tag + " has an invalid input range");
    }
  }
}

ScalarGrid rescale_scores(const ScoreMap& scores, double lo, double hi) {
  if (!(hi > lo)) throw InvalidArgument("rescale range is empty");
  ScalarGrid out(scores.width(), scores.height());
  const auto in = scores.values();
  auto dst = out.values();
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < in.size(); ++i) dst[i] = std::clamp((in[i] - lo) * inv, 0.0, 1.0);
  return out;
}

ScoreMap forward_layer(const Model& model, int layer, const ImagePlanes& input, FeatureCarry& carry) {
  if (layer < 1 || layer > static_cast<int>(model.layers.size())) {
    throw InvalidArgument("layer index " + std::to_string(layer) + " out of range");
  }
  if (carry.size() != static_cast<std::size_t>(layer - 1)) {
    throw InvalidState("layer " + std::to_string(layer) + " expects " + std::to_string(layer - 1) +
                       " carried feature maps, got " + std::to_string(carry.size()));
  }
  const Layer& L = model.layers[static_cast<std::size_t>(layer - 1)];
  if (input.size() != L.dictionaries.size()) {
    throw InvalidArgument("layer " + std::to_string(layer) + " expects " +
                          std::to_string(L.dictionaries.size()) + " input planes");
  }
  for (const ScalarGrid& plane : input) {
    if (!plane.same_shape(input.front())) throw InvalidArgument("input planes differ in geometry");
    if (!carry.empty() && !carry.front().same_geometry(plane)) {
      throw InvalidArgument("input geometry differs from the carried feature maps");
    }
  }
  carry.push_back(layer_features(layer_input(L, input), L.dictionaries, model.config, layer));
  const auto maps = select_maps(carry, model.config.reuse_mode, layer);
  const FeatureMaps compressed =
      compress_with_context(L.compressor, maps, model.config.context_offsets);
  return score_pixels(L.ensemble, compressed);
}

std::vector<ScoreMap> predict_layers(const Model& model, const ImagePlanes& image) {
  if (model.layers.empty()) throw InvalidState("model has no layers");
  if (static_cast<int>(image.size()) != model.config.planes()) {
    throw InvalidArgument("image has " + std::to_string(image.size()) + " planes, model expects " +
                          std::to_string(model.config.planes()));
  }
  const int side = model.config.largest_filter_side();
  if (image.front().width() < side || image.front().height() < side) {
    throw InvalidArgument("image " + std::to_string(image.front().width()) + "x" +
                          std::to_string(image.front().height()) +
                          " is smaller than the largest filter side " + std::to_string(side));
  }
  std::vector<ScoreMap> scores;
  FeatureCarry carry;
  ImagePlanes input = image;
  for (int l = 1; l <= static_cast<int>(model.layers.size()); ++l) {
    scores.push_back(forward_layer(model, l, input, carry));
    input = {scores.back()};
  }
  return scores;
}

Prediction predict_image(const Model& model, const ImagePlanes& image) {
  auto scores = predict_layers(model, image);
  Prediction p;
  p.scores = std::move(scores.back());
  p.mask = threshold_grid(p.scores, model.config.threshold);
  return p;
}

double mean_f1(std::span<const ScoreMap> scores, std::span<const BinaryMask> masks,
               double threshold) {
  if (scores.size() != masks.size()) throw InvalidArgument("score and mask counts differ");
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    try {
      sum += f1(threshold_grid(scores[i], threshold), masks[i]);
      ++n;
    } catch (const UndefinedMetric&) {
    }
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

Model train(std::span<const TrainingExample> dataset, const ModelConfig& cfg, TrainReport* report) {
  cfg.validate();
  check_dataset(dataset, cfg);

  Model model;
  model.config = cfg;
  if (report != nullptr) *report = TrainReport{};

  std::vector<FeatureCarry> carries(dataset.size());
  std::vector<ScoreMap> previous;
  std::vector<BinaryMask> masks;
  for (const TrainingExample& ex : dataset) masks.push_back(ex.mask);

  for (int l = 1; l <= cfg.layer_count; ++l) {
    const auto start = std::chrono::steady_clock::now();
    const auto k = static_cast<std::size_t>(l - 1);
    LayerReport lr;
    lr.layer = l;
    Layer layer;
    layer.index = l;

    // Layer inputs on [0,1].
    std::vector<ImagePlanes> inputs(dataset.size());
    if (l == 1) {
      for (std::size_t i = 0; i < dataset.size(); ++i) inputs[i] = dataset[i].planes;
    } else {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const ScoreMap& s : previous) {
        const auto [mn, mx] = std::minmax_element(s.values().begin(), s.values().end());
        lo = std::min(lo, *mn);
        hi = std::max(hi, *mx);
      }
      if (!(hi - lo > 1e-12)) {
        lr.warnings.push_back("previous layer produced constant scores; input range widened to 1");
        hi = lo + 1.0;
      }
      layer.input_min = lo;
      layer.input_max = hi;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        inputs[i] = {rescale_scores(previous[i], lo, hi)};
      }
    }

    const int planes = input_planes(cfg, l);
    for (int p = 0; p < planes; ++p) {
      std::vector<ScalarGrid> plane_set;
      plane_set.reserve(inputs.size());
      for (const ImagePlanes& in : inputs) {
        plane_set.push_back(highpass(in[static_cast<std::size_t>(p)], cfg.highpass_radius));
      }
      SparseCodingConfig sparse = cfg.sparse;
      sparse.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(l),
                                kStreamDict + static_cast<std::uint64_t>(p));
      DictionaryLearningResult learned =
          learn_dictionary(plane_set, cfg.atom_counts[k], cfg.filter_sides[k], sparse);
      if (learned.degenerate_input) {
        lr.warnings.push_back("plane " + std::to_string(p) + ": " + learned.warning);
      }
      layer.dictionaries.push_back(std::move(learned.dictionary));
    }

    for (std::size_t i = 0; i < dataset.size(); ++i) {
      carries[i].push_back(layer_features(inputs[i], layer.dictionaries, cfg, l));
    }

    Rng sample_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(l), kStreamSample));
    const auto samples =
        stratified_sample(dataset, static_cast<std::size_t>(cfg.samples_per_layer), sample_rng);

    // Compressor fit on a seeded subset of the training samples.
    std::vector<SamplePixel> fit_pixels;
    {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(l), kStreamCompress));
      const std::size_t n = std::min(samples.size(), static_cast<std::size_t>(cfg.compressor_samples));
      for (std::size_t s : rng.sample_without_replacement(samples.size(), n)) {
        fit_pixels.push_back(samples[s]);
      }
    }
    layer.compressor =
        fit_compressor(gather_pool(carries, fit_pixels, cfg, l), compressed_width(cfg, l));

    std::vector<FeatureMaps> compressed(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto maps = select_maps(carries[i], cfg.reuse_mode, l);
      compressed[i] = compress_with_context(layer.compressor, maps, cfg.context_offsets);
    }

    const auto width = static_cast<std::size_t>(layer.compressor.out_channels());
    SampleSet set;
    set.features = FeatureMatrix(samples.size(), width);
    set.targets.resize(samples.size());
    set.base_scores.assign(samples.size(), 0.0);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const auto src = compressed[samples[s].image].pixel(samples[s].pixel);
      std::copy(src.begin(), src.end(), set.features.row(s).begin());
      set.targets[s] = dataset[samples[s].image].mask.values()[samples[s].pixel];
    }
    EnsembleConfig ens = cfg.ensemble;
    ens.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(l), kStreamEnsemble);
    layer.ensemble = fit_ensemble(set, ens);

    previous.clear();
    bool constant = false;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      previous.push_back(score_pixels(layer.ensemble, compressed[i]));
      const auto [mn, mx] = std::minmax_element(previous.back().values().begin(),
                                                previous.back().values().end());
      constant = constant || !(*mx - *mn > 1e-12);
    }
    if (constant) lr.warnings.push_back("layer produced a constant score map on a training image");

    lr.train_f1 = mean_f1(previous, masks, cfg.threshold);
    model.layers.push_back(std::move(layer));
    lr.time_s = seconds_since(start);
    if (report != nullptr) report->layers.push_back(std::move(lr));
  }
  return model;
}

std::vector<AblationPoint> train_ablation(std::span<const TrainingExample> train_set,
                                          std::span<const TrainingExample> heldout,
                                          const ModelConfig& cfg, ReuseMode mode) {
  ModelConfig variant = cfg;
  variant.reuse_mode = mode;
  TrainReport report;
  const Model model = train(train_set, variant, &report);

  std::vector<std::vector<ScoreMap>> per_layer(static_cast<std::size_t>(cfg.layer_count));
  std::vector<BinaryMask> masks;
  for (const TrainingExample& ex : heldout) {
    auto scores = predict_layers(model, ex.planes);
    for (std::size_t l = 0; l < scores.size(); ++l) per_layer[l].push_back(std::move(scores[l]));
    masks.push_back(ex.mask);
  }
  std::vector<AblationPoint> out;
  for (int l = 1; l <= cfg.layer_count; ++l) {
    const auto k = static_cast<std::size_t>(l - 1);
    out.push_back({mode, l, report.layers[k].time_s, mean_f1(per_layer[k], masks, cfg.threshold)});
  }
  return out;
}

}  // namespace scd2te
