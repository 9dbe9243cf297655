#include "scd2te/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "scd2te/error.hpp"
#include "scd2te/parallel.hpp"
#include "scd2te/synthetic.hpp"

namespace scd2te::cli {
namespace {

static_assert(std::endian::native == std::endian::little, "sidecar I/O assumes little-endian");

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  return out;
}

fs::path default_output(const RunConfig& rc, const std::optional<fs::path>& given,
                        const char* fallback) {
  return given ? *given : rc.output_dir / fallback;
}

// ---- subcommand option sets -------------------------------------------------

struct GlobalOptions {
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  fs::path manifest;
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  std::optional<fs::path> log;
};

struct PredictArgs {
  fs::path model;
  fs::path image;
  fs::path out_score;
  fs::path out_mask;
  std::optional<fs::path> out_raw;
};

struct EvaluateArgs {
  fs::path model;
  fs::path manifest;
  fs::path out;
};

struct AblateArgs {
  fs::path manifest;
  std::optional<fs::path> config;
  std::optional<fs::path> out;
  std::vector<std::string> modes{"none", "previous_only", "dense"};
};

struct InspectArgs {
  fs::path model;
  fs::path out_dir;
};

struct SynthArgs {
  fs::path out_dir;
  int train = 8;
  int test = 4;
  int width = 200;
  int height = 200;
};

void cmd_train(const TrainArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve_config(a.config, g.seed);
  const DatasetManifest manifest = load_manifest(a.manifest);
  const auto data = load_split(manifest, {Split::train}, rc.model.color_mode);
  if (data.empty()) throw InvalidArgument("manifest has no train entries");

  TrainReport report;
  const Model model = train(data, rc.model, &report);
  const fs::path model_path = default_output(rc, a.out, "model.scd2te");
  const fs::path log_path = a.log ? *a.log : fs::path(model_path).replace_extension(".log.csv");
  if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
  save_model(model, model_path);
  auto log = open_output(log_path);
  write_train_log(log, report);

  for (const LayerReport& l : report.layers) {
    out << "layer " << l.layer << ": " << std::fixed << std::setprecision(2) << l.time_s
        << " s, train F1 " << std::setprecision(4) << l.train_f1 << '\n';
    for (const std::string& w : l.warnings) err << "warning: layer " << l.layer << ": " << w << '\n';
  }
  out << "model written to " << model_path.string() << '\n';
}

void cmd_predict(const PredictArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const ImagePlanes image = load_image(a.image, model.config.color_mode);
  const Prediction p = predict_image(model, image);
  if (a.out_score.has_parent_path()) fs::create_directories(a.out_score.parent_path());
  if (a.out_mask.has_parent_path()) fs::create_directories(a.out_mask.parent_path());
  write_pgm(a.out_score, score_to_raster(p.scores));
  save_mask_pgm(a.out_mask, p.mask);
  if (a.out_raw) write_score_sidecar(*a.out_raw, p.scores);
  const auto fg = std::count(p.mask.values().begin(), p.mask.values().end(), std::uint8_t{1});
  out << "foreground pixels: " << fg << " of " << p.mask.size() << '\n';
}

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const DatasetManifest manifest = load_manifest(a.manifest);
  const MetricsReport report = evaluate_manifest(model, manifest);
  auto csv = open_output(a.out);
  report.write_csv(csv);
  const ImageMetrics all = report.aggregate(nullptr);
  out << std::setprecision(4) << "overall: JI " << all.ji << ", F1 " << all.f1 << ", ABD "
      << all.abd << ", OV " << all.ov << " over " << report.per_image.size() << " images\n";
}

void cmd_ablate(const AblateArgs& a, const GlobalOptions& g, std::ostream& out) {
  const RunConfig rc = resolve_config(a.config, g.seed);
  std::vector<ReuseMode> modes;
  for (const std::string& m : a.modes) modes.push_back(parse_reuse_mode(m));

  const DatasetManifest manifest = load_manifest(a.manifest);
  const auto train_set = load_split(manifest, {Split::train}, rc.model.color_mode);
  if (train_set.empty()) throw InvalidArgument("manifest has no train entries");
  auto heldout = load_split(manifest, {Split::validation}, rc.model.color_mode);
  if (heldout.empty()) {
    heldout = load_split(manifest, {Split::same_test, Split::different_test}, rc.model.color_mode);
  }
  if (heldout.empty()) throw InvalidArgument("manifest has no validation or test entries");

  std::vector<AblationPoint> points;
  for (ReuseMode mode : modes) {
    const auto trace = train_ablation(train_set, heldout, rc.model, mode);
    points.insert(points.end(), trace.begin(), trace.end());
    out << to_string(mode) << ": final F1 " << std::setprecision(4) << trace.back().f1 << '\n';
  }
  auto csv = open_output(default_output(rc, a.out, "ablation.csv"));
  write_ablation_csv(csv, points);
}

void cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  fs::create_directories(a.out_dir);
  for (const Layer& layer : model.layers) {
    write_pgm(a.out_dir / ("layer_" + std::to_string(layer.index) + ".pgm"), layer_montage(layer));
  }
  auto summary = open_output(a.out_dir / "summary.txt");
  write_model_summary(summary, model);
  out << model.layers.size() << " montages written to " << a.out_dir.string() << '\n';
}

void cmd_synth(const SynthArgs& a, const GlobalOptions& g, std::ostream& out) {
  SyntheticConfig cfg;
  cfg.width = a.width;
  cfg.height = a.height;
  cfg.seed = g.seed.value_or(cfg.seed);
  fs::create_directories(a.out_dir);

  DatasetManifest manifest;
  const auto emit = [&](Split split, int index, const std::string& stem) {
    const SyntheticSample s = generate_synthetic(cfg, index);
    RasterImage raster{s.image.width(), s.image.height(), 1, 65535, {}};
    raster.samples.reserve(s.image.size());
    for (double v : s.image.values()) {
      raster.samples.push_back(static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)));
    }
    write_pgm(a.out_dir / (stem + ".pgm"), raster);
    save_mask_pgm(a.out_dir / (stem + "_mask.pgm"), s.mask);
    manifest.entries.push_back({split, "synthetic", stem + ".pgm", fs::path(stem + "_mask.pgm")});
  };
  for (int i = 0; i < a.train; ++i) emit(Split::train, i, "train_" + std::to_string(i));
  for (int i = 0; i < a.test; ++i) emit(Split::same_test, a.train + i, "test_" + std::to_string(i));

  auto file = open_output(a.out_dir / "manifest.csv");
  write_manifest(file, manifest);
  out << a.train + a.test << " images written to " << a.out_dir.string() << '\n';
}

}  // namespace

RunConfig resolve_config(const std::optional<fs::path>& config_path,
                         std::optional<std::uint64_t> seed) {
  RunConfig rc = config_path ? load_run_config(*config_path) : RunConfig{};
  if (seed) rc.model.seed = *seed;
  try {
    rc.model.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return rc;
}

std::vector<TrainingExample> load_split(const DatasetManifest& manifest,
                                        std::initializer_list<Split> splits, ColorMode mode) {
  std::vector<TrainingExample> out;
  for (const ManifestEntry& e : manifest.entries) {
    if (std::find(splits.begin(), splits.end(), e.split) != splits.end()) {
      out.push_back(load_example(e, mode));
    }
  }
  return out;
}

void write_train_log(std::ostream& out, const TrainReport& report) {
  out << std::setprecision(17) << "layer,time_s,train_f1\n";
  for (const LayerReport& l : report.layers) {
    out << l.layer << ',' << l.time_s << ',' << l.train_f1 << '\n';
  }
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationPoint>& points) {
  out << std::setprecision(17) << "mode,layer,time_s,f1\n";
  for (const AblationPoint& p : points) {
    out << to_string(p.mode) << ',' << p.layer << ',' << p.time_s << ',';
    if (std::isnan(p.f1)) {
      out << "nan\n";
    } else {
      out << p.f1 << '\n';
    }
  }
}

MetricsReport evaluate_manifest(const Model& model, const DatasetManifest& manifest) {
  MetricsReport report;
  for (const ManifestEntry& e : manifest.entries) {
    if (e.split != Split::same_test && e.split != Split::different_test) continue;
    const TrainingExample ex = load_example(e, model.config.color_mode);
    const Prediction p = predict_image(model, ex.planes);
    MetricsReport::Entry entry;
    entry.row = {e.image.filename().string(), e.organ, evaluate_masks(p.mask, ex.mask)};
    entry.group = e.split == Split::same_test ? TestGroup::same : TestGroup::different;
    report.per_image.push_back(std::move(entry));
  }
  if (report.per_image.empty()) throw InvalidArgument("manifest has no test entries");
  return report;
}

RasterImage score_to_raster(const ScoreMap& scores) {
  RasterImage r{scores.width(), scores.height(), 1, 255, {}};
  r.samples.assign(scores.size(), 0);
  if (scores.empty()) return r;
  const auto [lo, hi] = std::minmax_element(scores.values().begin(), scores.values().end());
  if (!(*hi > *lo)) return r;
  const double scale = 255.0 / (*hi - *lo);
  const auto v = scores.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    r.samples[i] = static_cast<std::uint16_t>(std::lround((v[i] - *lo) * scale));
  }
  return r;
}

void write_score_sidecar(const fs::path& path, const ScoreMap& scores) {
  auto out = open_output(path);
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(scores.width()),
                                 static_cast<std::uint32_t>(scores.height())};
  out.write("SCDF", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(scores.storage().data()),
            static_cast<std::streamsize>(scores.size() * sizeof(double)));
  if (!out) throw Error("failed writing " + path.string());
}

ScoreMap read_score_sidecar(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  std::uint32_t dims[2];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::memcmp(magic, "SCDF", 4) != 0) throw FormatError(path.string() + ": not a score sidecar");
  std::vector<double> values(static_cast<std::size_t>(dims[0]) * dims[1]);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw FormatError(path.string() + ": truncated score sidecar");
  return ScoreMap(static_cast<int>(dims[0]), static_cast<int>(dims[1]), std::move(values));
}

MontageLayout montage_layout(int tiles, int tile_side) {
  if (tiles < 1 || tile_side < 1) throw InvalidArgument("montage needs at least one tile");
  MontageLayout m;
  m.tiles = tiles;
  m.tile_side = tile_side;
  m.columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(tiles))));
  m.rows = (tiles + m.columns - 1) / m.columns;
  return m;
}

RasterImage layer_montage(const Layer& layer) {
  if (layer.dictionaries.empty()) throw InvalidArgument("layer has no dictionaries");
  const int side = layer.dictionaries.front().filter_side();
  int tiles = 0;
  for (const LocalDictionary& d : layer.dictionaries) tiles += d.atom_count();
  const MontageLayout m = montage_layout(tiles, side);

  RasterImage r{m.width(), m.height(), 1, 255, {}};
  r.samples.assign(static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height), 0);
  int t = 0;
  for (const LocalDictionary& d : layer.dictionaries) {
    for (int j = 0; j < d.atom_count(); ++j, ++t) {
      const auto atom = d.atom(j);
      const auto [lo, hi] = std::minmax_element(atom.begin(), atom.end());
      const double scale = *hi > *lo ? 255.0 / (*hi - *lo) : 0.0;
      const Pixel o = m.origin(t);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const double v = (atom[static_cast<std::size_t>(y * side + x)] - *lo) * scale;
          r.samples[static_cast<std::size_t>(o.y + y) * r.width + static_cast<std::size_t>(o.x + x)] =
              static_cast<std::uint16_t>(std::lround(v));
        }
      }
    }
  }
  return r;
}

void write_model_summary(std::ostream& out, const Model& model) {
  const ModelConfig& c = model.config;
  out << "format_version " << model.format_version << '\n'
      << "layers " << model.layers.size() << '\n'
      << "color_mode " << to_string(c.color_mode) << '\n'
      << "reuse_mode " << to_string(c.reuse_mode) << '\n'
      << "threshold " << c.threshold << '\n';
  for (const Layer& layer : model.layers) {
    const TreeEnsemble& e = layer.ensemble;
    std::size_t leaves = 0;
    int depth = 0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const DecisionTree& tree : e.trees()) {
      leaves += tree.leaf_count();
      depth = std::max(depth, tree.depth());
      for (const TreeNode& n : tree.nodes()) {
        if (!n.is_leaf) continue;
        lo = std::min(lo, n.response);
        hi = std::max(hi, n.response);
      }
    }
    const LocalDictionary& d = layer.dictionaries.front();
    out << "\nlayer " << layer.index << '\n'
        << "  dictionaries " << layer.dictionaries.size() << " x " << d.atom_count() << " atoms of "
        << d.filter_side() << 'x' << d.filter_side() << '\n'
        << "  compressor " << layer.compressor.in_channels() << " -> "
        << layer.compressor.out_channels() << '\n'
        << "  input_range " << layer.input_min << ' ' << layer.input_max << '\n'
        << "  vote_mode " << (e.mode() == VoteMode::additive ? "additive" : "averaged") << '\n'
        << "  base " << e.base() << '\n'
        << "  trees " << e.trees().size() << '\n'
        << "  leaves " << leaves << '\n';
    if (!e.trees().empty()) {
      out << "  mean_leaves_per_tree "
          << static_cast<double>(leaves) / static_cast<double>(e.trees().size()) << '\n'
          << "  max_depth " << depth << '\n'
          << "  leaf_response_range " << lo << ' ' << hi << '\n';
    }
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nucleus segmentation with sparse-coded boosted tree layers", "scd2te"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "Master seed; overrides the config file (default 42)");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on the manifest's train split");
  train_cmd->add_option("--manifest", ta.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "Model file (default <output_dir>/model.scd2te)");
  train_cmd->add_option("--log", ta.log, "Training log CSV (default: model path with .log.csv)");

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "Score and segment one image");
  predict_cmd->add_option("--model", pa.model, "Model file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--image", pa.image, "PGM or PNG image")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--out-score", pa.out_score, "Score map PGM (min-max to 8 bits)")->required();
  predict_cmd->add_option("--out-mask", pa.out_mask, "Binary mask PGM")->required();
  predict_cmd->add_option("--out-raw", pa.out_raw, "Raw f64 score sidecar");

  EvaluateArgs ea;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics over the manifest's test splits");
  evaluate_cmd->add_option("--model", ea.model, "Model file")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--manifest", ea.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--out", ea.out, "Report CSV")->required();

  AblateArgs aa;
  auto* ablate_cmd = app.add_subcommand("ablate", "Per-layer held-out F1 for each reuse mode");
  ablate_cmd->add_option("--manifest", aa.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--config", aa.config, "key = value config file")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", aa.out, "Trace CSV (default <output_dir>/ablation.csv)");
  ablate_cmd->add_option("--modes", aa.modes, "Reuse modes to compare")
      ->delimiter(',')
      ->check(CLI::IsMember({"none", "previous_only", "dense"}));

  InspectArgs ia;
  auto* inspect_cmd = app.add_subcommand("inspect", "Dictionary montages and a model summary");
  inspect_cmd->add_option("--model", ia.model, "Model file")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--out-dir", ia.out_dir, "Output directory")->required();

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus and its manifest");
  synth_cmd->add_option("--out-dir", sa.out_dir, "Output directory")->required();
  synth_cmd->add_option("--train", sa.train, "Train images")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--test", sa.test, "Test images")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--width", sa.width, "Image width")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--height", sa.height, "Image height")->check(CLI::PositiveNumber);

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  set_thread_count(g.threads);
  try {
    if (*train_cmd) cmd_train(ta, g, out, err);
    if (*predict_cmd) cmd_predict(pa, out);
    if (*evaluate_cmd) cmd_evaluate(ea, out);
    if (*ablate_cmd) cmd_ablate(aa, g, out);
    if (*inspect_cmd) cmd_inspect(ia, out);
    if (*synth_cmd) cmd_synth(sa, g, out);
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kSuccess;
}

}  // namespace scd2te::cli
