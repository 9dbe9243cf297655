#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "scd2te/commands.hpp"

namespace scd2te {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "scd2te");
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Synthetic corpus, tiny config and one trained model shared by the suite.
class CliCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    const Result synth = run_cli({"synth", "--out-dir", path("data").string(), "--train", "3", "--test", "2",
                                  "--width", "48", "--height", "48"});
    ASSERT_EQ(synth.code, 0) << synth.err;
    std::ofstream cfg(path("tiny.cfg"));
    write_run_config(cfg, RunConfig{testing::tiny_config(2), path("runs")});
    cfg.close();
    const Result train = run_cli({"train", "--manifest", manifest().string(), "--config",
                                  path("tiny.cfg").string(), "--out", model().string()});
    ASSERT_EQ(train.code, 0) << train.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path path(const std::string& name) { return *dir_ / name; }
  static fs::path manifest() { return path("data") / "manifest.csv"; }
  static fs::path model() { return path("model.scd2te"); }

  static TempDir* dir_;
};

TempDir* CliCorpus::dir_ = nullptr;

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli({"--help"}).code, cli::kSuccess);
  EXPECT_EQ(run_cli({}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"train", "--manifest", "/nonexistent/m.csv"}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"predict", "--model", "/nonexistent.scd2te", "--image", "/nonexistent.pgm",
                     "--out-score", "a", "--out-mask", "b"})
                .code,
            cli::kUsageError);
  EXPECT_EQ(run_cli({"train"}).code, cli::kUsageError);
}

TEST(Cli, SynthWritesManifestAndImages) {
  TempDir dir;
  const Result r = run_cli({"synth", "--out-dir", dir.path().string(), "--train", "2", "--test", "1",
                            "--width", "40", "--height", "30"});
  ASSERT_EQ(r.code, 0) << r.err;
  const DatasetManifest m = load_manifest(dir / "manifest.csv");
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.with_split(Split::train).size(), 2u);
  EXPECT_EQ(m.with_split(Split::same_test).size(), 1u);
  const RasterImage img = read_raster(dir / "test_0.pgm");
  EXPECT_EQ(img.width, 40);
  EXPECT_EQ(img.height, 30);
  EXPECT_EQ(img.maxval, 65535);
  const auto samples = synthetic_corpus([] {
    SyntheticConfig c;
    c.width = 40;
    c.height = 30;
    return c;
  }(), 1, 2);
  EXPECT_EQ(load_mask(dir / "test_0_mask.pgm"), samples.front().mask);
}

TEST_F(CliCorpus, BadConfigIsAUsageError) {
  {
    std::ofstream f(path("bad.cfg"));
    f << "layer_count = 2\nno_such_key = 1\n";
  }
  const Result r = run_cli({"train", "--manifest", manifest().string(), "--config", path("bad.cfg").string()});
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  {
    std::ofstream f(path("inconsistent.cfg"));
    f << "layer_count = 2\natom_counts = 4,4,4\n";
  }
  EXPECT_EQ(run_cli({"train", "--manifest", manifest().string(), "--config",
                     path("inconsistent.cfg").string()})
                .code,
            cli::kUsageError);
}

TEST_F(CliCorpus, TrainWritesModelAndLog) {
  const Model m = load_model(model());
  EXPECT_EQ(m.layers.size(), 2u);
  const auto log = lines_of(testing::read_file(fs::path(model()).replace_extension(".log.csv")));
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0], "layer,time_s,train_f1");
  EXPECT_EQ(log[1].rfind("1,", 0), 0u);
  EXPECT_EQ(log[2].rfind("2,", 0), 0u);
}

TEST_F(CliCorpus, TrainIsDeterministicAndMatchesLibrary) {
  const fs::path again = path("again.scd2te");
  const Result r = run_cli({"train", "--manifest", manifest().string(), "--config",
                            path("tiny.cfg").string(), "--out", again.string(), "--log",
                            path("again.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(testing::read_file(again), testing::read_file(model()));

  const auto data = cli::load_split(load_manifest(manifest()), {Split::train}, ColorMode::luminance);
  const Model direct = train(data, testing::tiny_config(2));
  EXPECT_EQ(serialize_model(direct), serialize_model(load_model(model())));
}

TEST_F(CliCorpus, SeedOverrideChangesTheModel) {
  const fs::path other = path("seed7.scd2te");
  const Result r = run_cli({"--seed", "7", "train", "--manifest", manifest().string(), "--config",
                            path("tiny.cfg").string(), "--out", other.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_model(other).config.seed, 7u);
  EXPECT_NE(testing::read_file(other), testing::read_file(model()));
}

TEST_F(CliCorpus, PredictMatchesLibrary) {
  const fs::path image = path("data") / "test_0.pgm";
  const Result r = run_cli({"predict", "--model", model().string(), "--image", image.string(), "--out-score",
                            path("s.pgm").string(), "--out-mask", path("m.pgm").string(), "--out-raw",
                            path("s.raw").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Prediction p = predict_image(load_model(model()), load_image(image));
  EXPECT_EQ(cli::read_score_sidecar(path("s.raw")), p.scores);
  EXPECT_EQ(load_mask(path("m.pgm")), p.mask);
  EXPECT_EQ(read_raster(path("s.pgm")).samples, cli::score_to_raster(p.scores).samples);
}

TEST_F(CliCorpus, ConstantModelGivesConstantOutput) {
  Model m = load_model(model());
  for (Layer& layer : m.layers) {
    layer.ensemble = TreeEnsemble({}, {}, VoteMode::additive, 0.7, layer.ensemble.feature_count());
  }
  save_model(m, path("const.scd2te"));
  const Result r = run_cli({"predict", "--model", path("const.scd2te").string(), "--image",
                            (path("data") / "test_1.pgm").string(), "--out-score", path("c.pgm").string(),
                            "--out-mask", path("cm.pgm").string(), "--out-raw", path("c.raw").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const ScoreMap raw = cli::read_score_sidecar(path("c.raw"));
  const RasterImage shown = read_raster(path("c.pgm"));
  const BinaryMask mask = load_mask(path("cm.pgm"));
  for (double v : raw.values()) EXPECT_EQ(v, 0.7);
  for (std::uint16_t v : shown.samples) EXPECT_EQ(v, 0);
  for (std::uint8_t v : mask.values()) EXPECT_EQ(v, 1);
}

TEST_F(CliCorpus, EvaluateMatchesLibrary) {
  const Result r = run_cli({"evaluate", "--model", model().string(), "--manifest", manifest().string(),
                            "--out", path("report.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(testing::read_file(path("report.csv")));
  ASSERT_EQ(rows.size(), 1u + 2u + 3u);
  std::ostringstream expected;
  cli::evaluate_manifest(load_model(model()), load_manifest(manifest())).write_csv(expected);
  EXPECT_EQ(testing::read_file(path("report.csv")), expected.str());
  EXPECT_EQ(rows[1].rfind("test_0.pgm,synthetic,", 0), 0u);
}

TEST_F(CliCorpus, AblateSingleLayerModesAgree) {
  {
    std::ofstream f(path("one.cfg"));
    write_run_config(f, RunConfig{testing::tiny_config(1), path("runs")});
  }
  const Result r = run_cli({"ablate", "--manifest", manifest().string(), "--config", path("one.cfg").string(),
                            "--out", path("ablation.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(testing::read_file(path("ablation.csv")));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "mode,layer,time_s,f1");
  std::vector<std::string> f1s;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> cols;
    std::istringstream in(rows[i]);
    for (std::string c; std::getline(in, c, ',');) cols.push_back(c);
    ASSERT_EQ(cols.size(), 4u);
    EXPECT_EQ(cols[1], "1");
    f1s.push_back(cols[3]);
  }
  EXPECT_EQ(rows[1].rfind("none,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("previous_only,", 0), 0u);
  EXPECT_EQ(rows[3].rfind("dense,", 0), 0u);
  EXPECT_EQ(f1s[0], f1s[1]);
  EXPECT_EQ(f1s[1], f1s[2]);
}

TEST_F(CliCorpus, AblateDefaultsToOutputDir) {
  const Result r = run_cli({"ablate", "--manifest", manifest().string(), "--config", path("tiny.cfg").string(),
                            "--modes", "dense"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(testing::read_file(path("runs") / "ablation.csv"));
  EXPECT_EQ(rows.size(), 3u);
  EXPECT_EQ(run_cli({"ablate", "--manifest", manifest().string(), "--modes", "sideways"}).code,
            cli::kUsageError);
}

TEST_F(CliCorpus, InspectWritesMontages) {
  const Result r = run_cli({"inspect", "--model", model().string(), "--out-dir", path("inspect").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Model m = load_model(model());
  for (const Layer& layer : m.layers) {
    const RasterImage img = read_raster(path("inspect") / ("layer_" + std::to_string(layer.index) + ".pgm"));
    const LocalDictionary& d = layer.dictionaries.front();
    const cli::MontageLayout lay = cli::montage_layout(d.atom_count(), d.filter_side());
    ASSERT_EQ(img.width, lay.width());
    ASSERT_EQ(img.height, lay.height());
    for (int j = 0; j < d.atom_count(); ++j) {
      const auto atom = d.atom(j);
      const auto [lo, hi] = std::minmax_element(atom.begin(), atom.end());
      const Pixel o = lay.origin(j);
      for (int y = 0; y < d.filter_side(); ++y) {
        for (int x = 0; x < d.filter_side(); ++x) {
          const double want = (atom[static_cast<std::size_t>(y * d.filter_side() + x)] - *lo) / (*hi - *lo);
          const double got = img.samples[static_cast<std::size_t>((o.y + y) * img.width + o.x + x)] / 255.0;
          EXPECT_NEAR(got, want, 0.5 / 255.0 + 1e-12);
        }
      }
    }
    // Separator lines stay black.
    for (int x = 0; x < img.width; ++x) EXPECT_EQ(img.samples[static_cast<std::size_t>(x)], 0);
  }
  const std::string summary = testing::read_file(path("inspect") / "summary.txt");
  EXPECT_NE(summary.find("layer 2"), std::string::npos);
}

TEST(Cli, MontageLayout) {
  const cli::MontageLayout m = cli::montage_layout(10, 5);
  EXPECT_EQ(m.columns, 4);
  EXPECT_EQ(m.rows, 3);
  EXPECT_EQ(m.width(), 25);
  EXPECT_EQ(m.height(), 19);
  EXPECT_EQ(m.origin(5), (Pixel{7, 7}));
  EXPECT_THROW(cli::montage_layout(0, 5), InvalidArgument);
}

TEST(Cli, ScoreRasterAndSidecar) {
  TempDir dir;
  ScoreMap s(3, 2, std::vector<double>{-1.0, 0.0, 1.0, 0.5, 0.25, 1.0 / 3.0});
  const RasterImage r = cli::score_to_raster(s);
  EXPECT_EQ(r.samples.front(), 0);
  EXPECT_EQ(r.samples[2], 255);
  cli::write_score_sidecar(dir / "x.raw", s);
  EXPECT_EQ(cli::read_score_sidecar(dir / "x.raw"), s);
  EXPECT_EQ(testing::read_file(dir / "x.raw").size(), 12u + 6u * 8u);
  std::ofstream(dir / "bad.raw") << "NOPE";
  EXPECT_THROW(cli::read_score_sidecar(dir / "bad.raw"), FormatError);
}

}  // namespace
}  // namespace scd2te
