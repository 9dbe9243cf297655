#include <benchmark/benchmark.h>

#include <random>

#include "scd2te/boosting.hpp"
#include "scd2te/csc.hpp"
#include "scd2te/pipeline.hpp"
#include "scd2te/synthetic.hpp"

namespace {

using namespace scd2te;

LocalDictionary random_dictionary(int side, int count, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<double> atoms(static_cast<std::size_t>(side * side * count));
  for (double& v : atoms) v = nd(gen);
  return LocalDictionary::normalized(side, count, std::move(atoms));
}

void BM_Encode(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const int atoms = static_cast<int>(state.range(1));
  SyntheticConfig sc;
  sc.width = 96;
  sc.height = 96;
  const ScalarGrid image = highpass(generate_synthetic(sc, 0).image, 8);
  const LocalDictionary dict = random_dictionary(side, atoms, 1);
  SparseCodingConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(encode(image, dict, cfg));
  state.SetItemsProcessed(state.iterations() * image.size());
}
BENCHMARK(BM_Encode)->Args({9, 8})->Args({17, 32})->Unit(benchmark::kMillisecond);

SampleSet regression_set(std::size_t rows, std::size_t cols) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  SampleSet s;
  s.features = FeatureMatrix(rows, cols);
  s.targets.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) s.features(r, c) = nd(gen);
    s.targets[r] = s.features(r, 0) > 0.3 ? 1.0 : 0.0;
  }
  s.base_scores.assign(rows, 0.0);
  return s;
}

void BM_FitEnsemble(benchmark::State& state) {
  const SampleSet s = regression_set(static_cast<std::size_t>(state.range(0)), 32);
  EnsembleConfig cfg;
  cfg.tree_count = 10;
  for (auto _ : state) benchmark::DoNotOptimize(fit_ensemble(s, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitEnsemble)->Arg(5000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_PredictImage(benchmark::State& state) {
  SyntheticConfig sc;
  sc.width = 64;
  sc.height = 64;
  std::vector<TrainingExample> data;
  for (const SyntheticSample& s : synthetic_corpus(sc, 2)) data.push_back({{s.image}, s.mask});
  ModelConfig cfg;
  cfg.layer_count = 2;
  cfg.filter_sides = {7, 7};
  cfg.atom_counts = {6, 6};
  cfg.compressed_channels = {16, 16};
  cfg.samples_per_layer = 3000;
  cfg.compressor_samples = 1000;
  cfg.sparse.dict_epochs = 2;
  cfg.ensemble.tree_count = 10;
  const Model model = train(data, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(predict_image(model, data.front().planes));
  state.SetItemsProcessed(state.iterations() * data.front().planes.front().size());
}
BENCHMARK(BM_PredictImage)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
