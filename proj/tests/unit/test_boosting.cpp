#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "scd2te/boosting.hpp"

namespace scd2te {
namespace {

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

SampleSet random_samples(std::size_t rows, std::size_t cols, std::mt19937_64& gen, bool binary = false) {
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.4);
  SampleSet s;
  s.features = FeatureMatrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) s.features(r, c) = nd(gen);
  }
  s.targets.resize(rows);
  for (double& t : s.targets) t = binary ? (coin(gen) ? 1.0 : 0.0) : nd(gen);
  s.base_scores.assign(rows, 0.0);
  return s;
}

SampleSet from_columns(const std::vector<double>& x, const std::vector<double>& y) {
  SampleSet s;
  s.features = FeatureMatrix(x.size(), 1, x);
  s.targets = y;
  s.base_scores.assign(y.size(), 0.0);
  return s;
}

TEST(LeafWeight, Examples) {
  const std::vector<double> r{2.0, 4.0};
  EXPECT_DOUBLE_EQ(leaf_weight(NodeBuildState::from_instances(r, {0, 1}), 0.0), 3.0);
  const std::vector<double> one{1.0};
  EXPECT_DOUBLE_EQ(leaf_weight(NodeBuildState::from_instances(one, {0}), 2.0), 0.5);
  const std::vector<double> zeros{0.0, 0.0, 0.0};
  EXPECT_EQ(leaf_weight(NodeBuildState::from_instances(zeros, {0, 1, 2}), 3.7), 0.0);
  EXPECT_THROW(leaf_weight(NodeBuildState{}, 1.0), InvalidArgument);
}

TEST(LeafWeight, IsTheQuadraticMinimiser) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::uniform_int_distribution<int> len(1, 20);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(len(gen)));
    for (double& v : r) v = nd(gen);
    const double xi = u(gen);
    const double w = leaf_weight(NodeBuildState::from_instances(r, iota_rows(r.size())), xi);
    EXPECT_NEAR(w, oracle::leaf_minimiser(r, xi), 1e-8);
    const double at_w = oracle::leaf_quadratic(r, xi, w);
    for (double v = w - 1.0; v <= w + 1.0; v += 1e-2) {
      EXPECT_GE(oracle::leaf_quadratic(r, xi, v), at_w - 1e-8);
    }
  }
}

TEST(NodeLoss, Examples) {
  const std::vector<double> r{1.0, 1.0};
  EXPECT_DOUBLE_EQ(node_loss(NodeBuildState::from_instances(r, {0, 1}), 0.0), -2.0);
  const std::vector<double> z{0.0};
  EXPECT_EQ(node_loss(NodeBuildState::from_instances(z, {0}), 1.0), 0.0);
}

TEST(NodeLoss, EqualsQuadraticAtOptimumLessConstant) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(7);
    for (double& v : r) v = nd(gen);
    const double xi = 0.3 * trial / 10.0;
    const auto s = NodeBuildState::from_instances(r, iota_rows(r.size()));
    double constant = 0.0;
    for (double v : r) constant += v * v;
    EXPECT_NEAR(node_loss(s, xi), oracle::leaf_quadratic(r, xi, leaf_weight(s, xi)) - constant, 1e-9);
  }
}

TEST(NodeBuildState, SumsMatchMembers) {
  const std::vector<double> r{0.5, -1.0, 2.0, 3.0};
  const auto s = NodeBuildState::from_instances(r, {3, 1}, 2);
  EXPECT_DOUBLE_EQ(s.grad_sum, 2.0);
  EXPECT_DOUBLE_EQ(s.hess_sum, 2.0);
  EXPECT_EQ(s.depth, 2);
  EXPECT_THROW(NodeBuildState::from_instances(r, {9}), InvalidArgument);
}

TEST(SplitGain, Examples) {
  const std::vector<double> r{-1.0, -1.0, 1.0, 1.0};
  const auto p = NodeBuildState::from_instances(r, {0, 1, 2, 3});
  const auto l = NodeBuildState::from_instances(r, {0, 1});
  const auto rt = NodeBuildState::from_instances(r, {2, 3});
  EXPECT_DOUBLE_EQ(split_gain(p, l, rt, 0.0, 0.0), 4.0);
  EXPECT_LT(split_gain(p, l, rt, 0.0, std::numeric_limits<double>::infinity()), 0.0);

  const std::vector<double> flat{2.0, 2.0, 2.0, 2.0};
  EXPECT_NEAR(split_gain(NodeBuildState::from_instances(flat, {0, 1, 2, 3}),
                         NodeBuildState::from_instances(flat, {0, 1}),
                         NodeBuildState::from_instances(flat, {2, 3}), 0.0, 0.0),
              0.0, 1e-12);
}

TEST(SplitGain, RejectsNonPartitions) {
  const std::vector<double> r{1.0, 2.0, 3.0};
  const auto p = NodeBuildState::from_instances(r, {0, 1, 2});
  EXPECT_THROW(split_gain(p, NodeBuildState::from_instances(r, {0}), NodeBuildState::from_instances(r, {0, 1}), 0, 0),
               InvalidArgument);
  EXPECT_THROW(split_gain(p, NodeBuildState::from_instances(r, {0}), NodeBuildState::from_instances(r, {1}), 0, 0),
               InvalidArgument);
}

TEST(SplitGain, EqualsNodeLossDifference) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(12);
    for (double& v : r) v = nd(gen);
    std::vector<std::size_t> rows = iota_rows(12);
    std::shuffle(rows.begin(), rows.end(), gen);
    const std::size_t cut = 1 + gen() % 11;
    const auto p = NodeBuildState::from_instances(r, iota_rows(12));
    const auto l = NodeBuildState::from_instances(r, {rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut)});
    const auto rt = NodeBuildState::from_instances(r, {rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end()});
    const double xi = u(gen);
    const double zeta = u(gen);
    EXPECT_NEAR(split_gain(p, l, rt, xi, zeta) + zeta, node_loss(p, xi) - node_loss(l, xi) - node_loss(rt, xi), 1e-9);
  }
}

TEST(FindBestSplit, FourSampleExample) {
  const SampleSet s = from_columns({1, 2, 3, 4}, {0, 0, 5, 5});
  EnsembleConfig cfg;
  cfg.xi = 0.0;
  cfg.zeta = 0.0;
  cfg.min_samples_leaf = 1;
  const auto best = find_best_split(s, NodeBuildState::from_instances(s.residuals(), iota_rows(4)), cfg);
  ASSERT_TRUE(best);
  EXPECT_EQ(best->feature, 0u);
  EXPECT_DOUBLE_EQ(best->threshold, 2.5);
  EXPECT_DOUBLE_EQ(best->gain, 25.0);

  const DecisionTree tree = fit_tree(s, cfg);
  EXPECT_EQ(tree.depth(), 1);
  EXPECT_DOUBLE_EQ(tree.predict(std::vector<double>{1.5}), 0.0);
  EXPECT_DOUBLE_EQ(tree.predict(std::vector<double>{3.5}), 5.0);
}

TEST(FindBestSplit, ConstantColumnsGiveNothing) {
  const SampleSet s = from_columns({1, 1, 1, 1}, {0, 1, 0, 1});
  EnsembleConfig cfg;
  cfg.min_samples_leaf = 1;
  EXPECT_FALSE(find_best_split(s, NodeBuildState::from_instances(s.residuals(), iota_rows(4)), cfg));
}

TEST(FindBestSplit, MatchesExhaustiveSearch) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const SampleSet s = random_samples(50, 5, gen);
    EnsembleConfig cfg;
    cfg.min_samples_leaf = 1 + static_cast<int>(gen() % 5);
    const auto r = s.residuals();
    const auto got = find_best_split(s, NodeBuildState::from_instances(r, iota_rows(50)), cfg);
    const auto want = oracle::exhaustive_split(s.features, r, iota_rows(50), cfg);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (!got) continue;
    EXPECT_EQ(got->feature, want->feature);
    EXPECT_EQ(got->threshold, want->threshold);
    EXPECT_NEAR(got->gain, want->gain, 1e-9);
  }
}

TEST(FitTree, MatchesGreedyOracle) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> rows(2, 64);
  std::uniform_int_distribution<int> cols(1, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const SampleSet s = random_samples(static_cast<std::size_t>(rows(gen)), static_cast<std::size_t>(cols(gen)), gen);
    EnsembleConfig cfg;
    cfg.max_depth = static_cast<int>(gen() % 3);
    cfg.min_samples_leaf = 1 + static_cast<int>(gen() % 4);
    cfg.xi = 0.5 * static_cast<double>(gen() % 4);
    cfg.zeta = 0.01 * static_cast<double>(gen() % 3);
    std::vector<TreeNode> want;
    oracle::greedy_tree(s.features, s.residuals(), iota_rows(s.size()), cfg, 0, want);
    const DecisionTree got = fit_tree(s, cfg);
    ASSERT_EQ(got.nodes().size(), want.size());
    for (std::size_t n = 0; n < want.size(); ++n) {
      EXPECT_EQ(got.nodes()[n].is_leaf, want[n].is_leaf);
      EXPECT_EQ(got.nodes()[n].left, want[n].left);
      EXPECT_EQ(got.nodes()[n].right, want[n].right);
      if (want[n].is_leaf) {
        EXPECT_NEAR(got.nodes()[n].response, want[n].response, 1e-12);
      } else {
        EXPECT_EQ(got.nodes()[n].feature, want[n].feature);
        EXPECT_EQ(got.nodes()[n].threshold, want[n].threshold);
      }
    }
  }
}

TEST(FitTree, NoWorseThanAnyStump) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 50; ++trial) {
    const SampleSet s = random_samples(40, 3, gen);
    EnsembleConfig cfg;
    cfg.max_depth = 2;
    cfg.min_samples_leaf = 1;
    cfg.zeta = 0.05;
    const auto r = s.residuals();
    const auto rows = iota_rows(s.size());
    const double fitted = oracle::regularised_loss(fit_tree(s, cfg), s.features, r, rows, cfg);
    EXPECT_LE(fitted, oracle::leaf_loss(r, rows, cfg.xi) + cfg.zeta + 1e-9);
    for (std::size_t f = 0; f < 3; ++f) {
      for (std::size_t i : rows) {
        const std::vector<TreeNode> nodes{{false, static_cast<std::uint32_t>(f), s.features(i, f), 0.0, 1, 2},
                                          {true, 0, 0.0, 0.0, -1, -1},
                                          {true, 0, 0.0, 0.0, -1, -1}};
        const DecisionTree stump(nodes);
        EXPECT_LE(fitted, oracle::regularised_loss(stump, s.features, r, rows, cfg) + 1e-9);
      }
    }
  }
}

TEST(FitTree, StructuralInvariants) {
  std::mt19937_64 gen(7);
  const SampleSet s = random_samples(300, 4, gen, true);
  EnsembleConfig cfg;
  cfg.max_depth = 4;
  cfg.min_samples_leaf = 5;
  const DecisionTree t = fit_tree(s, cfg);
  EXPECT_EQ(t.leaf_count(), t.internal_count() + 1);
  EXPECT_LE(t.depth(), 4);
  std::vector<std::size_t> per_leaf(t.nodes().size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t leaf = t.route(s.features.row(i));
    ASSERT_TRUE(t.nodes()[leaf].is_leaf);
    ++per_leaf[leaf];
  }
  for (std::size_t n = 0; n < t.nodes().size(); ++n) {
    if (t.nodes()[n].is_leaf) EXPECT_GE(per_leaf[n], 5u);
  }
}

TEST(FitTree, EqualResidualsGiveSingleLeaf) {
  const SampleSet s = from_columns({1, 2, 3, 4, 5}, {0.7, 0.7, 0.7, 0.7, 0.7});
  EnsembleConfig cfg;
  cfg.xi = 0.0;
  cfg.min_samples_leaf = 1;
  const DecisionTree t = fit_tree(s, cfg);
  ASSERT_EQ(t.nodes().size(), 1u);
  EXPECT_DOUBLE_EQ(t.nodes()[0].response, 0.7);

  cfg.max_depth = 0;
  const SampleSet v = from_columns({1, 2, 3, 4}, {0, 0, 5, 5});
  EXPECT_DOUBLE_EQ(fit_tree(v, cfg).nodes()[0].response, 2.5);
}

TEST(FitTree, InvariantToMonotoneFeatureTransform) {
  std::mt19937_64 gen(8);
  SampleSet s = random_samples(120, 3, gen, true);
  SampleSet t = s;
  for (std::size_t r = 0; r < t.size(); ++r) t.features(r, 1) = std::exp(2.0 * t.features(r, 1)) - 3.0;
  EnsembleConfig cfg;
  cfg.tree_count = 5;
  cfg.max_depth = 3;
  cfg.subsample_ratio = 1.0;
  const auto a = predict(fit_ensemble(s, cfg), s.features);
  const auto b = predict(fit_ensemble(t, cfg), t.features);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(DecisionTree, RejectsBrokenLayouts) {
  EXPECT_THROW(DecisionTree(std::vector<TreeNode>{}), InvalidArgument);
  const TreeNode leaf{true, 0, 0.0, 1.0, -1, -1};
  EXPECT_THROW(DecisionTree({{false, 0, 0.5, 0.0, 2, 1}, leaf, leaf}), InvalidArgument);
  EXPECT_THROW(DecisionTree({leaf, leaf}), InvalidArgument);
}

TEST(Ensemble, TwoTreeAveragedPrediction) {
  // Tree 1 splits on feature 0, tree 2 on feature 1; two instances.
  const DecisionTree t1({{false, 0, 0.5, 0.0, 1, 2}, {true, 0, 0.0, 2.1, -1, -1}, {true, 0, 0.0, -1.0, -1, -1}});
  const DecisionTree t2({{false, 1, 0.5, 0.0, 1, 2}, {true, 0, 0.0, 0.9, -1, -1}, {true, 0, 0.0, -0.9, -1, -1}});
  const TreeEnsemble e = TreeEnsemble::with_mode({t1, t2}, VoteMode::averaged, 0.0, 2);
  EXPECT_EQ(e.weights(), (std::vector<double>{0.5, 0.5}));
  const FeatureMatrix x(2, 2, {0.0, 0.0, 1.0, 1.0});
  const auto p = predict(e, x);
  EXPECT_EQ(p[0], 1.5);
  EXPECT_EQ(p[1], -0.95);
}

TEST(Ensemble, WeightsMustMatchMode) {
  const auto t = DecisionTree::leaf(1.0);
  EXPECT_THROW(TreeEnsemble({t, t}, {1.0, 0.5}, VoteMode::additive, 0.0, 1), InvalidArgument);
  EXPECT_THROW(TreeEnsemble({t, t}, {1.0, 1.0}, VoteMode::averaged, 0.0, 1), InvalidArgument);
  EXPECT_THROW(TreeEnsemble({t}, {1.0, 1.0}, VoteMode::additive, 0.0, 1), InvalidArgument);
}

TEST(Ensemble, EmptyEnsemblePredictsBase) {
  const TreeEnsemble e({}, {}, VoteMode::additive, 0.25, 3);
  const FeatureMatrix x(4, 3);
  for (double v : predict(e, x)) EXPECT_EQ(v, 0.25);
  EXPECT_THROW(predict(e, FeatureMatrix(2, 2)), InvalidArgument);
}

TEST(Ensemble, ConstantModelPredictsMeanTarget) {
  std::mt19937_64 gen(9);
  const SampleSet s = random_samples(37, 2, gen, true);
  EnsembleConfig cfg;
  cfg.tree_count = 1;
  cfg.subsample_ratio = 1.0;
  cfg.max_depth = 0;
  cfg.xi = 0.0;
  const double mean = std::accumulate(s.targets.begin(), s.targets.end(), 0.0) / 37.0;
  for (double v : predict(fit_ensemble(s, cfg), s.features)) EXPECT_NEAR(v, mean, 1e-12);
}

TEST(Ensemble, AdditiveTrainingLossNeverIncreases) {
  std::mt19937_64 gen(10);
  for (int trial = 0; trial < 5; ++trial) {
    const SampleSet s = random_samples(200, 4, gen);
    EnsembleConfig cfg;
    cfg.tree_count = 30;
    cfg.zeta = 0.0;
    cfg.subsample_ratio = 1.0;
    cfg.max_depth = 3;
    EnsembleTrace trace;
    const TreeEnsemble e = fit_ensemble(s, cfg, &trace);
    ASSERT_EQ(trace.training_sse.size(), 31u);
    for (std::size_t m = 1; m < trace.training_sse.size(); ++m) {
      EXPECT_LE(trace.training_sse[m], trace.training_sse[m - 1] + 1e-9);
    }
    const auto p = predict(e, s.features);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], trace.final_scores[i], 1e-12);
  }
}

TEST(Ensemble, SeededAndDeterministic) {
  std::mt19937_64 gen(11);
  const SampleSet s = random_samples(150, 3, gen, true);
  EnsembleConfig cfg;
  cfg.tree_count = 8;
  const TreeEnsemble a = fit_ensemble(s, cfg);
  EXPECT_EQ(a, fit_ensemble(s, cfg));
  cfg.seed = 7;
  EXPECT_NE(a, fit_ensemble(s, cfg));
}

TEST(Ensemble, AveragedModeStoresReciprocalWeights) {
  std::mt19937_64 gen(12);
  const SampleSet s = random_samples(60, 2, gen, true);
  EnsembleConfig cfg;
  cfg.tree_count = 4;
  cfg.mode = VoteMode::averaged;
  const TreeEnsemble e = fit_ensemble(s, cfg);
  for (double w : e.weights()) EXPECT_EQ(w, 0.25);
}

TEST(EnsembleConfig, Validation) {
  EnsembleConfig cfg;
  cfg.tree_count = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.subsample_ratio = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.xi = -1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(SampleSet, Validation) {
  SampleSet s = from_columns({1, 2}, {0, 1});
  EXPECT_NO_THROW(s.validate());
  s.targets.push_back(1);
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = from_columns({1, std::nan("")}, {0, 1});
  EXPECT_THROW(s.validate(), InvalidArgument);
}

}  // namespace
}  // namespace scd2te
