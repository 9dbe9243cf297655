#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "scd2te/error.hpp"

namespace scd2te {

/// Dense row-major feature matrix.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }
  const std::vector<double>& data() const noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Training rows with binary targets and the current ensemble output.
struct SampleSet {
  FeatureMatrix features;
  std::vector<double> targets;
  std::vector<double> base_scores;

  std::size_t size() const noexcept { return features.rows(); }
  /// Shapes agree and every entry is finite.
  void validate() const;
  /// y - base, per row.
  std::vector<double> residuals() const;
};

/// Sufficient statistics of one tree node under squared loss: G is the
/// residual sum over the node's rows, H the row count (unit curvature).
struct NodeBuildState {
  std::vector<std::size_t> instances;
  double grad_sum = 0.0;
  double hess_sum = 0.0;
  int depth = 0;

  static NodeBuildState from_instances(std::span<const double> residuals,
                                       std::vector<std::size_t> instances, int depth = 0);
};

/// G / (H + xi/2). The exact minimiser of the per-leaf regularised quadratic.
double leaf_weight(const NodeBuildState& state, double xi);

/// -G^2 / (H + xi/2).
double node_loss(const NodeBuildState& state, double xi);

/// Loss reduction of splitting parent into (left, right), net of the
/// per-leaf cost zeta. Throws InvalidArgument unless left and right
/// partition parent.
double split_gain(const NodeBuildState& parent, const NodeBuildState& left,
                  const NodeBuildState& right, double xi, double zeta);

enum class VoteMode : std::uint32_t { additive = 0, averaged = 1 };

struct EnsembleConfig {
  int tree_count = 30;
  double xi = 1.0;
  double zeta = 1e-3;
  int max_depth = 6;
  double subsample_ratio = 0.5;
  int min_samples_leaf = 8;
  std::uint64_t seed = 42;
  VoteMode mode = VoteMode::additive;

  void validate() const;
};

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
};

/// Two gains are treated as tied when they differ by less than this
/// fraction of max(1, |gain|); ties go to the earlier (feature, threshold).
inline constexpr double kGainTieTolerance = 1e-12;

/// Exact greedy search over every feature and every midpoint between
/// adjacent distinct values (the upper value if the midpoint rounds onto the
/// lower one). Rows x < threshold go left. Returns nothing if
/// no candidate has positive gain with both children >= min_samples_leaf.
std::optional<SplitCandidate> find_best_split(const SampleSet& samples, const NodeBuildState& node,
                                              const EnsembleConfig& cfg);

struct TreeNode {
  bool is_leaf = true;
  std::uint32_t feature = 0;
  double threshold = 0.0;
  double response = 0.0;
  /// Child node indices; meaningful for internal nodes only.
  std::int32_t left = -1;
  std::int32_t right = -1;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Axis-aligned regression tree stored in preorder (root at 0, left
/// subtree before right).
class DecisionTree {
 public:
  DecisionTree() : nodes_{TreeNode{}} {}
  /// Validates preorder layout, binary branching and child ranges.
  explicit DecisionTree(std::vector<TreeNode> preorder_nodes);

  static DecisionTree leaf(double response);

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t leaf_count() const noexcept;
  std::size_t internal_count() const noexcept { return nodes_.size() - leaf_count(); }
  int depth() const noexcept;
  /// Preorder position of the leaf a row reaches.
  std::size_t route(std::span<const double> row) const;
  double predict(std::span<const double> row) const { return nodes_[route(row)].response; }
  /// Largest feature index referenced by a split, or -1 for a single leaf.
  long max_feature() const noexcept;

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
};

/// Best-first growth on all rows of `samples` against y - base_scores.
DecisionTree fit_tree(const SampleSet& samples, const EnsembleConfig& cfg);

/// As fit_tree, restricted to the given rows and residuals.
DecisionTree fit_tree(const SampleSet& samples, std::span<const double> residuals,
                      std::vector<std::size_t> rows, const EnsembleConfig& cfg);

class TreeEnsemble {
 public:
  TreeEnsemble() = default;
  /// Checks that weights match the mode (1 for additive, 1/M for averaged).
  TreeEnsemble(std::vector<DecisionTree> trees, std::vector<double> weights, VoteMode mode,
               double base, std::size_t feature_count);

  /// A tree list with weights set from the mode.
  static TreeEnsemble with_mode(std::vector<DecisionTree> trees, VoteMode mode, double base,
                                std::size_t feature_count);

  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  VoteMode mode() const noexcept { return mode_; }
  double base() const noexcept { return base_; }
  std::size_t feature_count() const noexcept { return feature_count_; }

  double predict_row(std::span<const double> row) const;

  friend bool operator==(const TreeEnsemble&, const TreeEnsemble&) = default;

 private:
  std::vector<DecisionTree> trees_;
  std::vector<double> weights_;
  VoteMode mode_ = VoteMode::additive;
  double base_ = 0.0;
  std::size_t feature_count_ = 0;
};

struct EnsembleTrace {
  /// sum_i (y_i - phi_i^m)^2 for m = 0..M over all rows.
  std::vector<double> training_sse;
  /// phi^M on every row (additive accumulation).
  std::vector<double> final_scores;
};

/// Stagewise second-order boosting. phi^0 = base_scores + mean(y - base_scores);
/// tree m is fit on a seeded subsample against y - phi^{m-1} and added to
/// phi on all rows.
TreeEnsemble fit_ensemble(const SampleSet& samples, const EnsembleConfig& cfg,
                          EnsembleTrace* trace = nullptr);

/// base + sum_m alpha_m * h_m(row) for every row.
std::vector<double> predict(const TreeEnsemble& ensemble, const FeatureMatrix& features);

}  // namespace scd2te
