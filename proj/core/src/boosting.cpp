#include "scd2te/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>

#include "scd2te/parallel.hpp"
#include "scd2te/rng.hpp"

namespace scd2te {

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw InvalidArgument("feature matrix size mismatch");
}

void SampleSet::validate() const {
  if (targets.size() != features.rows() || base_scores.size() != features.rows()) {
    throw InvalidArgument("sample set: features, targets and base scores differ in length");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(features.data().begin(), features.data().end(), finite) ||
      !std::all_of(targets.begin(), targets.end(), finite) ||
      !std::all_of(base_scores.begin(), base_scores.end(), finite)) {
    throw InvalidArgument("sample set contains non-finite values");
  }
}

std::vector<double> SampleSet::residuals() const {
  std::vector<double> r(targets.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = targets[i] - base_scores[i];
  return r;
}

NodeBuildState NodeBuildState::from_instances(std::span<const double> residuals,
                                              std::vector<std::size_t> instances, int depth) {
  NodeBuildState s;
  s.instances = std::move(instances);
  s.depth = depth;
  for (std::size_t i : s.instances) {
    if (i >= residuals.size()) throw InvalidArgument("instance index out of range");
    s.grad_sum += residuals[i];
  }
  s.hess_sum = static_cast<double>(s.instances.size());
  return s;
}

double leaf_weight(const NodeBuildState& state, double xi) {
  if (state.instances.empty()) throw InvalidArgument("leaf_weight: empty instance set");
  return state.grad_sum / (state.hess_sum + 0.5 * xi);
}

double node_loss(const NodeBuildState& state, double xi) {
  if (state.instances.empty()) throw InvalidArgument("node_loss: empty instance set");
  return -(state.grad_sum * state.grad_sum) / (state.hess_sum + 0.5 * xi);
}

double split_gain(const NodeBuildState& parent, const NodeBuildState& left,
                  const NodeBuildState& right, double xi, double zeta) {
  if (left.instances.empty() || right.instances.empty() ||
      left.instances.size() + right.instances.size() != parent.instances.size()) {
    throw InvalidArgument("split_gain: children do not partition the parent");
  }
  std::vector<std::size_t> a = parent.instances;
  std::vector<std::size_t> b = left.instances;
  b.insert(b.end(), right.instances.begin(), right.instances.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b || std::adjacent_find(b.begin(), b.end()) != b.end()) {
    throw InvalidArgument("split_gain: children do not partition the parent");
  }
  const double half_xi = 0.5 * xi;
  return left.grad_sum * left.grad_sum / (left.hess_sum + half_xi) +
         right.grad_sum * right.grad_sum / (right.hess_sum + half_xi) -
         parent.grad_sum * parent.grad_sum / (parent.hess_sum + half_xi) - zeta;
}

void EnsembleConfig::validate() const {
  if (tree_count < 1) throw InvalidArgument("tree_count must be >= 1");
  if (!(xi >= 0.0)) throw InvalidArgument("xi must be >= 0");
  if (!(zeta >= 0.0)) throw InvalidArgument("zeta must be >= 0");
  if (max_depth < 0) throw InvalidArgument("max_depth must be >= 0");
  if (!(subsample_ratio > 0.0 && subsample_ratio <= 1.0)) {
    throw InvalidArgument("subsample_ratio must lie in (0,1]");
  }
  if (min_samples_leaf < 1) throw InvalidArgument("min_samples_leaf must be >= 1");
}

namespace {

// Threshold strictly above lo and at most hi, so that x < t separates them.
double split_point(double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  return lo < mid ? mid : hi;
}

bool beats(double gain, double best) {
  return gain > best + kGainTieTolerance * std::max(1.0, std::abs(best));
}

struct Candidate {
  double threshold;
  double gain;
};

std::optional<SplitCandidate> best_split(const SampleSet& samples,
                                         std::span<const double> residuals,
                                         const NodeBuildState& node, const EnsembleConfig& cfg) {
  const std::size_t n = node.instances.size();
  const std::size_t min_leaf = static_cast<std::size_t>(cfg.min_samples_leaf);
  if (n < 2 * min_leaf || n < 2) return std::nullopt;
  const std::size_t features = samples.features.cols();
  const double half_xi = 0.5 * cfg.xi;
  const double parent_score = node.grad_sum * node.grad_sum / (node.hess_sum + half_xi);

  // Candidates are computed per feature in parallel, then scanned in
  // (feature, threshold) order so the tie rule matches a sequential search.
  std::vector<std::vector<Candidate>> per_feature(features);
  parallel_for(features, [&](std::size_t f) {
    std::vector<std::pair<double, double>> column(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = node.instances[k];
      column[k] = {samples.features(i, f), residuals[i]};
    }
    std::stable_sort(column.begin(), column.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& out = per_feature[f];
    double left_sum = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
      left_sum += column[k - 1].second;
      if (k < min_leaf || n - k < min_leaf) continue;
      if (!(column[k - 1].first < column[k].first)) continue;
      const double right_sum = node.grad_sum - left_sum;
      const double hl = static_cast<double>(k);
      const double hr = static_cast<double>(n - k);
      const double gain = left_sum * left_sum / (hl + half_xi) +
                          right_sum * right_sum / (hr + half_xi) - parent_score - cfg.zeta;
      out.push_back({split_point(column[k - 1].first, column[k].first), gain});
    }
  });

  std::optional<SplitCandidate> best;
  for (std::size_t f = 0; f < features; ++f) {
    for (const Candidate& c : per_feature[f]) {
      if (!best || beats(c.gain, best->gain)) best = SplitCandidate{f, c.threshold, c.gain};
    }
  }
  if (!best || !(best->gain > 0.0)) return std::nullopt;
  return best;
}

struct BuildNode {
  NodeBuildState state;
  std::optional<SplitCandidate> split;
  int left = -1;
  int right = -1;
};

void emit_preorder(const std::vector<BuildNode>& build, int id, double xi,
                   std::vector<TreeNode>& out) {
  const BuildNode& b = build[static_cast<std::size_t>(id)];
  const auto slot = static_cast<std::int32_t>(out.size());
  out.emplace_back();
  if (b.left < 0) {
    out[slot].is_leaf = true;
    out[slot].response = leaf_weight(b.state, xi);
    return;
  }
  out[slot].is_leaf = false;
  out[slot].feature = static_cast<std::uint32_t>(b.split->feature);
  out[slot].threshold = b.split->threshold;
  out[slot].left = static_cast<std::int32_t>(out.size());
  emit_preorder(build, b.left, xi, out);
  out[slot].right = static_cast<std::int32_t>(out.size());
  emit_preorder(build, b.right, xi, out);
}

}  // namespace

std::optional<SplitCandidate> find_best_split(const SampleSet& samples, const NodeBuildState& node,
                                              const EnsembleConfig& cfg) {
  const auto residuals = samples.residuals();
  return best_split(samples, residuals, node, cfg);
}

// ---------------------------------------------------------------------------
// DecisionTree

DecisionTree::DecisionTree(std::vector<TreeNode> preorder_nodes) : nodes_(std::move(preorder_nodes)) {
  if (nodes_.empty()) throw InvalidArgument("a tree needs at least one node");
  // Walk in preorder and confirm the stored child links reproduce it.
  std::size_t next = 0;
  auto walk = [&](auto&& self, std::size_t id) -> void {
    if (id != next || id >= nodes_.size()) throw InvalidArgument("tree nodes are not in preorder");
    ++next;
    const TreeNode& n = nodes_[id];
    if (n.is_leaf) {
      if (!std::isfinite(n.response)) throw InvalidArgument("leaf response is not finite");
      return;
    }
    if (!std::isfinite(n.threshold)) throw InvalidArgument("split threshold is not finite");
    if (n.left < 0 || n.right < 0) throw InvalidArgument("internal node is missing a child");
    self(self, static_cast<std::size_t>(n.left));
    self(self, static_cast<std::size_t>(n.right));
  };
  walk(walk, 0);
  if (next != nodes_.size()) throw InvalidArgument("tree has unreachable nodes");
}

DecisionTree DecisionTree::leaf(double response) {
  TreeNode n;
  n.response = response;
  return DecisionTree(std::vector<TreeNode>{n});
}

std::size_t DecisionTree::leaf_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf; }));
}

int DecisionTree::depth() const noexcept {
  auto walk = [&](auto&& self, std::size_t id) -> int {
    const TreeNode& n = nodes_[id];
    if (n.is_leaf) return 0;
    return 1 + std::max(self(self, static_cast<std::size_t>(n.left)),
                        self(self, static_cast<std::size_t>(n.right)));
  };
  return walk(walk, 0);
}

std::size_t DecisionTree::route(std::span<const double> row) const {
  std::size_t id = 0;
  while (!nodes_[id].is_leaf) {
    const TreeNode& n = nodes_[id];
    id = static_cast<std::size_t>(row[n.feature] < n.threshold ? n.left : n.right);
  }
  return id;
}

long DecisionTree::max_feature() const noexcept {
  long m = -1;
  for (const TreeNode& n : nodes_) {
    if (!n.is_leaf) m = std::max(m, static_cast<long>(n.feature));
  }
  return m;
}

DecisionTree fit_tree(const SampleSet& samples, std::span<const double> residuals,
                      std::vector<std::size_t> rows, const EnsembleConfig& cfg) {
  cfg.validate();
  if (rows.empty()) throw InvalidArgument("fit_tree: no training rows");
  if (residuals.size() != samples.size()) throw InvalidArgument("fit_tree: residual length mismatch");

  std::vector<BuildNode> build;
  build.push_back({NodeBuildState::from_instances(residuals, std::move(rows), 0), {}, -1, -1});

  auto consider = [&](int id) {
    BuildNode& b = build[static_cast<std::size_t>(id)];
    if (b.state.depth < cfg.max_depth) b.split = best_split(samples, residuals, b.state, cfg);
  };

  // Best-first: highest gain first, earlier-created node on ties.
  auto order = [&](int a, int b) {
    const double ga = build[static_cast<std::size_t>(a)].split->gain;
    const double gb = build[static_cast<std::size_t>(b)].split->gain;
    if (ga != gb) return ga < gb;
    return a > b;
  };
  std::priority_queue<int, std::vector<int>, decltype(order)> frontier(order);
  consider(0);
  if (build[0].split) frontier.push(0);

  while (!frontier.empty()) {
    const int id = frontier.top();
    frontier.pop();
    const SplitCandidate split = *build[static_cast<std::size_t>(id)].split;
    std::vector<std::size_t> left_rows;
    std::vector<std::size_t> right_rows;
    const int depth = build[static_cast<std::size_t>(id)].state.depth + 1;
    for (std::size_t i : build[static_cast<std::size_t>(id)].state.instances) {
      (samples.features(i, split.feature) < split.threshold ? left_rows : right_rows).push_back(i);
    }
    const int left = static_cast<int>(build.size());
    build.push_back({NodeBuildState::from_instances(residuals, std::move(left_rows), depth), {}, -1, -1});
    const int right = static_cast<int>(build.size());
    build.push_back({NodeBuildState::from_instances(residuals, std::move(right_rows), depth), {}, -1, -1});
    build[static_cast<std::size_t>(id)].left = left;
    build[static_cast<std::size_t>(id)].right = right;
    for (int child : {left, right}) {
      consider(child);
      if (build[static_cast<std::size_t>(child)].split) frontier.push(child);
    }
  }

  std::vector<TreeNode> nodes;
  nodes.reserve(build.size());
  emit_preorder(build, 0, cfg.xi, nodes);
  return DecisionTree(std::move(nodes));
}

DecisionTree fit_tree(const SampleSet& samples, const EnsembleConfig& cfg) {
  samples.validate();
  if (samples.size() == 0) throw InvalidArgument("fit_tree: empty sample set");
  std::vector<std::size_t> rows(samples.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto residuals = samples.residuals();
  return fit_tree(samples, residuals, std::move(rows), cfg);
}

// ---------------------------------------------------------------------------
// TreeEnsemble

TreeEnsemble::TreeEnsemble(std::vector<DecisionTree> trees, std::vector<double> weights,
                           VoteMode mode, double base, std::size_t feature_count)
    : trees_(std::move(trees)),
      weights_(std::move(weights)),
      mode_(mode),
      base_(base),
      feature_count_(feature_count) {
  if (weights_.size() != trees_.size()) throw InvalidArgument("one weight per tree is required");
  if (!std::isfinite(base_)) throw InvalidArgument("ensemble base is not finite");
  const double expected =
      mode_ == VoteMode::additive ? 1.0 : (trees_.empty() ? 1.0 : 1.0 / trees_.size());
  for (double w : weights_) {
    if (w != expected) throw InvalidArgument("tree weight does not match the vote mode");
  }
  for (const DecisionTree& t : trees_) {
    if (t.max_feature() >= static_cast<long>(feature_count_)) {
      throw InvalidArgument("tree splits on a feature beyond the ensemble width");
    }
  }
}

TreeEnsemble TreeEnsemble::with_mode(std::vector<DecisionTree> trees, VoteMode mode, double base,
                                     std::size_t feature_count) {
  const double w = mode == VoteMode::additive ? 1.0 : 1.0 / static_cast<double>(trees.size());
  std::vector<double> weights(trees.size(), w);
  return TreeEnsemble(std::move(trees), std::move(weights), mode, base, feature_count);
}

double TreeEnsemble::predict_row(std::span<const double> row) const {
  double s = base_;
  for (std::size_t m = 0; m < trees_.size(); ++m) s += weights_[m] * trees_[m].predict(row);
  return s;
}

TreeEnsemble fit_ensemble(const SampleSet& samples, const EnsembleConfig& cfg,
                          EnsembleTrace* trace) {
  cfg.validate();
  samples.validate();
  const std::size_t t = samples.size();
  if (t == 0) throw InvalidArgument("fit_ensemble: empty sample set");

  double offset = 0.0;
  for (std::size_t i = 0; i < t; ++i) offset += samples.targets[i] - samples.base_scores[i];
  const double base = offset / static_cast<double>(t);

  std::vector<double> phi(t);
  for (std::size_t i = 0; i < t; ++i) phi[i] = samples.base_scores[i] + base;

  auto sse = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      const double e = samples.targets[i] - phi[i];
      s += e * e;
    }
    return s;
  };
  if (trace != nullptr) {
    *trace = EnsembleTrace{};
    trace->training_sse.push_back(sse());
  }

  Rng rng(derive_seed(cfg.seed, 0x74726565));  // "tree"
  const auto subsample = static_cast<std::size_t>(
      std::ceil(cfg.subsample_ratio * static_cast<double>(t) - 1e-9));
  std::vector<DecisionTree> trees;
  trees.reserve(static_cast<std::size_t>(cfg.tree_count));
  std::vector<double> residuals(t);
  for (int m = 0; m < cfg.tree_count; ++m) {
    std::vector<std::size_t> rows;
    if (subsample >= t) {
      rows.resize(t);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    } else {
      rows = rng.sample_without_replacement(t, std::max<std::size_t>(1, subsample));
    }
    for (std::size_t i = 0; i < t; ++i) residuals[i] = samples.targets[i] - phi[i];
    DecisionTree tree = fit_tree(samples, residuals, std::move(rows), cfg);
    parallel_for(t, [&](std::size_t i) { phi[i] += tree.predict(samples.features.row(i)); });
    trees.push_back(std::move(tree));
    if (trace != nullptr) trace->training_sse.push_back(sse());
  }
  if (trace != nullptr) trace->final_scores = phi;
  return TreeEnsemble::with_mode(std::move(trees), cfg.mode, base, samples.features.cols());
}

std::vector<double> predict(const TreeEnsemble& ensemble, const FeatureMatrix& features) {
  if (ensemble.feature_count() != 0 && features.cols() != ensemble.feature_count()) {
    throw InvalidArgument("feature width " + std::to_string(features.cols()) +
                          " does not match ensemble width " +
                          std::to_string(ensemble.feature_count()));
  }
  std::vector<double> out(features.rows());
  parallel_for(features.rows(), [&](std::size_t r) { out[r] = ensemble.predict_row(features.row(r)); });
  return out;
}

}  // namespace scd2te
