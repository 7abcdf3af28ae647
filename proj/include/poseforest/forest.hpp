#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "poseforest/error.hpp"
#include "poseforest/geom.hpp"

namespace pf {

enum class FeatureKind : std::uint8_t {
  Leaf = 0,
  PairDifference = 1,    // D(c + u/d0) - D(c + v/d0)
  CenterDifference = 2,  // D(c + u/d0) - D(c)
  Component = 3,         // entry `index` of a precomputed feature vector
  ComponentDifference = 4,  // x[index] - x[second], second packed into u
};

/// Split test `value < threshold`. Offsets are in units of the forest's
/// offset scale (pixel-meters); evaluators divide them by the window depth.
struct SplitFeature {
  FeatureKind kind = FeatureKind::Component;
  std::uint16_t index = 0;
  std::array<std::int8_t, 2> u{0, 0};
  std::array<std::int8_t, 2> v{0, 0};
  float threshold = 0.0f;

  std::uint16_t second_index() const {
    return static_cast<std::uint16_t>(std::uint8_t(u[0]) | (std::uint16_t(std::uint8_t(u[1])) << 8));
  }
  void set_second_index(std::uint16_t j) {
    u = {static_cast<std::int8_t>(j & 0xff), static_cast<std::int8_t>(j >> 8)};
  }
};

/// Packed 16-byte node. Split nodes keep their children adjacent at
/// `child` and `child + 1`; leaf nodes index the leaf table.
struct Node {
  std::uint8_t kind = 0;
  std::uint8_t flags = 0;  // bit 0: missing values go right
  std::uint16_t index = 0;
  std::int8_t ux = 0, uy = 0, vx = 0, vy = 0;
  float threshold = 0.0f;
  std::uint32_t child = 0;

  static constexpr std::uint8_t kMissingRight = 1;

  bool is_leaf() const { return kind == static_cast<std::uint8_t>(FeatureKind::Leaf); }
  SplitFeature feature() const {
    return {static_cast<FeatureKind>(kind), index, {ux, uy}, {vx, vy}, threshold};
  }
};
static_assert(sizeof(Node) == 16);

struct Leaf {
  float foreground_probability = 0.0f;
  std::array<float, 6> vote{};
  std::array<float, 6> spread{};
  std::uint32_t sample_count = 0;
};

/// Forest output: averaged probability and spread-weighted vote.
struct LeafEstimate {
  double foreground_probability = 0.0;
  Delta vote = Delta::Zero();
  Delta spread = Delta::Zero();
  std::size_t sample_count = 0;
  bool has_vote = false;
};

struct Tree {
  std::vector<Node> nodes;
  std::vector<Leaf> leaves;

  std::size_t depth() const;
};

enum class Objective : std::uint8_t {
  /// Entropy over the foreground flag until purity >= purity_switch, then
  /// label variance over foreground samples.
  TwoStage = 0,
  /// Label variance over all samples.
  Regression = 1,
};

/// Which split tests the learner may draw.
struct FeatureDomain {
  bool pair_difference = false;
  bool center_difference = false;
  int offset_limit = 127;  // disk radius in offset units, <= 127
  int component_count = 0;
  /// Also draw differences of two components (needs component_count > 1).
  bool component_difference = false;
};

struct ForestConfig {
  int n_trees = 10;
  int max_depth = 15;
  int n_candidate_features = 500;
  int n_thresholds = 10;
  int min_samples_leaf = 20;
  double purity_switch = 0.95;
  /// Multiplies rotation label dims (radians) before variance is measured;
  /// the mesh diameter makes them comparable to meters.
  double rotation_scale = 1.0;
  /// Per-dimension weights on the (scaled) label variance.
  std::array<double, 6> label_weights{1, 1, 1, 1, 1, 1};
  Objective objective = Objective::TwoStage;
  FeatureDomain domain;
  /// Pixel-meters per offset unit; stored for evaluators.
  double offset_scale = 1.0;
  int threads = 1;

  std::uint64_t hash() const;
};

/// Training labels and flags, plus a batch evaluator for feature values.
/// `evaluate(feature, ids, out)` writes the value of `feature` for each
/// sample id, NaN where the value is missing.
struct TrainingData {
  std::span<const Delta> labels;
  std::span<const std::uint8_t> is_foreground;
  std::function<void(const SplitFeature&, std::span<const std::uint32_t>, std::span<float>)> evaluate;
};

struct TreeStats {
  std::size_t feature_evaluations = 0;
};

class Forest {
 public:
  Forest() = default;
  Forest(std::vector<Tree> trees, const ForestConfig& config);

  const std::vector<Tree>& trees() const { return trees_; }
  bool empty() const { return trees_.empty(); }

  double offset_scale() const { return offset_scale_; }
  double rotation_scale() const { return rotation_scale_; }
  int max_depth() const { return max_depth_; }
  Objective objective() const { return objective_; }
  std::uint64_t config_hash() const { return config_hash_; }
  std::size_t node_count() const;
  std::size_t leaf_count() const;

  /// Routes the context down every tree. `Context` supplies
  /// `float evaluate(const SplitFeature&) const` (NaN for missing).
  template <typename Context>
  LeafEstimate predict(const Context& context, std::size_t* evaluations = nullptr) const {
    std::vector<const Leaf*> reached;
    reached.reserve(trees_.size());
    for (const auto& tree : trees_) reached.push_back(&route(tree, context, evaluations));
    return aggregate(reached);
  }

  template <typename Context>
  static const Leaf& route(const Tree& tree, const Context& context, std::size_t* evaluations = nullptr) {
    std::uint32_t i = 0;
    while (!tree.nodes[i].is_leaf()) {
      const Node& n = tree.nodes[i];
      const float value = context.evaluate(n.feature());
      if (evaluations) ++*evaluations;
      const bool right = std::isnan(value) ? (n.flags & Node::kMissingRight) != 0 : !(value < n.threshold);
      i = n.child + (right ? 1u : 0u);
    }
    return tree.leaves[tree.nodes[i].child];
  }

  static LeafEstimate aggregate(std::span<const Leaf* const> leaves);

  /// Reassembles a forest from decoded parts (see model_io).
  static Forest from_parts(std::vector<Tree> trees, float offset_scale, float rotation_scale,
                           int max_depth, Objective objective, std::uint64_t config_hash);

 private:
  std::vector<Tree> trees_;
  float offset_scale_ = 1.0f;  // stored at file precision
  float rotation_scale_ = 1.0f;
  int max_depth_ = 0;
  Objective objective_ = Objective::TwoStage;
  std::uint64_t config_hash_ = 0;
};

/// Greedy top-down growth of one tree. Deterministic per (data, config, seed).
/// Throws InsufficientSamples for fewer than two samples.
Tree train_tree(const TrainingData& data, const ForestConfig& config, std::uint64_t seed,
                TreeStats* stats = nullptr);

/// Trains config.n_trees trees with independent seeds, in parallel up to
/// config.threads workers.
Forest train_forest(const TrainingData& data, const ForestConfig& config, std::uint64_t seed);

}  // namespace pf
