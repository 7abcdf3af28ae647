#include "poseforest/forest.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

#include "poseforest/parallel.hpp"
#include "poseforest/random.hpp"

namespace pf {

namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  template <typename T>
  void add(const T& value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (unsigned char b : bytes) h = (h ^ b) * 0x100000001b3ULL;
  }
};

double binary_entropy(double n, double nfg) {
  if (n <= 0) return 0.0;
  const double p = nfg / n;
  double h = 0;
  if (p > 0) h -= p * std::log(p);
  if (p < 1) h -= (1 - p) * std::log(1 - p);
  return h;
}

// Accumulated statistics of a sample set. The regression moments cover only
// the samples taking part in the regression objective.
struct Stats {
  double n = 0, nfg = 0, nreg = 0;
  std::array<double, 6> s{}, ss{};

  void add_class(bool fg) {
    n += 1;
    nfg += fg ? 1 : 0;
  }
  void add_reg(const Delta& y) {
    nreg += 1;
    for (int d = 0; d < 6; ++d) {
      s[d] += y[d];
      ss[d] += y[d] * y[d];
    }
  }
  Stats& operator+=(const Stats& o) {
    n += o.n, nfg += o.nfg, nreg += o.nreg;
    for (int d = 0; d < 6; ++d) s[d] += o.s[d], ss[d] += o.ss[d];
    return *this;
  }
  Stats operator-(const Stats& o) const {
    Stats r = *this;
    r.n -= o.n, r.nfg -= o.nfg, r.nreg -= o.nreg;
    for (int d = 0; d < 6; ++d) r.s[d] -= o.s[d], r.ss[d] -= o.ss[d];
    return r;
  }
  double sum_sq_dev() const {
    if (nreg <= 0) return 0.0;
    double total = 0;
    for (int d = 0; d < 6; ++d) total += std::max(0.0, ss[d] - s[d] * s[d] / nreg);
    return total;
  }
  double impurity(bool classification) const {
    return classification ? n * binary_entropy(n, nfg) : sum_sq_dev();
  }
};

SplitFeature draw_feature(const FeatureDomain& domain, Rng& rng) {
  std::array<FeatureKind, 4> kinds{};
  int nk = 0;
  if (domain.pair_difference) kinds[nk++] = FeatureKind::PairDifference;
  if (domain.center_difference) kinds[nk++] = FeatureKind::CenterDifference;
  if (domain.component_count > 0) kinds[nk++] = FeatureKind::Component;
  if (domain.component_difference && domain.component_count > 1) kinds[nk++] = FeatureKind::ComponentDifference;
  if (nk == 0) throw Error(ErrorKind::InvalidArgument, "feature domain is empty");

  SplitFeature f;
  f.kind = kinds[uniform_index(rng, nk)];
  auto offset = [&] {
    const int limit = std::clamp(domain.offset_limit, 0, 127);
    for (;;) {
      const int x = static_cast<int>(uniform_index(rng, 2 * limit + 1)) - limit;
      const int y = static_cast<int>(uniform_index(rng, 2 * limit + 1)) - limit;
      if (x * x + y * y <= limit * limit)
        return std::array<std::int8_t, 2>{static_cast<std::int8_t>(x), static_cast<std::int8_t>(y)};
    }
  };
  switch (f.kind) {
    case FeatureKind::PairDifference:
      f.u = offset();
      f.v = offset();
      break;
    case FeatureKind::CenterDifference:
      f.u = offset();
      break;
    case FeatureKind::ComponentDifference: {
      const auto n = static_cast<std::uint64_t>(domain.component_count);
      f.index = static_cast<std::uint16_t>(uniform_index(rng, n));
      f.set_second_index(static_cast<std::uint16_t>((f.index + 1 + uniform_index(rng, n - 1)) % n));
      break;
    }
    default:
      f.index = static_cast<std::uint16_t>(uniform_index(rng, domain.component_count));
      break;
  }
  return f;
}

class TreeBuilder {
 public:
  TreeBuilder(const TrainingData& data, const ForestConfig& config, std::uint64_t seed)
      : data_(data), config_(config), rng_(seed) {
    scaled_.reserve(data.labels.size());
    for (const auto& y : data.labels) {
      Delta s = y;
      s.head<3>() *= config.rotation_scale;
      for (int d = 0; d < 6; ++d) s[d] *= std::sqrt(config.label_weights[d]);
      scaled_.push_back(s);
    }
  }

  Tree build(TreeStats* stats) {
    std::vector<std::uint32_t> ids(data_.labels.size());
    for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;

    struct Pending {
      std::uint32_t node;
      std::size_t begin, end;
      int depth;
    };
    tree_.nodes.emplace_back();
    std::vector<Pending> stack{{0, 0, ids.size(), 0}};
    while (!stack.empty()) {
      const Pending p = stack.back();
      stack.pop_back();
      std::span<std::uint32_t> node_ids(ids.data() + p.begin, p.end - p.begin);
      Node split;
      std::size_t n_left = 0;
      if (p.depth < config_.max_depth && find_split(node_ids, split, n_left)) {
        const auto child = static_cast<std::uint32_t>(tree_.nodes.size());
        split.child = child;
        tree_.nodes[p.node] = split;
        tree_.nodes.emplace_back();
        tree_.nodes.emplace_back();
        stack.push_back({child + 1, p.begin + n_left, p.end, p.depth + 1});
        stack.push_back({child, p.begin, p.begin + n_left, p.depth + 1});
      } else {
        Node leaf;
        leaf.kind = static_cast<std::uint8_t>(FeatureKind::Leaf);
        leaf.child = static_cast<std::uint32_t>(tree_.leaves.size());
        tree_.nodes[p.node] = leaf;
        tree_.leaves.push_back(make_leaf(node_ids));
      }
    }
    if (stats) stats->feature_evaluations += evaluations_;
    return std::move(tree_);
  }

 private:
  bool regression_member(std::uint32_t id) const {
    return config_.objective == Objective::Regression || data_.is_foreground[id];
  }

  // Picks the best candidate split; on success reorders `ids` so the left
  // child comes first and returns its size through n_left.
  bool find_split(std::span<std::uint32_t> ids, Node& best_node, std::size_t& n_left) {
    const auto min_leaf = static_cast<std::size_t>(std::max(1, config_.min_samples_leaf));
    if (ids.size() < 2 * min_leaf) return false;

    Stats total;
    for (auto id : ids) {
      total.add_class(data_.is_foreground[id] != 0);
      if (regression_member(id)) total.add_reg(scaled_[id]);
    }
    bool classification = false;
    if (config_.objective == Objective::TwoStage) {
      const double purity = std::max(total.nfg, total.n - total.nfg) / total.n;
      classification = purity < config_.purity_switch;
      if (!classification && total.nreg < 2) return false;
    }
    const double parent_impurity = total.impurity(classification);
    if (!(parent_impurity > 0)) return false;

    values_.resize(ids.size());
    double best_gain = 0;
    bool found = false;
    SplitFeature best;
    bool best_missing_right = false;
    std::vector<float> thresholds;
    std::vector<Stats> buckets;
    std::vector<float> valid_values;

    for (int c = 0; c < config_.n_candidate_features; ++c) {
      SplitFeature f = draw_feature(config_.domain, rng_);
      data_.evaluate(f, ids, values_);
      evaluations_ += ids.size();

      valid_values.clear();
      for (float v : values_)
        if (!std::isnan(v)) valid_values.push_back(v);
      if (valid_values.size() < 2) continue;
      choose_thresholds(valid_values, thresholds);
      if (thresholds.empty()) continue;

      // Bucket b holds values in [thr[b-1], thr[b]); going left means value < thr.
      buckets.assign(thresholds.size() + 1, Stats{});
      Stats missing;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = ids[i];
        Stats& dst = std::isnan(values_[i])
                         ? missing
                         : buckets[std::upper_bound(thresholds.begin(), thresholds.end(), values_[i]) -
                                   thresholds.begin()];
        dst.add_class(data_.is_foreground[id] != 0);
        if (regression_member(id)) dst.add_reg(scaled_[id]);
      }
      const Stats valid = total - missing;
      const double valid_impurity = valid.impurity(classification);
      Stats left;
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        left += buckets[t];
        const Stats right = valid - left;
        if (left.n <= 0 || right.n <= 0) continue;
        // Missing samples follow the side with more valid samples.
        const bool missing_right = right.n > left.n;
        const double nl = left.n + (missing_right ? 0 : missing.n);
        const double nr = right.n + (missing_right ? missing.n : 0);
        if (nl < double(min_leaf) || nr < double(min_leaf)) continue;
        const double gain =
            valid_impurity - left.impurity(classification) - right.impurity(classification);
        if (gain > best_gain + 1e-12 * parent_impurity) {
          best_gain = gain;
          best = f;
          best.threshold = thresholds[t];
          best_missing_right = missing_right;
          found = true;
        }
      }
    }
    if (!found) return false;

    data_.evaluate(best, ids, values_);
    evaluations_ += ids.size();
    std::vector<std::uint32_t> lhs, rhs;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const float v = values_[i];
      const bool right = std::isnan(v) ? best_missing_right : !(v < best.threshold);
      (right ? rhs : lhs).push_back(ids[i]);
    }
    std::copy(lhs.begin(), lhs.end(), ids.begin());
    std::copy(rhs.begin(), rhs.end(), ids.begin() + lhs.size());
    n_left = lhs.size();

    best_node.kind = static_cast<std::uint8_t>(best.kind);
    best_node.flags = best_missing_right ? Node::kMissingRight : 0;
    best_node.index = best.index;
    best_node.ux = best.u[0], best_node.uy = best.u[1];
    best_node.vx = best.v[0], best_node.vy = best.v[1];
    best_node.threshold = best.threshold;
    return true;
  }

  // All midpoints between distinct values when there are few, otherwise
  // n_thresholds randomly drawn sample values. Sorted and unique.
  void choose_thresholds(std::vector<float>& values, std::vector<float>& out) {
    out.clear();
    const auto want = static_cast<std::size_t>(std::max(1, config_.n_thresholds));
    if (values.size() <= 4 * want) {
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        const float mid = values[i] + (values[i + 1] - values[i]) * 0.5f;
        out.push_back(mid > values[i] ? mid : values[i + 1]);
      }
    } else {
      for (std::size_t i = 0; i < want; ++i) out.push_back(values[uniform_index(rng_, values.size())]);
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
    }
  }

  Leaf make_leaf(std::span<const std::uint32_t> ids) const {
    Leaf leaf;
    std::size_t nfg = 0, nreg = 0;
    Delta mean = Delta::Zero();
    for (auto id : ids) {
      nfg += data_.is_foreground[id] ? 1 : 0;
      if (regression_member(id)) {
        mean += data_.labels[id];
        ++nreg;
      }
    }
    Delta var = Delta::Zero();
    if (nreg > 0) {
      mean /= double(nreg);
      for (auto id : ids)
        if (regression_member(id)) var += (data_.labels[id] - mean).cwiseAbs2();
      var /= double(nreg);
    }
    leaf.foreground_probability = ids.empty() ? 0.0f : float(double(nfg) / double(ids.size()));
    if (config_.objective == Objective::Regression) leaf.foreground_probability = nreg ? 1.0f : 0.0f;
    for (int d = 0; d < 6; ++d) {
      leaf.vote[d] = static_cast<float>(mean[d]);
      leaf.spread[d] = static_cast<float>(std::sqrt(var[d]));
    }
    leaf.sample_count = static_cast<std::uint32_t>(ids.size());
    return leaf;
  }

  const TrainingData& data_;
  const ForestConfig& config_;
  Rng rng_;
  std::vector<Delta> scaled_;
  std::vector<float> values_;
  std::size_t evaluations_ = 0;
  Tree tree_;
};

}  // namespace

std::uint64_t ForestConfig::hash() const {
  Fnv f;
  f.add(n_trees), f.add(max_depth), f.add(n_candidate_features), f.add(n_thresholds);
  f.add(min_samples_leaf), f.add(purity_switch), f.add(rotation_scale);
  for (double w : label_weights) f.add(w);
  f.add(static_cast<std::uint8_t>(objective));
  f.add(domain.pair_difference), f.add(domain.center_difference);
  f.add(domain.offset_limit), f.add(domain.component_count), f.add(offset_scale);
  f.add(domain.component_difference);
  return f.h;
}

std::size_t Tree::depth() const {
  std::size_t deepest = 0;
  std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    if (nodes[i].is_leaf()) {
      deepest = std::max(deepest, d);
    } else {
      stack.emplace_back(nodes[i].child, d + 1);
      stack.emplace_back(nodes[i].child + 1, d + 1);
    }
  }
  return deepest;
}

Forest::Forest(std::vector<Tree> trees, const ForestConfig& config)
    : trees_(std::move(trees)),
      offset_scale_(static_cast<float>(config.offset_scale)),
      rotation_scale_(static_cast<float>(config.rotation_scale)),
      max_depth_(config.max_depth),
      objective_(config.objective),
      config_hash_(config.hash()) {}

Forest Forest::from_parts(std::vector<Tree> trees, float offset_scale, float rotation_scale, int max_depth,
                          Objective objective, std::uint64_t config_hash) {
  Forest f;
  f.trees_ = std::move(trees);
  f.offset_scale_ = offset_scale;
  f.rotation_scale_ = rotation_scale;
  f.max_depth_ = max_depth;
  f.objective_ = objective;
  f.config_hash_ = config_hash;
  return f;
}

std::size_t Forest::node_count() const {
  std::size_t n = 0;
  for (const auto& t : trees_) n += t.nodes.size();
  return n;
}

std::size_t Forest::leaf_count() const {
  std::size_t n = 0;
  for (const auto& t : trees_) n += t.leaves.size();
  return n;
}

LeafEstimate Forest::aggregate(std::span<const Leaf* const> leaves) {
  LeafEstimate out;
  if (leaves.empty()) return out;
  double weight_sum = 0;
  for (const Leaf* leaf : leaves) {
    out.foreground_probability += leaf->foreground_probability;
    out.sample_count += leaf->sample_count;
    // Leaves that saw no foreground sample carry no pose vote.
    if (!(leaf->foreground_probability > 0.0f)) continue;
    double mean_spread = 0;
    for (float s : leaf->spread) mean_spread += s;
    mean_spread /= 6.0;
    const double w = 1.0 / (1e-6 + mean_spread);
    for (int d = 0; d < 6; ++d) {
      out.vote[d] += w * leaf->vote[d];
      out.spread[d] += w * leaf->spread[d];
    }
    weight_sum += w;
  }
  out.foreground_probability /= double(leaves.size());
  if (weight_sum > 0) {
    out.vote /= weight_sum;
    out.spread /= weight_sum;
    out.has_vote = true;
  }
  return out;
}

Tree train_tree(const TrainingData& data, const ForestConfig& config, std::uint64_t seed, TreeStats* stats) {
  if (data.labels.size() < 2) throw Error(ErrorKind::InsufficientSamples, "need at least two samples");
  if (data.is_foreground.size() != data.labels.size())
    throw Error(ErrorKind::InvalidArgument, "label and flag counts differ");
  if (config.max_depth < 1) throw Error(ErrorKind::InvalidArgument, "max_depth must be >= 1");
  TreeBuilder builder(data, config, seed);
  return builder.build(stats);
}

Forest train_forest(const TrainingData& data, const ForestConfig& config, std::uint64_t seed) {
  if (config.n_trees < 1) throw Error(ErrorKind::InvalidArgument, "n_trees must be >= 1");
  std::vector<Tree> trees(static_cast<std::size_t>(config.n_trees));
  parallel_for(trees.size(), config.threads,
               [&](std::size_t t) { trees[t] = train_tree(data, config, mix_seed(seed, t)); });
  return Forest(std::move(trees), config);
}

}  // namespace pf
