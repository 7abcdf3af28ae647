#include <doctest.h>

#include <algorithm>
#include <limits>

#include "poseforest/forest.hpp"
#include "poseforest/model_io.hpp"
#include "test_util.hpp"

using namespace pf;

namespace {

struct VectorContext {
  std::vector<float> x;
  float evaluate(const SplitFeature& f) const { return x[f.index]; }
};

struct Dataset {
  std::vector<VectorContext> contexts;
  std::vector<Delta> labels;
  std::vector<std::uint8_t> fg;

  TrainingData data() const {
    return {labels, fg,
            [this](const SplitFeature& f, std::span<const std::uint32_t> ids, std::span<float> out) {
              for (std::size_t i = 0; i < ids.size(); ++i) out[i] = contexts[ids[i]].evaluate(f);
            }};
  }
};

Delta label_x(double v) {
  Delta d = Delta::Zero();
  d[3] = v;
  return d;
}

// Labels -1 / +1 split at feature value 0.
Dataset separable(Rng& rng, int n, int dims) {
  Dataset d;
  for (int i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    VectorContext c;
    c.x.push_back(static_cast<float>(pos ? uniform(rng, 0.1, 1.0) : uniform(rng, -1.0, -0.1)));
    for (int k = 1; k < dims; ++k) c.x.push_back(static_cast<float>(uniform(rng, -1.0, 1.0)));
    d.contexts.push_back(c);
    d.labels.push_back(label_x(pos ? 1.0 : -1.0));
    d.fg.push_back(pos ? 1 : 0);
  }
  return d;
}

// Sum of squared deviations of label dim 3, brute force.
double ssd(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double m = 0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

double split_gain(const Dataset& d, float threshold) {
  std::vector<double> all, l, r;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    all.push_back(d.labels[i][3]);
    (d.contexts[i].x[0] < threshold ? l : r).push_back(d.labels[i][3]);
  }
  return ssd(all) - ssd(l) - ssd(r);
}

ForestConfig toy_config() {
  ForestConfig c;
  c.n_trees = 1;
  c.max_depth = 1;
  c.n_candidate_features = 4;
  c.min_samples_leaf = 1;
  c.objective = Objective::Regression;
  c.domain.component_count = 1;
  return c;
}

std::vector<std::uint8_t> tree_bytes(const Tree& t, const ForestConfig& c) {
  return serialize(Forest({t}, c));
}

}  // namespace

TEST_CASE("uniform labels give a single leaf") {
  Dataset d;
  Delta y;
  y << 0.5, -0.25, 0.125, 1.0, 2.0, -3.0;
  for (int i = 0; i < 50; ++i) {
    d.contexts.push_back({{float(i)}});
    d.labels.push_back(y);
    d.fg.push_back(1);
  }
  ForestConfig c = toy_config();
  c.objective = Objective::TwoStage;
  c.max_depth = 5;
  const Tree tree = train_tree(d.data(), c, 1);
  CHECK(tree.nodes.size() == 1);
  CHECK(tree.leaves.size() == 1);
  const Forest forest({tree}, c);
  const LeafEstimate est = forest.predict(d.contexts[3]);
  CHECK(est.vote == y);
  CHECK(est.spread == Delta::Zero());
  CHECK(est.foreground_probability == 1.0);
  CHECK(est.sample_count == 50);
}

TEST_CASE("separable toy set is split optimally at depth one") {
  Rng rng(21);
  const Dataset d = separable(rng, 40, 1);
  const ForestConfig c = toy_config();
  const Tree tree = train_tree(d.data(), c, 3);
  REQUIRE(tree.nodes.size() == 3);
  CHECK(tree.depth() == 1);

  // Brute force over every threshold between distinct sorted values.
  std::vector<float> xs;
  for (const auto& ctx : d.contexts) xs.push_back(ctx.x[0]);
  std::sort(xs.begin(), xs.end());
  double best = 0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) best = std::max(best, split_gain(d, (xs[i] + xs[i + 1]) / 2));
  CHECK(split_gain(d, tree.nodes[0].threshold) == doctest::Approx(best).epsilon(1e-12));
  CHECK(tree.nodes[0].threshold > -0.1f);
  CHECK(tree.nodes[0].threshold < 0.1f);

  const Forest forest({tree}, c);
  for (std::size_t i = 0; i < d.contexts.size(); ++i)
    CHECK(forest.predict(d.contexts[i]).vote[3] == d.labels[i][3]);
}

TEST_CASE("training is deterministic per seed") {
  Rng rng(22);
  const Dataset d = separable(rng, 300, 6);
  ForestConfig c;
  c.n_trees = 1;
  c.max_depth = 8;
  c.n_candidate_features = 20;
  c.min_samples_leaf = 3;
  c.domain.component_count = 6;
  const Tree a = train_tree(d.data(), c, 77);
  const Tree b = train_tree(d.data(), c, 77);
  CHECK(tree_bytes(a, c) == tree_bytes(b, c));
  c.threads = 3;
  c.n_trees = 4;
  const Forest fa = train_forest(d.data(), c, 5);
  c.threads = 1;
  const Forest fb = train_forest(d.data(), c, 5);
  CHECK(serialize(fa) == serialize(fb));
}

TEST_CASE("insufficient samples") {
  Dataset d;
  d.contexts.push_back({{0.0f}});
  d.labels.push_back(Delta::Zero());
  d.fg.push_back(1);
  test::check_error_kind([&] { train_tree(d.data(), toy_config(), 1); }, ErrorKind::InsufficientSamples);
}

TEST_CASE("aggregation") {
  Leaf only;
  only.foreground_probability = 0.75f;
  only.vote = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
  only.spread = {0.01f, 0.02f, 0.0f, 0.0f, 0.0f, 0.0f};
  only.sample_count = 30;
  const Leaf* one[] = {&only};
  const LeafEstimate e = Forest::aggregate(one);
  CHECK(e.foreground_probability == 0.75f);
  for (int i = 0; i < 6; ++i) {
    CHECK(e.vote[i] == only.vote[i]);
    CHECK(e.spread[i] == doctest::Approx(only.spread[i]).epsilon(1e-12));
  }
  CHECK(e.sample_count == 30);

  Leaf a, b;
  a.foreground_probability = b.foreground_probability = 1.0f;
  a.vote = {1, 0, 0, 0, 0, 0};
  b.vote = {0, 1, 0, 0, 0, 0};
  a.spread = b.spread = {0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f};
  const Leaf* two[] = {&a, &b};
  const LeafEstimate m = Forest::aggregate(two);
  CHECK(m.vote[0] == doctest::Approx(0.5));
  CHECK(m.vote[1] == doctest::Approx(0.5));
  CHECK(m.vote.tail<4>().norm() == 0.0);

  // A background-only leaf has no say in the vote.
  Leaf bg;
  bg.vote = {5, 5, 5, 5, 5, 5};
  const Leaf* mixed[] = {&a, &bg};
  const LeafEstimate mm = Forest::aggregate(mixed);
  CHECK(mm.vote[0] == 1.0);
  CHECK(mm.foreground_probability == 0.5);
}

TEST_CASE("forest classifies held-out separable data") {
  Rng rng(23);
  const Dataset train = separable(rng, 400, 5);
  const Dataset test = separable(rng, 200, 5);
  ForestConfig c;
  c.n_trees = 10;
  c.max_depth = 6;
  c.n_candidate_features = 10;
  c.min_samples_leaf = 5;
  c.domain.component_count = 5;
  const Forest forest = train_forest(train.data(), c, 9);
  int correct = 0;
  for (std::size_t i = 0; i < test.contexts.size(); ++i) {
    const bool pred = forest.predict(test.contexts[i]).foreground_probability >= 0.5;
    correct += pred == (test.fg[i] != 0);
  }
  CHECK(correct == int(test.contexts.size()));
}

TEST_CASE("splits partition and never raise impurity") {
  Rng rng(24);
  Dataset d;
  for (int i = 0; i < 600; ++i) {
    VectorContext ctx;
    for (int k = 0; k < 4; ++k) ctx.x.push_back(float(uniform(rng, -1, 1)));
    const bool fg = ctx.x[0] + 0.3 * ctx.x[1] > 0.2;
    Delta y = Delta::Zero();
    y[3] = ctx.x[2] + 0.1 * normal(rng);
    y[0] = 0.5 * ctx.x[3];
    d.contexts.push_back(ctx);
    d.labels.push_back(y);
    d.fg.push_back(fg);
  }
  ForestConfig c;
  c.n_trees = 1;
  c.max_depth = 10;
  c.n_candidate_features = 10;
  c.min_samples_leaf = 5;
  c.domain.component_count = 4;
  c.rotation_scale = 0.2;
  TreeStats stats;
  const Tree tree = train_tree(d.data(), c, 4, &stats);
  CHECK(stats.feature_evaluations > 0);

  // Replay every sample down the tree and check each split.
  const std::size_t n = d.contexts.size();
  std::vector<std::vector<std::uint32_t>> members(tree.nodes.size());
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t node = 0;
    members[0].push_back(i);
    while (!tree.nodes[node].is_leaf()) {
      const Node& s = tree.nodes[node];
      node = s.child + (d.contexts[i].x[s.index] < s.threshold ? 0 : 1);
      members[node].push_back(i);
    }
  }
  auto entropy_n = [&](const std::vector<std::uint32_t>& ids) {
    double fg = 0;
    for (auto id : ids) fg += d.fg[id];
    const double p = fg / double(ids.size());
    double h = 0;
    if (p > 0) h -= p * std::log(p);
    if (p < 1) h -= (1 - p) * std::log(1 - p);
    return h * double(ids.size());
  };
  auto ssd_n = [&](const std::vector<std::uint32_t>& ids) {
    double total = 0;
    for (int dim = 0; dim < 6; ++dim) {
      std::vector<double> v;
      for (auto id : ids)
        if (d.fg[id]) v.push_back(d.labels[id][dim] * (dim < 3 ? c.rotation_scale : 1.0));
      total += ssd(v);
    }
    return total;
  };
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (tree.nodes[i].is_leaf()) {
      CHECK(members[i].size() >= std::size_t(c.min_samples_leaf));
      continue;
    }
    const auto& l = members[tree.nodes[i].child];
    const auto& r = members[tree.nodes[i].child + 1];
    REQUIRE(!l.empty());
    REQUIRE(!r.empty());
    REQUIRE(l.size() + r.size() == members[i].size());
    const double h = entropy_n(members[i]) / double(members[i].size());
    const bool classification = std::max(h, 0.0) > 0 && [&] {
      double fg = 0;
      for (auto id : members[i]) fg += d.fg[id];
      const double p = fg / double(members[i].size());
      return std::max(p, 1 - p) < c.purity_switch;
    }();
    if (classification)
      CHECK(entropy_n(l) + entropy_n(r) <= entropy_n(members[i]) + 1e-9);
    else
      CHECK(ssd_n(l) + ssd_n(r) <= ssd_n(members[i]) + 1e-9);
  }

  // Prediction cost is one evaluation per level walked.
  const Forest forest({tree}, c);
  for (int i = 0; i < 50; ++i) {
    std::size_t evals = 0;
    forest.predict(d.contexts[i], &evals);
    CHECK(evals <= tree.depth());
    CHECK(evals >= 1);
  }
}

TEST_CASE("missing values route to the recorded side") {
  Dataset d;
  Rng rng(25);
  for (int i = 0; i < 200; ++i) {
    VectorContext ctx;
    const bool pos = i % 2 == 0;
    const bool missing = i % 10 == 0;
    ctx.x.push_back(missing ? std::numeric_limits<float>::quiet_NaN()
                            : float(pos ? uniform(rng, 0.1, 1) : uniform(rng, -1, -0.1)));
    d.contexts.push_back(ctx);
    d.labels.push_back(label_x(pos ? 1.0 : -1.0));
    d.fg.push_back(1);
  }
  ForestConfig c = toy_config();
  c.max_depth = 3;
  const Tree tree = train_tree(d.data(), c, 1);
  const Forest forest({tree}, c);
  const LeafEstimate e = forest.predict(VectorContext{{std::numeric_limits<float>::quiet_NaN()}});
  CHECK(e.has_vote);
  CHECK(std::isfinite(e.vote[3]));
}

TEST_CASE("serialization") {
  Rng rng(26);
  const Dataset d = separable(rng, 500, 8);
  ForestConfig c;
  c.n_trees = 5;
  c.max_depth = 10;
  c.n_candidate_features = 8;
  c.min_samples_leaf = 2;
  c.domain.component_count = 8;
  c.rotation_scale = 0.2;
  c.offset_scale = 0.37;
  const Forest forest = train_forest(d.data(), c, 1);
  const auto bytes = serialize(forest);
  const Forest back = deserialize(bytes);
  CHECK(serialize(back) == bytes);
  CHECK(back.config_hash() == c.hash());
  CHECK(back.offset_scale() == float(0.37));

  for (int i = 0; i < 1000; ++i) {
    VectorContext ctx;
    for (int k = 0; k < 8; ++k) ctx.x.push_back(float(uniform(rng, -1.2, 1.2)));
    const LeafEstimate a = forest.predict(ctx), b = back.predict(ctx);
    REQUIRE(a.vote == b.vote);
    REQUIRE(a.spread == b.spread);
    REQUIRE(a.foreground_probability == b.foreground_probability);
  }

  SUBCASE("corrupt streams") {
    auto truncated = bytes;
    truncated.resize(bytes.size() - 7);
    test::check_error_kind([&] { deserialize(truncated); }, ErrorKind::CorruptModel);
    auto magic = bytes;
    magic[0] = 'X';
    test::check_error_kind([&] { deserialize(magic); }, ErrorKind::CorruptModel);
    auto version = bytes;
    version[4] = 99;
    test::check_error_kind([&] { deserialize(version); }, ErrorKind::CorruptModel);
    auto trailing = bytes;
    trailing.push_back(0);
    test::check_error_kind([&] { deserialize(trailing); }, ErrorKind::CorruptModel);
    test::check_error_kind([&] { deserialize(std::vector<std::uint8_t>{}); }, ErrorKind::CorruptModel);
  }
}

TEST_CASE("model size follows the fixed record layout") {
  // Ten chain-shaped trees with 9999 nodes each (4999 splits, 5000 leaves).
  std::vector<Tree> trees(10);
  for (auto& t : trees) {
    const std::uint32_t splits = 4999;
    t.nodes.resize(2 * splits + 1);
    for (std::uint32_t i = 0; i < splits; ++i) {
      Node& s = t.nodes[2 * i];
      s.kind = static_cast<std::uint8_t>(FeatureKind::Component);
      s.child = 2 * i + 1;
      Node& leaf = t.nodes[2 * i + 1];
      leaf.kind = 0;
      leaf.child = i;
    }
    t.nodes.back().kind = 0;
    t.nodes.back().child = splits;
    t.leaves.resize(splits + 1);
  }
  const Forest forest = Forest::from_parts(trees, 1.0f, 1.0f, 15, Objective::TwoStage, 0);
  CHECK(node_bytes(forest) == 10 * 9999 * 16);  // ~1.6 MB of node records
  const std::size_t header = 4 + 1 + 1 + 1 + 8;
  const std::size_t forest_header = 4 + 4 + 2 + 1 + 1 + 8 + 4;
  const std::size_t per_tree = 4 + 9999 * 16 + 4 + 5000 * 56;
  const auto bytes = serialize(forest);
  CHECK(bytes.size() == header + forest_header + 10 * per_tree);
  CHECK(deserialize(bytes).node_count() == 99990);
}
