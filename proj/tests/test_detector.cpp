#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "poseforest/detector.hpp"
#include "test_util.hpp"

using namespace pf;

namespace {

const TriangleMesh& mesh() {
  static const TriangleMesh m = shapes::blob();
  return m;
}

const Eigen::Quaterniond& reference() {
  static const Eigen::Quaterniond q = look_at_origin(Eigen::Vector3d::UnitZ()).rotation();
  return q;
}

// Reduced model: enough to exercise the scan, not to be accurate.
const DetectorModel& small_model() {
  static const DetectorModel m = [] {
    DetectorTrainingConfig c;
    c.forest.n_trees = 2;
    c.forest.max_depth = 10;
    c.forest.n_candidate_features = 50;
    c.views = 20;
    c.background_frames = 4;
    return train_detector(mesh(), c, CameraIntrinsics{}, 5);
  }();
  return m;
}

DetectionCandidate at(double x, double score) {
  DetectionCandidate c;
  c.pose = Pose(Eigen::Quaterniond::Identity(), Eigen::Vector3d(x, 0, 0.7));
  c.score = score;
  return c;
}

}  // namespace

TEST_CASE("window label round trip") {
  Rng rng(3);
  const CameraIntrinsics k;
  const TrainingRange range;
  for (int i = 0; i < 50; ++i) {
    const Pose truth = sample_pose_in_range(rng, range, k, 80);
    const Eigen::Vector2d pixel = project(truth.translation(), k);
    const double d0 = uniform(rng, 0.5, 0.9);
    const Delta label = window_label(truth, pixel, d0, reference(), k);
    const Pose back = decode_window_label(label, pixel, d0, reference(), k);
    const auto [angle, dist] = pose_distance(back, truth);
    CHECK(dist < 1e-6);
    CHECK(angle < 1e-6);
  }
}

TEST_CASE("one positive per stride cell of the mask") {
  const CameraIntrinsics k;
  const Pose pose = look_at_origin(Eigen::Vector3d(0.05, 0.1, 0.7));
  const std::vector<ViewSample> views{render_depth(mesh(), pose, k)};
  const std::size_t n = std::size_t(views[0].mask.count());
  DetectorSampling sampling;
  sampling.negatives_per_view = 0;
  const auto set = build_detector_training_set(mesh(), views, {}, mesh().diameter(), reference(), sampling, k, 1);
  CHECK(set.positives() == doctest::Approx(double(n) / 16.0).epsilon(0.15));
  CHECK(set.samples.size() == set.positives());
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    CHECK(set.is_foreground[i] == 1);
    CHECK(set.samples[i].pixel.x() % 4 == 0);
    CHECK(set.samples[i].pixel.y() % 4 == 0);
  }
}

TEST_CASE("positive labels decode to the view pose") {
  const CameraIntrinsics k;
  const Pose pose = look_at_origin(Eigen::Vector3d(-0.1, 0.05, 0.7), 0.3);
  const std::vector<ViewSample> views{render_depth(mesh(), pose, k)};
  const auto set = build_detector_training_set(mesh(), views, {}, mesh().diameter(), reference(), {}, k, 1);
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    if (!set.is_foreground[i]) continue;
    const auto& s = set.samples[i];
    const Pose back = decode_window_label(set.labels[i], s.pixel.cast<double>(), s.d0, reference(), k);
    const auto [angle, dist] = pose_distance(back, pose);
    CHECK(dist < 1e-6);
    CHECK(angle < 1e-6);
  }
}

TEST_CASE("negatives from a flat wall are background") {
  const CameraIntrinsics k;
  const std::vector<ViewSample> views{render_depth(mesh(), look_at_origin(Eigen::Vector3d(0, 0, 0.7)), k)};
  const std::vector<DepthFrame> walls{render_plane(Eigen::Vector3d(0, 0.2, 1).normalized(), 1.0, k)};
  const auto set = build_detector_training_set(mesh(), views, walls, mesh().diameter(), reference(), {}, k, 2);
  std::size_t from_wall = 0;
  for (std::size_t i = 0; i < set.samples.size(); ++i)
    if (set.samples[i].frame == 1) {
      ++from_wall;
      CHECK(set.is_foreground[i] == 0);
    }
  CHECK(from_wall > 0);
}

TEST_CASE("training set preconditions") {
  const CameraIntrinsics k;
  const std::vector<ViewSample> views{render_depth(mesh(), look_at_origin(Eigen::Vector3d(0, 0, 0.7)), k)};
  test::check_error_kind(
      [&] { build_detector_training_set(mesh(), {}, {}, mesh().diameter(), reference(), {}, k, 1); },
      ErrorKind::EmptyTrainingSet);
  test::check_error_kind(
      [&] { build_detector_training_set(mesh(), views, {}, 0.5 * mesh().diameter(), reference(), {}, k, 1); },
      ErrorKind::InvalidArgument);
  std::vector<ViewSample> blank{views[0]};
  blank[0].mask.setConstant(false);
  test::check_error_kind(
      [&] { build_detector_training_set(mesh(), blank, {}, mesh().diameter(), reference(), {}, k, 1); },
      ErrorKind::EmptyTrainingSet);
}

TEST_CASE("window features read depth relative to the centre") {
  const CameraIntrinsics k;
  const DepthFrame wall = render_plane(Eigen::Vector3d::UnitZ(), 0.8, k);
  WindowContext w{&wall, Eigen::Vector2i(320, 240), 0.8, 0.2, 1.0};
  CHECK(w.relative_depth({0, 0}) == doctest::Approx(0.0).epsilon(1e-6));
  DepthFrame empty(k.width, k.height);
  WindowContext e{&empty, Eigen::Vector2i(320, 240), 0.8, 0.2, 1.0};
  CHECK(e.relative_depth({10, -10}) == doctest::Approx(0.1));
}

TEST_CASE("nms keeps the best of close candidates") {
  SUBCASE("single") {
    const auto out = nms({at(0, 0.7)}, 0.05, 10);
    REQUIRE(out.size() == 1);
    CHECK(out[0].score == 0.7);
    CHECK(out[0].instance_id == 0);
  }
  SUBCASE("1 mm apart") {
    const auto out = nms({at(0.0, 0.8), at(0.001, 0.9)}, 0.05, 10);
    REQUIRE(out.size() == 1);
    CHECK(out[0].score == 0.9);
  }
  SUBCASE("cap") {
    const auto out = nms({at(0.0, 0.5), at(0.1, 0.9), at(0.2, 0.6), at(0.3, 0.8), at(0.4, 0.7)}, 0.05, 3);
    REQUIRE(out.size() == 3);
    CHECK(out[0].score == 0.9);
    CHECK(out[1].score == 0.8);
    CHECK(out[2].score == 0.7);
    CHECK(out[2].instance_id == 2);
  }
}

TEST_CASE("f1 from counts") {
  const auto half = DetectionSetMetrics::from_counts(1, 1, 0);
  CHECK(half.precision == 0.5);
  CHECK(half.recall == 1.0);
  CHECK(half.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(DetectionSetMetrics::from_counts(0, 0, 0).f1 == 0.0);
  CHECK(DetectionSetMetrics::from_counts(0, 3, 2).f1 == 0.0);
}

TEST_CASE("mean of per-object f1 scores") {
  const std::vector<double> per_object{99.8, 99.2, 98.9, 99.0, 99.7, 99.3};
  const double mean = std::accumulate(per_object.begin(), per_object.end(), 0.0) / double(per_object.size());
  CHECK(std::round(mean * 10.0) / 10.0 == doctest::Approx(99.3));
}

TEST_CASE("evaluation matches by ADD") {
  Rng rng(8);
  const double limit = 0.1 * mesh().diameter();
  std::vector<std::vector<Pose>> truths(20), perfect(20), shuffled(20), shifted(20);
  for (int f = 0; f < 20; ++f) {
    for (int i = 0; i < 1 + f % 3; ++i) truths[f].push_back(test::random_pose(rng));
    perfect[f] = truths[f];
    shuffled[f] = truths[f];
    std::reverse(shuffled[f].begin(), shuffled[f].end());
    for (const Pose& t : truths[f])
      shifted[f].emplace_back(t.rotation(), t.translation() + Eigen::Vector3d(2 * limit, 0, 0));
  }
  const auto p = evaluate_detections(perfect, truths, mesh());
  CHECK(p.precision == 1.0);
  CHECK(p.recall == 1.0);
  CHECK(p.f1 == 1.0);
  const auto s = evaluate_detections(shuffled, truths, mesh());
  CHECK(s.true_positives == p.true_positives);
  const auto w = evaluate_detections(shifted, truths, mesh());
  CHECK(w.true_positives == 0);
  CHECK(w.false_positives == p.true_positives);
  CHECK(w.false_negatives == p.true_positives);

  // One detection for two truths in a frame: one TP, one FN.
  const std::vector<std::vector<Pose>> one{{truths[1][0]}};
  const std::vector<std::vector<Pose>> two{{truths[1][0], truths[1][1]}};
  const auto m = evaluate_detections(one, two, mesh());
  CHECK(m.true_positives == 1);
  CHECK(m.false_negatives == 1);
}

TEST_CASE("detect on an empty background finds nothing") {
  const CameraIntrinsics k;
  const DepthFrame wall = render_plane(Eigen::Vector3d(0, 0.1, 1).normalized(), 1.2, k);
  CHECK(detect(wall, small_model(), k).empty());
  CHECK(detect(DepthFrame(k.width, k.height), small_model(), k).empty());
}

TEST_CASE("detect output respects score and separation") {
  const CameraIntrinsics k;
  SceneSpec spec;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const SyntheticScene scene = make_scene(mesh(), small_model().range, spec, k, seed);
    DetectConfig c;
    const auto a = detect(scene.depth, small_model(), k, c);
    const auto b = detect(scene.depth, small_model(), k, c);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].pose.translation() == b[i].pose.translation());
      CHECK(a[i].score >= c.threshold);
      CHECK(a[i].score <= 1.0);
      if (i > 0) CHECK(a[i - 1].score >= a[i].score);
      for (std::size_t j = 0; j < i; ++j)
        CHECK((a[i].pose.translation() - a[j].pose.translation()).norm() >= c.min_separation * mesh().diameter());
    }
  }
}

TEST_CASE("detect rejects mismatched inputs") {
  const CameraIntrinsics k;
  test::check_error_kind([&] { detect(DepthFrame(320, 240), small_model(), k); }, ErrorKind::ModelMismatch);
  CameraIntrinsics other = k;
  other.fx = 600;
  test::check_error_kind([&] { detect(DepthFrame(k.width, k.height), small_model(), other); },
                         ErrorKind::ModelMismatch);
  DetectConfig c;
  TrainingRange far;
  far.radius_min = 1.5, far.radius_max = 2.0;
  c.range = far;
  test::check_error_kind([&] { detect(DepthFrame(k.width, k.height), small_model(), k, c); },
                         ErrorKind::ModelMismatch);
}

TEST_CASE("detector model round trip") {
  const auto bytes = serialize_detector(small_model());
  const DetectorModel back = deserialize_detector(bytes);
  CHECK(serialize_detector(back) == bytes);
  CHECK(back.metadata_hash() == small_model().metadata_hash());
  const CameraIntrinsics k;
  const SyntheticScene scene = make_scene(mesh(), small_model().range, SceneSpec{}, k, 9);
  const auto a = detect(scene.depth, small_model(), k);
  const auto b = detect(scene.depth, back, k);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].score == b[i].score);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  test::check_error_kind([&] { deserialize_detector(truncated); }, ErrorKind::CorruptModel);
}
