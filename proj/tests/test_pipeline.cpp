#include <doctest.h>

#include <set>

#include "poseforest/pipeline.hpp"
#include "test_util.hpp"

using namespace pf;

namespace {

const TriangleMesh& mesh() {
  static const TriangleMesh m = shapes::blob();
  return m;
}

const TrackerModel& tracker() {
  static const TrackerModel m = [] {
    ViewSphereSpec spec;
    spec.radius_min = spec.radius_max = 0.7;
    spec.subdivisions = 0;
    TrackerTrainingConfig c;
    c.forest.n_trees = 3;
    c.forest.max_depth = 12;
    c.perturbations_per_view = 2000;
    return train_tracker(mesh(), sample_view_sphere(spec), c, CameraIntrinsics{}, 11);
  }();
  return m;
}

const DetectorModel& detector() {
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

PipelineModels models() { return {detector(), tracker()}; }

DepthFrame wall() { return render_plane(Eigen::Vector3d(0, 0.1, 1).normalized(), 1.2, CameraIntrinsics{}); }

DepthFrame scene_with(const Pose& pose) {
  const CameraIntrinsics k;
  const DepthFrame background = wall();
  const std::vector<SceneObject> objects{{&mesh(), pose}};
  return composite_scene(objects, background, NoiseParams::none(), 1, k).depth;
}

TrackedInstance instance(int id, const Pose& pose) {
  TrackedInstance t;
  t.id = id;
  t.state = InstanceState::Tracking;
  t.pose = pose;
  t.score = 1.0;
  return t;
}

}  // namespace

TEST_CASE("config validation") {
  PipelineConfig c;
  c.validate();
  c.loss_score = 1.0;
  test::check_error_kind([&] { c.validate(); }, ErrorKind::InvalidArgument);
  c = PipelineConfig{};
  c.detect_every = 0;
  test::check_error_kind([&] { c.validate(); }, ErrorKind::InvalidArgument);
  c = PipelineConfig{};
  c.loss_patience = -1;
  test::check_error_kind([&] { c.validate(); }, ErrorKind::InvalidArgument);
}

TEST_CASE("empty scene leaves the state unchanged") {
  PipelineState state;
  const auto reports = advance(wall(), state, models(), PipelineConfig{});
  CHECK(reports.empty());
  CHECK(state.frame == 1);
  CHECK(state.next_id == 0);
  CHECK(state.instances.empty());
}

TEST_CASE("empty sequence and mismatched frames") {
  test::check_error_kind([] { run_sequence({}, models(), PipelineConfig{}); }, ErrorKind::TooFewFrames);
  PipelineState state;
  test::check_error_kind([&] { advance(DepthFrame(320, 240), state, models(), PipelineConfig{}); },
                         ErrorKind::ModelMismatch);
}

TEST_CASE("a tracked instance follows its object") {
  const Pose truth = look_at_origin(Eigen::Vector3d(0.05, 0.0, 0.7));
  PipelineState state;
  state.instances.push_back(instance(0, truth));
  state.next_id = 1;
  PipelineConfig c;
  c.max_instances = 1;
  for (int f = 0; f < 5; ++f) {
    const auto reports = advance(scene_with(truth), state, models(), c);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].id == 0);
    CHECK(reports[0].state == InstanceState::Tracking);
    CHECK(reports[0].score > 0.9);
    CHECK(add_distance(reports[0].pose, truth, mesh()) < 0.002);
  }
}

TEST_CASE("a vanished object is lost after the patience and removed") {
  const Pose truth = look_at_origin(Eigen::Vector3d(0.0, 0.05, 0.7));
  PipelineState state;
  state.instances.push_back(instance(0, truth));
  state.next_id = 1;
  PipelineConfig c;
  c.max_instances = 1;
  c.detect_every = 1000;
  c.loss_patience = 3;
  std::vector<InstanceState> states;
  for (int f = 0; f < 5; ++f)
    for (const auto& r : advance(wall(), state, models(), c)) states.push_back(r.state);
  REQUIRE(states.size() == 3);
  CHECK(states[0] == InstanceState::Tracking);
  CHECK(states[1] == InstanceState::Tracking);
  CHECK(states[2] == InstanceState::Lost);
  CHECK(state.instances.empty());
}

TEST_CASE("converging tracks are merged and ids are not reused") {
  const Pose truth = look_at_origin(Eigen::Vector3d(0.0, 0.0, 0.7));
  PipelineState state;
  state.instances.push_back(instance(0, truth));
  Delta d = Delta::Zero();
  d[3] = 0.004;
  state.instances.push_back(instance(1, apply_delta(truth, d)));
  state.next_id = 2;
  PipelineConfig c;
  c.detect_every = 1000;
  const auto reports = advance(scene_with(truth), state, models(), c);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].state == InstanceState::Tracking);
  CHECK(reports[1].state == InstanceState::Lost);
  REQUIRE(state.instances.size() == 1);
  CHECK(state.instances[0].id == 0);

  // Whatever the detector adds later gets fresh ids.
  c.detect_every = 1;
  std::set<int> ids;
  for (int f = 0; f < 3; ++f)
    for (const auto& r : advance(scene_with(truth), state, models(), c)) {
      if (r.id != 0) CHECK(r.id >= 2);
      ids.insert(r.id);
    }
  for (std::size_t i = 0; i < state.instances.size(); ++i)
    for (std::size_t j = i + 1; j < state.instances.size(); ++j)
      CHECK((state.instances[i].pose.translation() - state.instances[j].pose.translation()).norm() >=
            c.min_separation * tracker().diameter);
}

TEST_CASE("verification keeps well-scored distinct hypotheses") {
  const Pose truth = look_at_origin(Eigen::Vector3d(0.02, 0.0, 0.7));
  const DepthFrame frame = scene_with(truth);
  Delta d = Delta::Zero();
  d[3] = 0.005, d[0] = 0.05;
  DetectionCandidate near;
  near.pose = apply_delta(truth, d);
  near.score = 0.6;
  DetectionCandidate empty;
  empty.pose = look_at_origin(Eigen::Vector3d(0.3, 0.0, 0.7));
  empty.score = 0.9;
  const auto out = verify_detections(frame, {near, empty, near}, tracker(), 2, 0.6, 0.5 * tracker().diameter);
  REQUIRE(out.size() == 1);
  CHECK(out[0].score > 0.9);
  CHECK(add_distance(out[0].pose, truth, mesh()) < 0.002);
}

TEST_CASE("runs are deterministic") {
  const CameraIntrinsics k;
  const SequenceScript script = [&] {
    SequenceScript s = two_instance_script(detector().range, k, 2);
    s.frames = 12;
    return s;
  }();
  std::vector<DepthFrame> frames;
  for (auto& f : render_sequence(mesh(), script, k, 2)) frames.push_back(std::move(f.depth));
  const auto a = run_sequence(frames, models(), PipelineConfig{});
  const auto b = run_sequence(frames, models(), PipelineConfig{});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].pose.translation() == b[i].pose.translation());
    CHECK(a[i].score == b[i].score);
    CHECK(a[i].step_us == 0);
  }
}
