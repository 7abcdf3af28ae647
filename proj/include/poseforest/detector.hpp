#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "poseforest/forest.hpp"
#include "poseforest/geom.hpp"
#include "poseforest/mesh.hpp"
#include "poseforest/render.hpp"
#include "poseforest/synth.hpp"

namespace pf {

/// Square window centred on a pixel, side S * f / d0 pixels for a metric
/// side S. Split tests read depths relative to d0, clamped to +-S/2; pixels
/// without a return or outside the frame read as +S/2.
struct WindowContext {
  const DepthFrame* frame = nullptr;
  Eigen::Vector2i center{0, 0};
  double d0 = 0.0;
  double window_size = 0.0;   // metric side S
  double offset_scale = 1.0;  // pixel-meters per offset unit

  double side_pixels(double focal) const { return window_size * focal / d0; }

  float relative_depth(const std::array<std::int8_t, 2>& offset) const {
    const double s = offset_scale / d0;
    const int x = center.x() + static_cast<int>(std::lround(offset[0] * s));
    const int y = center.y() + static_cast<int>(std::lround(offset[1] * s));
    const float half = static_cast<float>(0.5 * window_size);
    if (!frame->valid(x, y)) return half;
    return std::clamp(static_cast<float>((*frame)(x, y) - d0), -half, half);
  }

  float evaluate(const SplitFeature& f) const {
    if (f.kind == FeatureKind::CenterDifference) return relative_depth(f.u);
    return relative_depth(f.u) - relative_depth(f.v);
  }
};

/// Window-local pose label: translation from the backprojected centre and
/// rotation relative to the reference view, both in the frame of the
/// viewing ray through the centre.
Delta window_label(const Pose& pose, const Eigen::Vector2d& pixel, double d0, const Eigen::Quaterniond& reference,
                   const CameraIntrinsics& k);
Pose decode_window_label(const Delta& label, const Eigen::Vector2d& pixel, double d0,
                         const Eigen::Quaterniond& reference, const CameraIntrinsics& k);

struct DetectorSampling {
  int stride = 4;
  int max_positives_per_view = 0;   // 0 keeps every stride pixel on the mask
  int negatives_per_view = 100;     // off-object pixels near the object
  int negatives_per_frame = 300;    // pixels of each background frame
};

struct DetectorSample {
  std::uint32_t frame = 0;  // index into views, then negatives
  Eigen::Vector2i pixel{0, 0};
  float d0 = 0.0f;
};

struct DetectorTrainingSet {
  std::vector<const DepthFrame*> frames;
  std::vector<DetectorSample> samples;
  std::vector<Delta> labels;
  std::vector<std::uint8_t> is_foreground;
  double window_size = 0.0;
  double offset_scale = 1.0;

  std::size_t positives() const;
  TrainingData data() const;
  WindowContext context(std::size_t i) const;
};

/// Positive windows on the mask pixels of every view (stride grid), negative
/// windows off the object and on the background frames. The frames are
/// referenced, not copied. Throws EmptyTrainingSet, InvalidArgument when the
/// window is smaller than the mesh.
DetectorTrainingSet build_detector_training_set(const TriangleMesh& mesh, std::span<const ViewSample> views,
                                                std::span<const DepthFrame> negatives, double window_size,
                                                const Eigen::Quaterniond& reference,
                                                const DetectorSampling& sampling, const CameraIntrinsics& k,
                                                std::uint64_t seed);

struct DetectorTrainingConfig {
  ForestConfig forest = default_forest();
  TrainingRange range;
  double window_size = 0.0;  // 0: mesh diameter
  int views = 300;
  int background_frames = 40;
  DetectorSampling sampling;
  SceneSpec scene = default_scene();

  static ForestConfig default_forest() {
    ForestConfig c;
    c.objective = Objective::TwoStage;
    c.domain.pair_difference = true;
    c.domain.center_difference = true;
    return c;
  }
  static SceneSpec default_scene() {
    SceneSpec s;
    s.instances_min = s.instances_max = 1;
    return s;
  }
};

struct DetectorModel {
  CameraIntrinsics intrinsics;
  TrainingRange range;
  double window_size = 0.0;
  double diameter = 0.0;
  double radius = 0.0;
  Eigen::Quaterniond reference = Eigen::Quaterniond::Identity();
  Forest forest;

  /// Hash over intrinsics and window settings checked at detect time.
  std::uint64_t metadata_hash() const;
};

/// Renders `config.views` cluttered training views in range and the
/// background frames, then fits the forest. Deterministic per seed.
DetectorModel train_detector(const TriangleMesh& mesh, const DetectorTrainingConfig& config,
                             const CameraIntrinsics& k, std::uint64_t seed);

/// Training views: the object at a random in-range pose among distractors,
/// mask = its visible pixels.
std::vector<ViewSample> render_detector_views(const TriangleMesh& mesh, const DetectorTrainingConfig& config,
                                              const CameraIntrinsics& k, std::uint64_t seed);

struct DetectConfig {
  double threshold = 0.5;  // foreground probability and candidate score
  int stride = 4;
  double cluster_radius = 0.25;  // times the diameter
  double rotation_radius = 0.35;  // radians, rotation mode window
  /// Rotation modes kept per candidate, each with at least this share of the
  /// strongest mode's support.
  int hypotheses = 3;
  double hypothesis_support = 0.2;
  int min_votes = 3;
  double min_separation = 0.5;  // times the diameter
  int max_per_frame = 10;
  /// Range the caller expects; ModelMismatch unless the model covers it.
  std::optional<TrainingRange> range;
  int threads = 1;
};

struct DetectionCandidate {
  Pose pose;  // strongest rotation mode
  std::vector<Pose> hypotheses;  // every kept mode, strongest first
  double score = 0.0;
  WindowContext window;  // strongest member window
  int votes = 0;
  int instance_id = -1;
};

/// Sliding-window detection sorted by descending score. Throws ModelMismatch.
std::vector<DetectionCandidate> detect(const DepthFrame& frame, const DetectorModel& model,
                                       const CameraIntrinsics& k, const DetectConfig& config = {});

/// Greedy by score; drops candidates within `min_separation` meters of a kept
/// one, caps the count and numbers the survivors.
std::vector<DetectionCandidate> nms(std::vector<DetectionCandidate> candidates, double min_separation,
                                    int max_per_frame);

struct DetectionSetMetrics {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static DetectionSetMetrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
};

/// Per frame, matches detections to truths greedily by ascending ADD; a match
/// counts when ADD < factor * diameter.
DetectionSetMetrics evaluate_detections(std::span<const std::vector<Pose>> detections,
                                        std::span<const std::vector<Pose>> truths, const TriangleMesh& mesh,
                                        double add_threshold_factor = 0.1);

std::vector<std::uint8_t> serialize_detector(const DetectorModel& model);
DetectorModel deserialize_detector(std::span<const std::uint8_t> payload);

}  // namespace pf
