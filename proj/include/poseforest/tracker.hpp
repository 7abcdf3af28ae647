#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "poseforest/forest.hpp"
#include "poseforest/geom.hpp"
#include "poseforest/mesh.hpp"
#include "poseforest/render.hpp"

namespace pf {

/// Surface samples in the object frame with unit outward normals.
struct SamplePointSet {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> normals;

  std::size_t size() const { return points.size(); }
};

/// Farthest-point subset of an area-weighted candidate cloud. Deterministic per seed.
SamplePointSet sample_surface_points(const TriangleMesh& mesh, int count, std::uint64_t seed);

struct TrackerConfig {
  int max_iters = 10;
  double stop_translation = 1e-4;          // meters
  double stop_rotation = 0.01 * 3.14159265358979323846 / 180.0;  // radians
  double score_tau = 0.010;                // inlier band for the score, meters
  int min_valid = 16;
  double residual_clip = 0.05;             // residuals are clamped to +-clip
  double residual_floor = 2e-4;            // lower bound of the residual RMS
  /// Returns this far in front of a point mark it occluded (flagged, not valid).
  double occlusion_margin = 0.04;
  /// The prior is kept unless the refined pose lowers the residual cost,
  /// truncated at selection_tau, by selection_margin. 0 disables the check.
  double selection_tau = 0.002;
  double selection_margin = 0.1;
};

/// Per-axis half widths of the uniform training perturbations.
struct PerturbationRanges {
  double translation = 0.015;                           // meters
  double rotation = 10.0 * 3.14159265358979323846 / 180.0;  // radians
};

/// Signed residuals D(project(T p_i)) - (T p_i).z, NaN where flagged
/// (back-facing, outside the frame, no return, occluded).
struct ResidualFeatures {
  std::vector<float> values;
  int front_facing = 0;  // points whose normal faces the camera
  int valid = 0;         // front-facing points with a valid depth return
  int inliers = 0;       // valid points with |r| < tau

  float evaluate(const SplitFeature& f) const {
    if (f.kind == FeatureKind::ComponentDifference) return values[f.index] - values[f.second_index()];
    return values[f.index];
  }
  /// Inlier share of the valid points; 0 when none is valid.
  double score() const { return valid ? double(inliers) / double(valid) : 0.0; }
  /// Mean truncated squared residual over front-facing points, tau^2 for
  /// flagged ones.
  double cost(double tau) const;
};

ResidualFeatures compute_residuals(const DepthFrame& frame, const Pose& pose, const SamplePointSet& samples,
                                   const CameraIntrinsics& k, const TrackerConfig& config);

/// Divides the residuals by a robust scale, 1.4826 times the median absolute
/// valid residual (at least `floor`), and returns the divisor. The forest
/// works on these unit-scale residuals and predicts the correcting delta in
/// the same units.
double normalize_residuals(ResidualFeatures& f, double floor);

/// Pose update in the camera-aligned frame centred on the object origin:
/// rotation exp(w) is applied about the object centre, translation in camera axes.
Pose apply_delta(const Pose& pose, const Delta& delta);

/// Camera direction in the object frame, measured along the line of sight
/// to the object origin (so it does not change when the object moves across
/// the image).
Eigen::Vector3d viewing_direction(const Pose& pose);

/// Rotation from a view's canonical camera frame (object on the optical axis,
/// rolled like the training view) to the actual camera frame at `pose`.
Eigen::Matrix3d canonical_frame(const Pose& pose, const Eigen::Quaterniond& view_rotation);

struct TrackerTrainingConfig {
  ForestConfig forest = default_forest();
  PerturbationRanges ranges;
  TrackerConfig tracker;
  int sample_points = 256;
  int perturbations_per_view = 5000;
  /// Renders per view, each with the object at a random image position,
  /// roll about the line of sight and distance.
  int renders_per_view = 10;
  double distance_jitter = 0.2;  // relative
  /// Largest tilt of a render away from its view direction, radians.
  double view_jitter = 0.25;
  /// Let splits test differences of two residuals besides single residuals.
  bool pair_features = true;
  /// Share of training views composited in front of a random wall and with
  /// sensor noise, so the forest sees backgrounds it will meet at run time.
  double background_fraction = 0.5;
  NoiseParams noise;

  static ForestConfig default_forest() {
    ForestConfig c;
    c.objective = Objective::Regression;
    c.min_samples_leaf = 5;
    c.n_candidate_features = 100;
    return c;
  }
};

/// One training view: its canonical rotation and the forest fitted on it.
struct TrackerView {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  Forest forest;
};

struct TrackerModel {
  CameraIntrinsics intrinsics;
  TrackerConfig config;
  PerturbationRanges ranges;
  SamplePointSet samples;
  double diameter = 0.0;
  std::vector<TrackerView> views;

  /// View whose direction is closest to the viewing direction of `pose`.
  std::size_t nearest_view(const Pose& pose) const;
  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& v : views) n += v.forest.node_count();
    return n;
  }
};

/// For every view pose: renders the object at several placements, perturbs
/// it and fits that view's regression forest from normalized residuals to the
/// correcting delta in the view's canonical frame. Throws InvalidRange.
TrackerModel train_tracker(const TriangleMesh& mesh, std::span<const Pose> view_poses,
                           const TrackerTrainingConfig& config, const CameraIntrinsics& k, std::uint64_t seed);

struct TrackStepResult {
  Pose pose;
  double score = 0.0;
  int iterations = 0;
  std::size_t feature_evaluations = 0;
};

/// Iterative refinement from `prior`. Throws DegenerateView when fewer than
/// config.min_valid points see a valid return.
TrackStepResult track_step(const DepthFrame& frame, const Pose& prior, const TrackerModel& model);
TrackStepResult track_step(const DepthFrame& frame, const Pose& prior, const TrackerModel& model,
                           const TrackerConfig& config);

/// Inlier fraction of `pose` against the frame (no refinement).
double track_score(const DepthFrame& frame, const Pose& pose, const TrackerModel& model);

struct JitterReport {
  double translation_mm = 0.0;  // std of frame-to-frame translation norm
  double rotation_deg = 0.0;    // std of frame-to-frame rotation angle
  double mean_translation_mm = 0.0;
  double mean_rotation_deg = 0.0;
};

/// Throws TooFewFrames for fewer than two poses.
JitterReport jitter(std::span<const Pose> poses);

std::vector<std::uint8_t> serialize_tracker(const TrackerModel& model);
TrackerModel deserialize_tracker(std::span<const std::uint8_t> payload);

}  // namespace pf
