#pragma once

#include <cstdint>
#include <vector>

#include "poseforest/geom.hpp"
#include "poseforest/mesh.hpp"
#include "poseforest/random.hpp"
#include "poseforest/render.hpp"

namespace pf {

/// Poses a detector is trained for: camera directions within tilt_max of
/// `axis` (object frame), roll within +-inplane_range, distance in
/// [radius_min, radius_max]. Off-centre placements rotate the whole view
/// with the line of sight.
struct TrainingRange {
  double radius_min = 0.55;
  double radius_max = 0.85;
  double tilt_max = 0.5235987755982988;       // 30 degrees
  double inplane_range = 0.5235987755982988;  // 30 degrees
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();

  bool operator==(const TrainingRange&) const = default;
};

/// Random pose inside the range with the object origin on the optical axis.
Pose sample_centered_pose(Rng& rng, const TrainingRange& range);

/// Moves a centred pose so the object origin projects to `pixel`, keeping
/// its appearance along the line of sight.
Pose place_at_pixel(const Pose& centered, const Eigen::Vector2d& pixel, const CameraIntrinsics& k);

/// Random in-range pose whose origin projects at least `margin` pixels
/// inside the frame.
Pose sample_pose_in_range(Rng& rng, const TrainingRange& range, const CameraIntrinsics& k, double margin);

/// Sphere, box or cylinder with random proportions, 4 to 12 cm across.
TriangleMesh random_distractor(Rng& rng);

/// Tilted plane (wall or table top) behind `depth`.
DepthFrame random_background(Rng& rng, double depth, const CameraIntrinsics& k);

struct SceneSpec {
  int instances_min = 1;
  int instances_max = 2;
  int distractors = 3;
  double max_occlusion = 0.2;  // per instance, fraction of its pixels hidden
  bool background = true;
  NoiseParams noise;
};

struct SyntheticScene {
  DepthFrame depth;
  std::vector<Pose> truths;  // instances of the target mesh only
};

/// One cluttered scene with target instances in the training range and
/// distractor shapes nearby. Layouts breaking the occlusion cap are redrawn.
SyntheticScene make_scene(const TriangleMesh& mesh, const TrainingRange& range, const SceneSpec& spec,
                          const CameraIntrinsics& k, std::uint64_t seed);

/// Background-and-distractor frame without the target object.
DepthFrame make_clutter_frame(const SceneSpec& spec, const CameraIntrinsics& k, std::uint64_t seed);

/// One frame of a scripted sequence with the instances in view. Partially
/// occluded instances count as in view, fully hidden ones do not.
struct ScriptedFrame {
  DepthFrame depth;
  std::vector<int> visible_ids;
  std::vector<Pose> visible_poses;  // same order as visible_ids
};

struct InstanceScript {
  int appear = 0;        // first frame with the instance in view
  int disappear = -1;    // first frame without it again; -1 never
  int occlude_begin = -1;
  int occlude_end = -1;  // exclusive
  /// Sideways shift (camera x, meters) of the 0.35 m board held at 70% of
  /// the instance distance. 0 hides the instance, -0.175 about half of it.
  double occluder_offset = 0.0;
  Pose start;
  /// Per-frame motion applied with apply-style camera-aligned increments.
  Delta velocity = Delta::Zero();
};

struct SequenceScript {
  int frames = 100;
  std::vector<InstanceScript> instances;
  bool background = true;
  NoiseParams noise;
};

/// Pose of an instance at frame f (start moved by f * velocity).
Pose scripted_pose(const InstanceScript& s, int frame);

std::vector<ScriptedFrame> render_sequence(const TriangleMesh& mesh, const SequenceScript& script,
                                           const CameraIntrinsics& k, std::uint64_t seed);

/// The scripts exercised by the pipeline checks: one instance appearing at
/// frame 20, half hidden for frames 60-69, leaving at frame 80; and two
/// instances moving independently.
SequenceScript lifecycle_script(const TrainingRange& range, const CameraIntrinsics& k, std::uint64_t seed);
SequenceScript two_instance_script(const TrainingRange& range, const CameraIntrinsics& k, std::uint64_t seed);

}  // namespace pf
