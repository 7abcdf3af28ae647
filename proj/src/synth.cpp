#include "poseforest/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pf {

namespace {

// Camera on +axis looking at the origin.
Eigen::Quaterniond axis_view(const Eigen::Vector3d& axis) {
  return look_at_origin(axis.normalized()).rotation();
}

}  // namespace

Pose sample_centered_pose(Rng& rng, const TrainingRange& range) {
  const double cos_max = std::cos(range.tilt_max);
  const double tilt = std::acos(1.0 - uniform01(rng) * (1.0 - cos_max));
  const double phi = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const double roll = uniform(rng, -range.inplane_range, range.inplane_range);
  const double distance = uniform(rng, range.radius_min, range.radius_max);
  const Eigen::Quaterniond lean(Eigen::AngleAxisd(tilt, Eigen::Vector3d(std::cos(phi), std::sin(phi), 0.0)));
  const Eigen::Quaterniond spin(Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()));
  return Pose(spin * lean * axis_view(range.axis), Eigen::Vector3d(0, 0, distance));
}

Pose place_at_pixel(const Pose& centered, const Eigen::Vector2d& pixel, const CameraIntrinsics& k) {
  const Eigen::Quaterniond q = ray_rotation(pixel, k);
  return Pose(q * centered.rotation(), q * centered.translation());
}

Pose sample_pose_in_range(Rng& rng, const TrainingRange& range, const CameraIntrinsics& k, double margin) {
  const Pose centered = sample_centered_pose(rng, range);
  const Eigen::Vector2d px(uniform(rng, margin, k.width - 1 - margin), uniform(rng, margin, k.height - 1 - margin));
  return place_at_pixel(centered, px, k);
}

TriangleMesh random_distractor(Rng& rng) {
  switch (uniform_index(rng, 3)) {
    case 0:
      return shapes::icosphere(uniform(rng, 0.02, 0.06), 2);
    case 1:
      return shapes::box(uniform(rng, 0.04, 0.12), uniform(rng, 0.04, 0.12), uniform(rng, 0.04, 0.12));
    default:
      return shapes::cylinder(uniform(rng, 0.02, 0.05), uniform(rng, 0.05, 0.12), 20);
  }
}

DepthFrame random_background(Rng& rng, double depth, const CameraIntrinsics& k) {
  const double tilt = uniform(rng, 0.0, deg2rad(60.0));
  const double phi = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const Eigen::Vector3d n(std::sin(tilt) * std::cos(phi), std::sin(tilt) * std::sin(phi), std::cos(tilt));
  const Eigen::Vector3d anchor(0.0, 0.0, depth + uniform(rng, 0.05, 0.4));
  return render_plane(n, n.dot(anchor), k);
}

namespace {

Pose random_orientation_at(Rng& rng, const Eigen::Vector3d& position) {
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  return Pose(q.normalized(), position);
}

Pose distractor_pose(Rng& rng, const CameraIntrinsics& k, double z_min, double z_max) {
  const Eigen::Vector2d px(uniform(rng, 20.0, k.width - 21.0), uniform(rng, 20.0, k.height - 21.0));
  return random_orientation_at(rng, backproject(px, uniform(rng, z_min, z_max), k));
}

}  // namespace

SyntheticScene make_scene(const TriangleMesh& mesh, const TrainingRange& range, const SceneSpec& spec,
                          const CameraIntrinsics& k, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5ce));
  const double margin = std::min(k.width, k.height) * 0.15;
  for (int attempt = 0; attempt < 500; ++attempt) {
    const int n_inst = spec.instances_min +
                       static_cast<int>(uniform_index(rng, std::uint64_t(spec.instances_max - spec.instances_min + 1)));
    std::vector<TriangleMesh> meshes;
    meshes.reserve(static_cast<std::size_t>(spec.distractors));
    std::vector<SceneObject> objects;
    double deepest = 0.0;
    for (int i = 0; i < n_inst; ++i) {
      objects.push_back({&mesh, sample_pose_in_range(rng, range, k, margin)});
      deepest = std::max(deepest, objects.back().pose.translation().z());
    }
    for (int i = 0; i < spec.distractors; ++i) {
      meshes.push_back(random_distractor(rng));
      objects.push_back({&meshes.back(), distractor_pose(rng, k, range.radius_min, range.radius_max + 0.1)});
      deepest = std::max(deepest, objects.back().pose.translation().z());
    }
    const DepthFrame background = spec.background ? random_background(rng, deepest + 0.1, k) : DepthFrame();
    const std::uint64_t noise_seed = rng();
    SceneComposite scene = composite_scene(objects, background, spec.noise, noise_seed, k);
    bool ok = true;
    for (int i = 0; i < n_inst; ++i) {
      const ObjectTruth& t = scene.truths[static_cast<std::size_t>(i)];
      // Instances must be fully inside the frame and mostly unoccluded.
      if (t.rendered_pixels == 0 || t.visible_fraction() < 1.0 - spec.max_occlusion) ok = false;
    }
    if (!ok) continue;
    SyntheticScene out;
    out.depth = std::move(scene.depth);
    for (int i = 0; i < n_inst; ++i) out.truths.push_back(objects[static_cast<std::size_t>(i)].pose);
    return out;
  }
  throw Error(ErrorKind::InvalidArgument, "could not lay out a scene within the occlusion cap");
}

DepthFrame make_clutter_frame(const SceneSpec& spec, const CameraIntrinsics& k, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xc1u));
  std::vector<TriangleMesh> meshes;
  meshes.reserve(static_cast<std::size_t>(spec.distractors));
  std::vector<SceneObject> objects;
  double deepest = 0.5;
  for (int i = 0; i < spec.distractors; ++i) {
    meshes.push_back(random_distractor(rng));
    objects.push_back({&meshes.back(), distractor_pose(rng, k, 0.5, 1.0)});
    deepest = std::max(deepest, objects.back().pose.translation().z());
  }
  const DepthFrame background = spec.background ? random_background(rng, deepest + 0.1, k) : DepthFrame();
  return composite_scene(objects, background, spec.noise, rng(), k).depth;
}

Pose scripted_pose(const InstanceScript& s, int frame) {
  const Delta d = s.velocity * double(frame);
  return Pose(exp_rotation<double>(d.head<3>()) * s.start.rotation(), s.start.translation() + d.tail<3>());
}

std::vector<ScriptedFrame> render_sequence(const TriangleMesh& mesh, const SequenceScript& script,
                                           const CameraIntrinsics& k, std::uint64_t seed) {
  if (script.frames < 1) throw Error(ErrorKind::TooFewFrames, "script has no frames");
  Rng rng(mix_seed(seed, 0x5e9));
  double deepest = 0.5;
  for (const auto& s : script.instances)
    for (int f : {0, script.frames - 1}) deepest = std::max(deepest, scripted_pose(s, f).translation().z());
  const DepthFrame background = script.background ? random_background(rng, deepest + 0.15, k) : DepthFrame();
  // Board held between the camera and an occluded instance.
  const TriangleMesh board = shapes::box(0.35, 0.35, 0.01);

  std::vector<ScriptedFrame> frames;
  frames.reserve(static_cast<std::size_t>(script.frames));
  for (int f = 0; f < script.frames; ++f) {
    ScriptedFrame out;
    std::vector<SceneObject> objects;
    for (std::size_t i = 0; i < script.instances.size(); ++i) {
      const InstanceScript& s = script.instances[i];
      if (f < s.appear || (s.disappear >= 0 && f >= s.disappear)) continue;
      const Pose pose = scripted_pose(s, f);
      objects.push_back({&mesh, pose});
      if (f >= s.occlude_begin && f < s.occlude_end) {
        const Eigen::Vector3d at = pose.translation() * 0.7 + Eigen::Vector3d(s.occluder_offset, 0.0, 0.0);
        objects.push_back({&board, Pose(Eigen::Quaterniond::Identity(), at)});
        if (s.occluder_offset == 0.0) continue;
      }
      out.visible_ids.push_back(static_cast<int>(i));
      out.visible_poses.push_back(pose);
    }
    out.depth = composite_scene(objects, background, script.noise, mix_seed(seed, 100 + f), k).depth;
    frames.push_back(std::move(out));
  }
  return frames;
}

namespace {

InstanceScript centred_instance(Rng& rng, const TrainingRange& range, const CameraIntrinsics& k,
                                const Eigen::Vector2d& pixel) {
  InstanceScript s;
  TrainingRange inner = range;
  inner.tilt_max *= 0.5;
  inner.inplane_range *= 0.5;
  inner.radius_min = inner.radius_max = 0.5 * (range.radius_min + range.radius_max);
  s.start = place_at_pixel(sample_centered_pose(rng, inner), pixel, k);
  return s;
}

}  // namespace

SequenceScript lifecycle_script(const TrainingRange& range, const CameraIntrinsics& k, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x11fe));
  SequenceScript script;
  script.frames = 100;
  InstanceScript s = centred_instance(rng, range, k, {k.cx - 60.0, k.cy});
  s.appear = 20;
  s.disappear = 80;
  s.occlude_begin = 60;
  s.occlude_end = 70;
  s.occluder_offset = -0.175;
  s.velocity << 0.0, 0.0, deg2rad(0.1), 0.002, 0.0, 0.0;
  s.start = Pose(s.start.rotation(), s.start.translation() - s.velocity.tail<3>() * 50.0);
  script.instances.push_back(s);
  return script;
}

SequenceScript two_instance_script(const TrainingRange& range, const CameraIntrinsics& k, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x2a2a));
  SequenceScript script;
  script.frames = 60;
  InstanceScript a = centred_instance(rng, range, k, {k.cx - 150.0, k.cy - 40.0});
  InstanceScript b = centred_instance(rng, range, k, {k.cx + 150.0, k.cy + 40.0});
  a.velocity << 0.0, deg2rad(0.15), 0.0, 0.0, 0.0015, 0.0;
  b.velocity << deg2rad(-0.1), 0.0, 0.0, 0.0, -0.0015, 0.001;
  script.instances = {a, b};
  return script;
}

}  // namespace pf
