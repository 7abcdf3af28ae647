#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "poseforest/geom.hpp"
#include "poseforest/mesh.hpp"

namespace pf {

/// Row-major metric depth image; 0 marks a pixel without a return.
class DepthFrame {
 public:
  using Buffer = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  DepthFrame() = default;
  DepthFrame(int width, int height) : data_(Buffer::Zero(height, width)) {}
  explicit DepthFrame(Buffer data) : data_(std::move(data)) {}

  int width() const { return static_cast<int>(data_.cols()); }
  int height() const { return static_cast<int>(data_.rows()); }
  bool empty() const { return data_.size() == 0; }

  float operator()(int x, int y) const { return data_(y, x); }
  float& operator()(int x, int y) { return data_(y, x); }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width() && y < height(); }
  bool valid(int x, int y) const { return contains(x, y) && data_(y, x) > 0.0f; }

  const Buffer& data() const { return data_; }
  Buffer& data() { return data_; }

  std::size_t valid_count() const { return static_cast<std::size_t>((data_ > 0.0f).count()); }

  /// Throws InvalidArgument unless every value is finite, non-negative and
  /// either 0 or inside [min_depth, max_depth].
  void validate(double min_depth = 0.1, double max_depth = 20.0) const;

  bool operator==(const DepthFrame& o) const {
    return width() == o.width() && height() == o.height() && (data_ == o.data_).all();
  }

 private:
  Buffer data_;
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One rendered view of a mesh: object-to-camera pose, depth and coverage.
struct ViewSample {
  Pose pose;
  DepthFrame depth;
  Mask mask;
};

/// Z-buffered rasterization sampled at integer pixel centers with
/// perspective-correct depth and a top-left fill rule.
/// Throws NothingVisible when no pixel is covered.
ViewSample render_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& k);

/// Per-pixel ray/triangle intersection; independent reference for render_depth.
ViewSample raycast_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& k);

/// Object-to-camera pose of a camera at `camera_position` (object frame)
/// looking at the object origin, rolled by `inplane` radians about the
/// optical axis. The origin lands at (0, 0, |camera_position|).
Pose look_at_origin(const Eigen::Vector3d& camera_position, double inplane = 0.0);

struct ViewSphereSpec {
  double radius_min = 0.6;
  double radius_max = 0.6;
  int radius_steps = 1;
  int subdivisions = 1;  // 0: 12 vertices, 1: 42, 2: 162, ...
  int inplane_steps = 1;
  /// In-plane angles are spread over [-inplane_range, inplane_range]; at pi
  /// (the default) they cover the full circle without repeating an angle.
  double inplane_range = 3.14159265358979323846;
  /// Directions farther than tilt_max from `axis` are dropped. pi keeps all.
  double tilt_max = 3.14159265358979323846;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
};

/// Unit vertices of the subdivided icosahedron, deterministic order.
std::vector<Eigen::Vector3d> icosphere_directions(int subdivisions);

/// Camera poses on the view sphere: directions x in-plane angles x radii.
std::vector<Pose> sample_view_sphere(const ViewSphereSpec& spec);

std::vector<double> inplane_angles(const ViewSphereSpec& spec);

struct NoiseParams {
  double sigma0 = 0.001;   // depth noise std at 1 m; scales with z^2
  double dropout = 0.05;   // probability that a valid pixel becomes 0
  double quantum = 0.001;  // quantization step; 0 disables
  double min_depth = 0.1;
  double max_depth = 20.0;

  static NoiseParams none() { return {0.0, 0.0, 0.0, 0.0, 1e30}; }
};

struct SceneObject {
  const TriangleMesh* mesh;
  Pose pose;
};

struct ObjectTruth {
  Pose pose;
  std::size_t rendered_pixels = 0;  // object coverage without occluders
  std::size_t visible_pixels = 0;   // pixels where this object is nearest
  double visible_fraction() const {
    return rendered_pixels ? double(visible_pixels) / double(rendered_pixels) : 0.0;
  }
};

struct SceneComposite {
  DepthFrame depth;
  std::vector<ObjectTruth> truths;  // same order as the input objects
  /// Index into `truths` of the object owning each pixel, -1 otherwise.
  Eigen::Array<std::int16_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner;
};

/// Per-pixel minimum over rendered objects and the background, followed by
/// depth-dependent Gaussian noise, quantization and dropout (seeded).
/// An empty `background` means no background returns.
SceneComposite composite_scene(std::span<const SceneObject> objects, const DepthFrame& background,
                               const NoiseParams& noise, std::uint64_t seed, const CameraIntrinsics& k);

/// Adds noise in place; same model as composite_scene.
void apply_noise(DepthFrame& frame, const NoiseParams& noise, std::uint64_t seed);

/// Depth of the plane n.x = d seen by the camera, 0 where it is behind or
/// outside [min_depth, max_depth].
DepthFrame render_plane(const Eigen::Vector3d& normal, double offset, const CameraIntrinsics& k,
                        double max_depth = 20.0);

}  // namespace pf
