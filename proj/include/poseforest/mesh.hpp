#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poseforest/geom.hpp"

namespace pf {

/// Triangle soup in the object frame, meters. Validated on construction.
class TriangleMesh {
 public:
  TriangleMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Eigen::Vector3i> triangles);

  const std::vector<Eigen::Vector3d>& vertices() const { return vertices_; }
  const std::vector<Eigen::Vector3i>& triangles() const { return triangles_; }

  /// Largest pairwise vertex distance.
  double diameter() const { return diameter_; }
  /// Largest vertex distance from the object origin.
  double radius() const { return radius_; }

  double surface_area() const;

  /// Concatenation; indices of `other` are shifted.
  TriangleMesh merged(const TriangleMesh& other) const;
  TriangleMesh transformed(const Pose& t) const;

 private:
  std::vector<Eigen::Vector3d> vertices_;
  std::vector<Eigen::Vector3i> triangles_;
  double diameter_ = 0;
  double radius_ = 0;
};

/// Mean distance between vertices mapped by the two poses.
double add_distance(const Pose& estimate, const Pose& truth, std::span<const Eigen::Vector3d> vertices);

inline double add_distance(const Pose& estimate, const Pose& truth, const TriangleMesh& mesh) {
  return add_distance(estimate, truth, std::span<const Eigen::Vector3d>(mesh.vertices()));
}

namespace shapes {

TriangleMesh box(double sx, double sy, double sz);
TriangleMesh unit_cube();
TriangleMesh icosphere(double radius, int subdivisions);
TriangleMesh cylinder(double radius, double height, int segments);
TriangleMesh torus(double major, double minor, int major_segments, int minor_segments);
/// Skewed truncated pyramid, about 0.2 m across. Convex and without
/// symmetries, so every view has a unique pose.
TriangleMesh wedge();

/// Smoothly dented ellipsoid, about 0.2 m across and without symmetries.
/// Curved everywhere, which keeps depth residuals informative in all directions.
TriangleMesh blob(int subdivisions = 3);

/// Looks up one of the named shapes above ("blob", "cube", "sphere", "cylinder",
/// "torus", "wedge").
TriangleMesh by_name(const std::string& name);

}  // namespace shapes

}  // namespace pf
