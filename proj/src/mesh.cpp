#include "poseforest/mesh.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>

namespace pf {

TriangleMesh::TriangleMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Eigen::Vector3i> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  if (vertices_.empty() || triangles_.empty()) throw Error(ErrorKind::EmptyMesh, "mesh has no triangles");
  const int n = static_cast<int>(vertices_.size());
  for (const auto& v : vertices_)
    if (!v.allFinite()) throw Error(ErrorKind::InvalidMesh, "non-finite vertex coordinate");
  for (const auto& t : triangles_)
    if ((t.array() < 0).any() || (t.array() >= n).any())
      throw Error(ErrorKind::InvalidMesh, "triangle index out of range");

  double d2 = 0;
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    radius_ = std::max(radius_, vertices_[i].norm());
    for (std::size_t j = i + 1; j < vertices_.size(); ++j)
      d2 = std::max(d2, (vertices_[i] - vertices_[j]).squaredNorm());
  }
  diameter_ = std::sqrt(d2);
  if (!(diameter_ > 0)) throw Error(ErrorKind::InvalidMesh, "mesh has zero diameter");
}

double TriangleMesh::surface_area() const {
  double area = 0;
  for (const auto& t : triangles_)
    area += 0.5 * (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]).norm();
  return area;
}

TriangleMesh TriangleMesh::merged(const TriangleMesh& other) const {
  auto vertices = vertices_;
  auto triangles = triangles_;
  const int offset = static_cast<int>(vertices.size());
  vertices.insert(vertices.end(), other.vertices_.begin(), other.vertices_.end());
  for (const auto& t : other.triangles_) triangles.push_back(t.array() + offset);
  return TriangleMesh(std::move(vertices), std::move(triangles));
}

TriangleMesh TriangleMesh::transformed(const Pose& t) const {
  auto vertices = vertices_;
  for (auto& v : vertices) v = t * v;
  return TriangleMesh(std::move(vertices), triangles_);
}

double add_distance(const Pose& estimate, const Pose& truth, std::span<const Eigen::Vector3d> vertices) {
  if (vertices.empty()) throw Error(ErrorKind::EmptyMesh, "add_distance needs vertices");
  double sum = 0;
  for (const auto& v : vertices) sum += (estimate * v - truth * v).norm();
  return sum / double(vertices.size());
}

namespace shapes {
namespace {

using Quad = std::array<int, 4>;

void push_quad(std::vector<Eigen::Vector3i>& tris, const Quad& q) {
  tris.emplace_back(q[0], q[1], q[2]);
  tris.emplace_back(q[0], q[2], q[3]);
}

// Flips triangles whose normal points towards `inner(centroid)`.
void orient_outward(const std::vector<Eigen::Vector3d>& v, std::vector<Eigen::Vector3i>& tris,
                    const std::function<Eigen::Vector3d(const Eigen::Vector3d&)>& inner) {
  for (auto& t : tris) {
    const Eigen::Vector3d c = (v[t[0]] + v[t[1]] + v[t[2]]) / 3.0;
    const Eigen::Vector3d n = (v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]);
    if (n.dot(c - inner(c)) < 0) std::swap(t[1], t[2]);
  }
}

// Two stacked axis-aligned rectangles joined by planar side faces.
TriangleMesh prismatoid(const Eigen::Vector4d& bottom, double zb, const Eigen::Vector4d& top, double zt) {
  // rect = (xmin, xmax, ymin, ymax)
  std::vector<Eigen::Vector3d> v = {
      {bottom[0], bottom[2], zb}, {bottom[1], bottom[2], zb}, {bottom[1], bottom[3], zb},
      {bottom[0], bottom[3], zb}, {top[0], top[2], zt},       {top[1], top[2], zt},
      {top[1], top[3], zt},       {top[0], top[3], zt}};
  std::vector<Eigen::Vector3i> tris;
  push_quad(tris, {0, 3, 2, 1});
  push_quad(tris, {4, 5, 6, 7});
  push_quad(tris, {0, 1, 5, 4});
  push_quad(tris, {1, 2, 6, 5});
  push_quad(tris, {2, 3, 7, 6});
  push_quad(tris, {3, 0, 4, 7});
  return TriangleMesh(std::move(v), std::move(tris));
}

}  // namespace

TriangleMesh box(double sx, double sy, double sz) {
  const Eigen::Vector4d r(-sx / 2, sx / 2, -sy / 2, sy / 2);
  return prismatoid(r, -sz / 2, r, sz / 2);
}

TriangleMesh unit_cube() { return box(1, 1, 1); }

TriangleMesh wedge() {
  return prismatoid(Eigen::Vector4d(-0.07, 0.07, -0.045, 0.045), -0.05,
                    Eigen::Vector4d(-0.02, 0.06, -0.02, 0.035), 0.06);
}

TriangleMesh icosphere(double radius, int subdivisions) {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0},
                                    {0, -1, p}, {0, 1, p}, {0, -1, -p}, {0, 1, -p},
                                    {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& x : v) x.normalize();
  std::vector<Eigen::Vector3i> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Eigen::Vector3i> next;
    next.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int a = mid(t[0], t[1]), b = mid(t[1], t[2]), c = mid(t[2], t[0]);
      next.emplace_back(t[0], a, c);
      next.emplace_back(t[1], b, a);
      next.emplace_back(t[2], c, b);
      next.emplace_back(a, b, c);
    }
    f = std::move(next);
  }
  for (auto& x : v) x *= radius;
  orient_outward(v, f, [](const Eigen::Vector3d&) { return Eigen::Vector3d::Zero(); });
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh cylinder(double radius, double height, int segments) {
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector3i> f;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * std::numbers::pi * i / segments;
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), -height / 2);
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), height / 2);
  }
  const int bottom = static_cast<int>(v.size());
  v.emplace_back(0, 0, -height / 2);
  v.emplace_back(0, 0, height / 2);
  for (int i = 0; i < segments; ++i) {
    const int j = (i + 1) % segments;
    push_quad(f, {2 * i, 2 * j, 2 * j + 1, 2 * i + 1});
    f.emplace_back(bottom, 2 * j, 2 * i);
    f.emplace_back(bottom + 1, 2 * i + 1, 2 * j + 1);
  }
  orient_outward(v, f, [h = height](const Eigen::Vector3d& c) {
    if (std::abs(std::abs(c.z()) - h / 2) < 1e-12) return Eigen::Vector3d(c.x(), c.y(), 0.0);
    return Eigen::Vector3d(0.0, 0.0, c.z());
  });
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh torus(double major, double minor, int major_segments, int minor_segments) {
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector3i> f;
  for (int i = 0; i < major_segments; ++i) {
    const double u = 2.0 * std::numbers::pi * i / major_segments;
    for (int j = 0; j < minor_segments; ++j) {
      const double w = 2.0 * std::numbers::pi * j / minor_segments;
      const double r = major + minor * std::cos(w);
      v.emplace_back(r * std::cos(u), r * std::sin(u), minor * std::sin(w));
    }
  }
  auto idx = [&](int i, int j) { return (i % major_segments) * minor_segments + (j % minor_segments); };
  for (int i = 0; i < major_segments; ++i)
    for (int j = 0; j < minor_segments; ++j)
      push_quad(f, {idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)});
  orient_outward(v, f, [major](const Eigen::Vector3d& c) {
    const Eigen::Vector2d ring = c.head<2>().normalized() * major;
    return Eigen::Vector3d(ring.x(), ring.y(), 0.0);
  });
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh blob(int subdivisions) {
  const TriangleMesh sphere = icosphere(1.0, subdivisions);
  std::vector<Eigen::Vector3d> v;
  v.reserve(sphere.vertices().size());
  for (const auto& u : sphere.vertices()) {
    const double r = 1.0 + 0.22 * std::sin(3.0 * u.x() + 1.0) * std::cos(2.0 * u.y() - 0.5) +
                     0.12 * std::sin(4.0 * u.z() + 2.0 * u.x()) + 0.08 * u.y();
    v.emplace_back(0.09 * r * u.x(), 0.065 * r * u.y(), 0.05 * r * u.z());
  }
  // Radial displacement keeps the mesh star-shaped, so the sphere's winding stays outward.
  return TriangleMesh(std::move(v), sphere.triangles());
}

TriangleMesh by_name(const std::string& name) {
  if (name == "blob") return blob();
  if (name == "cube") return unit_cube();
  if (name == "wedge") return wedge();
  if (name == "sphere") return icosphere(0.05, 3);
  if (name == "cylinder") return cylinder(0.04, 0.12, 32);
  if (name == "torus") return torus(0.06, 0.02, 50, 50);
  if (name == "box") return box(0.1, 0.07, 0.05);
  throw Error(ErrorKind::InvalidArgument, "unknown shape '" + name + "'");
}

}  // namespace shapes

}  // namespace pf
