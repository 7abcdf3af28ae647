#include "poseforest/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "poseforest/random.hpp"

namespace pf {

void DepthFrame::validate(double min_depth, double max_depth) const {
  for (Eigen::Index i = 0; i < data_.size(); ++i) {
    const float z = data_.data()[i];
    if (!std::isfinite(z) || z < 0.0f)
      throw Error(ErrorKind::InvalidArgument, "depth frame holds a negative or non-finite value");
    if (z > 0.0f && (z < min_depth || z > max_depth))
      throw Error(ErrorKind::InvalidArgument, "depth value outside the sensor range");
  }
}

namespace {

constexpr double kNear = 1e-3;

struct ScreenVertex {
  double x, y, z;
};

// Sutherland-Hodgman against z = kNear; returns 0, 3 or 4 camera-frame points.
int clip_near(const std::array<Eigen::Vector3d, 3>& in, std::array<Eigen::Vector3d, 4>& out) {
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d& a = in[i];
    const Eigen::Vector3d& b = in[(i + 1) % 3];
    const bool ain = a.z() >= kNear, bin = b.z() >= kNear;
    if (ain) out[n++] = a;
    if (ain != bin) {
      const double s = (kNear - a.z()) / (b.z() - a.z());
      out[n++] = a + s * (b - a);
    }
  }
  return n;
}

double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// Edge a->b of a triangle with positive `edge(v0, v1, v2)` area in y-down
// screen space: top edges run in +x along a row, left edges run upwards.
bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
  return (a.y == b.y && b.x > a.x) || b.y < a.y;
}

void raster_triangle(ScreenVertex v0, ScreenVertex v1, ScreenVertex v2, ViewSample& out) {
  double area = edge(v0, v1, v2.x, v2.y);
  if (area == 0.0 || !std::isfinite(area)) return;
  if (area < 0) {
    std::swap(v1, v2);
    area = -area;
  }
  const int w = out.depth.width(), h = out.depth.height();
  const int xmin = std::max(0, static_cast<int>(std::ceil(std::min({v0.x, v1.x, v2.x}))));
  const int xmax = std::min(w - 1, static_cast<int>(std::floor(std::max({v0.x, v1.x, v2.x}))));
  const int ymin = std::max(0, static_cast<int>(std::ceil(std::min({v0.y, v1.y, v2.y}))));
  const int ymax = std::min(h - 1, static_cast<int>(std::floor(std::max({v0.y, v1.y, v2.y}))));
  if (xmin > xmax || ymin > ymax) return;

  const bool tl0 = top_left(v1, v2), tl1 = top_left(v2, v0), tl2 = top_left(v0, v1);
  const double iz0 = 1.0 / v0.z, iz1 = 1.0 / v1.z, iz2 = 1.0 / v2.z;
  for (int y = ymin; y <= ymax; ++y) {
    for (int x = xmin; x <= xmax; ++x) {
      const double w0 = edge(v1, v2, x, y);
      const double w1 = edge(v2, v0, x, y);
      const double w2 = edge(v0, v1, x, y);
      if (w0 < 0 || w1 < 0 || w2 < 0) continue;
      if ((w0 == 0 && !tl0) || (w1 == 0 && !tl1) || (w2 == 0 && !tl2)) continue;
      // 1/z is affine in screen space for a planar triangle.
      const double inv_z = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area;
      const double z = 1.0 / inv_z;
      const float zf = static_cast<float>(z);
      if (!out.mask(y, x) || zf < out.depth(x, y)) {
        out.depth(x, y) = zf;
        out.mask(y, x) = true;
      }
    }
  }
}

ViewSample empty_view(const Pose& pose, const CameraIntrinsics& k) {
  k.validate();
  ViewSample view{pose, DepthFrame(k.width, k.height), Mask::Constant(k.height, k.width, false)};
  return view;
}

std::vector<Eigen::Vector3d> to_camera(const TriangleMesh& mesh, const Pose& pose) {
  std::vector<Eigen::Vector3d> cam;
  cam.reserve(mesh.vertices().size());
  for (const auto& v : mesh.vertices()) cam.push_back(pose * v);
  return cam;
}

}  // namespace

ViewSample render_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& k) {
  ViewSample view = empty_view(pose, k);
  const auto cam = to_camera(mesh, pose);
  auto to_screen = [&](const Eigen::Vector3d& p) {
    return ScreenVertex{k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, p.z()};
  };
  std::array<Eigen::Vector3d, 4> poly;
  for (const auto& t : mesh.triangles()) {
    const std::array<Eigen::Vector3d, 3> tri = {cam[t[0]], cam[t[1]], cam[t[2]]};
    const int n = clip_near(tri, poly);
    if (n < 3) continue;
    const ScreenVertex s0 = to_screen(poly[0]);
    for (int i = 1; i + 1 < n; ++i) raster_triangle(s0, to_screen(poly[i]), to_screen(poly[i + 1]), view);
  }
  if (!view.mask.any()) throw Error(ErrorKind::NothingVisible, "mesh covers no pixel");
  return view;
}

ViewSample raycast_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& k) {
  ViewSample view = empty_view(pose, k);
  const auto cam = to_camera(mesh, pose);
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> best =
      Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(
          k.height, k.width, std::numeric_limits<double>::infinity());

  for (const auto& t : mesh.triangles()) {
    const Eigen::Vector3d& v0 = cam[t[0]];
    const Eigen::Vector3d e1 = cam[t[1]] - v0;
    const Eigen::Vector3d e2 = cam[t[2]] - v0;

    // Pixel range: projected bounds when fully in front, else the frame.
    int xmin = 0, xmax = k.width - 1, ymin = 0, ymax = k.height - 1;
    if (v0.z() > 0 && cam[t[1]].z() > 0 && cam[t[2]].z() > 0) {
      double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
      for (int i = 0; i < 3; ++i) {
        const Eigen::Vector3d& p = cam[t[i]];
        const double u = k.fx * p.x() / p.z() + k.cx, v = k.fy * p.y() / p.z() + k.cy;
        lo_x = std::min(lo_x, u), hi_x = std::max(hi_x, u);
        lo_y = std::min(lo_y, v), hi_y = std::max(hi_y, v);
      }
      xmin = std::max(xmin, static_cast<int>(std::floor(lo_x)) - 1);
      xmax = std::min(xmax, static_cast<int>(std::ceil(hi_x)) + 1);
      ymin = std::max(ymin, static_cast<int>(std::floor(lo_y)) - 1);
      ymax = std::min(ymax, static_cast<int>(std::ceil(hi_y)) + 1);
    }

    for (int y = ymin; y <= ymax; ++y) {
      for (int x = xmin; x <= xmax; ++x) {
        const Eigen::Vector3d dir((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
        const Eigen::Vector3d pvec = dir.cross(e2);
        const double det = e1.dot(pvec);
        if (std::abs(det) < 1e-15) continue;
        const double inv = 1.0 / det;
        const Eigen::Vector3d tvec = -v0;
        const double u = tvec.dot(pvec) * inv;
        if (u < 0.0 || u > 1.0) continue;
        const Eigen::Vector3d qvec = tvec.cross(e1);
        const double v = dir.dot(qvec) * inv;
        if (v < 0.0 || u + v > 1.0) continue;
        // dir.z == 1, so the ray parameter is the depth.
        const double z = e2.dot(qvec) * inv;
        if (z > 0 && z < best(y, x)) best(y, x) = z;
      }
    }
  }
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x)
      if (std::isfinite(best(y, x))) {
        view.depth(x, y) = static_cast<float>(best(y, x));
        view.mask(y, x) = true;
      }
  if (!view.mask.any()) throw Error(ErrorKind::NothingVisible, "mesh covers no pixel");
  return view;
}

Pose look_at_origin(const Eigen::Vector3d& camera_position, double inplane) {
  const double r = camera_position.norm();
  if (!(r > 0)) throw Error(ErrorKind::InvalidArgument, "camera at the object origin");
  const Eigen::Vector3d z = -camera_position / r;
  const Eigen::Vector3d up = std::abs(z.z()) > 0.99 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d x = z.cross(up).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d rot;
  rot.row(0) = x.transpose();
  rot.row(1) = y.transpose();
  rot.row(2) = z.transpose();
  const Eigen::Matrix3d roll = Eigen::AngleAxisd(inplane, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return Pose(Eigen::Matrix3d(roll * rot), Eigen::Vector3d(0, 0, r));
}

std::vector<Eigen::Vector3d> icosphere_directions(int subdivisions) {
  const TriangleMesh sphere = shapes::icosphere(1.0, subdivisions);
  return sphere.vertices();
}

std::vector<double> inplane_angles(const ViewSphereSpec& spec) {
  std::vector<double> angles;
  const int n = std::max(1, spec.inplane_steps);
  const bool full = spec.inplane_range >= std::numbers::pi - 1e-9;
  for (int i = 0; i < n; ++i) {
    if (full)
      angles.push_back(2.0 * std::numbers::pi * i / n);
    else if (n == 1)
      angles.push_back(0.0);
    else
      angles.push_back(-spec.inplane_range + 2.0 * spec.inplane_range * i / (n - 1));
  }
  return angles;
}

std::vector<Pose> sample_view_sphere(const ViewSphereSpec& spec) {
  if (!(spec.radius_min > 0) || spec.radius_max < spec.radius_min || spec.radius_steps < 1 ||
      spec.subdivisions < 0 || spec.inplane_steps < 1)
    throw Error(ErrorKind::InvalidArgument, "invalid view sphere specification");
  std::vector<double> radii;
  for (int i = 0; i < spec.radius_steps; ++i)
    radii.push_back(spec.radius_steps == 1 ? spec.radius_min
                                           : spec.radius_min + (spec.radius_max - spec.radius_min) * i /
                                                                   (spec.radius_steps - 1));
  const auto angles = inplane_angles(spec);
  const Eigen::Vector3d axis = spec.axis.normalized();

  std::vector<Pose> poses;
  for (const auto& dir : icosphere_directions(spec.subdivisions)) {
    if (std::acos(std::clamp(dir.dot(axis), -1.0, 1.0)) > spec.tilt_max + 1e-9) continue;
    for (double phi : angles)
      for (double r : radii) poses.push_back(look_at_origin(dir * r, phi));
  }
  return poses;
}

void apply_noise(DepthFrame& frame, const NoiseParams& noise, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6e6f697365));
  auto& data = frame.data();
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double g = normal(rng);
    const double drop = uniform01(rng);
    double z = data.data()[i];
    if (z <= 0) continue;
    z += noise.sigma0 * z * z * g;
    if (noise.quantum > 0) z = std::round(z / noise.quantum) * noise.quantum;
    if (drop < noise.dropout || z < noise.min_depth || z > noise.max_depth) z = 0;
    data.data()[i] = static_cast<float>(z);
  }
}

SceneComposite composite_scene(std::span<const SceneObject> objects, const DepthFrame& background,
                               const NoiseParams& noise, std::uint64_t seed, const CameraIntrinsics& k) {
  k.validate();
  SceneComposite out;
  out.depth = background.empty() ? DepthFrame(k.width, k.height) : background;
  if (out.depth.width() != k.width || out.depth.height() != k.height)
    throw Error(ErrorKind::InvalidArgument, "background size differs from the intrinsics");
  out.owner.setConstant(k.height, k.width, -1);

  for (std::size_t i = 0; i < objects.size(); ++i) {
    ObjectTruth truth{objects[i].pose};
    ViewSample view;
    try {
      view = render_depth(*objects[i].mesh, objects[i].pose, k);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NothingVisible) throw;
      out.truths.push_back(truth);
      continue;
    }
    truth.rendered_pixels = static_cast<std::size_t>(view.mask.count());
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x) {
        if (!view.mask(y, x)) continue;
        const float z = view.depth(x, y);
        const float cur = out.depth(x, y);
        // Ties keep the earlier object so the result is order-independent in depth.
        if (cur <= 0.0f || z < cur) {
          out.depth(x, y) = z;
          out.owner(y, x) = static_cast<std::int16_t>(i);
        }
      }
    out.truths.push_back(truth);
  }
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x)
      if (out.owner(y, x) >= 0) ++out.truths[out.owner(y, x)].visible_pixels;

  apply_noise(out.depth, noise, seed);
  return out;
}

DepthFrame render_plane(const Eigen::Vector3d& normal, double offset, const CameraIntrinsics& k,
                        double max_depth) {
  DepthFrame frame(k.width, k.height);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Eigen::Vector3d ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const double den = normal.dot(ray);
      if (std::abs(den) < 1e-12) continue;
      const double z = offset / den;
      if (z > 0.1 && z <= max_depth) frame(x, y) = static_cast<float>(z);
    }
  return frame;
}

}  // namespace pf
