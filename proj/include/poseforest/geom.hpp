#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "poseforest/error.hpp"

namespace pf {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

/// Axis-angle rotation vector (first three) followed by translation in meters.
template <typename Scalar>
using PoseDelta = Eigen::Matrix<Scalar, 6, 1>;

using Delta = PoseDelta<double>;

/// Rotation vector of a unit quaternion. The shorter of the two antipodal
/// representations is used, so the angle lies in [0, pi].
template <typename Scalar>
Vector3<Scalar> log_rotation(const Eigen::Quaternion<Scalar>& q_in) {
  Eigen::Quaternion<Scalar> q = q_in;
  if (q.w() < Scalar(0)) q.coeffs() = -q.coeffs();
  const Vector3<Scalar> v = q.vec();
  const Scalar s = v.norm();
  if (s == Scalar(0)) return Vector3<Scalar>::Zero();
  const Scalar angle = Scalar(2) * std::atan2(s, q.w());
  return v * (angle / s);
}

template <typename Scalar>
Eigen::Quaternion<Scalar> exp_rotation(const Vector3<Scalar>& omega) {
  const Scalar angle = omega.norm();
  if (angle == Scalar(0)) return Eigen::Quaternion<Scalar>::Identity();
  const Scalar half = angle / Scalar(2);
  const Vector3<Scalar> v = omega * (std::sin(half) / angle);
  Eigen::Quaternion<Scalar> q(std::cos(half), v.x(), v.y(), v.z());
  q.normalize();
  return q;
}

template <typename Scalar>
Scalar rotation_angle(const Eigen::Quaternion<Scalar>& q) {
  return log_rotation(q).norm();
}

/// SE(3) element mapping object coordinates into camera coordinates.
/// The rotation is kept unit-norm after every constructor and operation.
template <typename Scalar>
class RigidTransform {
 public:
  using Quaternion = Eigen::Quaternion<Scalar>;
  using Vector = Vector3<Scalar>;
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  using Matrix34 = Eigen::Matrix<Scalar, 3, 4>;

  RigidTransform() : rotation_(Quaternion::Identity()), translation_(Vector::Zero()) {}

  RigidTransform(const Quaternion& rotation, const Vector& translation)
      : rotation_(rotation.normalized()), translation_(translation) {}

  RigidTransform(const Matrix3& rotation, const Vector& translation)
      : rotation_(Quaternion(rotation).normalized()), translation_(translation) {}

  static RigidTransform identity() { return RigidTransform(); }

  static RigidTransform translation_only(Scalar x, Scalar y, Scalar z) {
    return RigidTransform(Quaternion::Identity(), Vector(x, y, z));
  }

  static RigidTransform rotation_only(const Vector& axis, Scalar angle) {
    return RigidTransform(Quaternion(Eigen::AngleAxis<Scalar>(angle, axis.normalized())),
                          Vector::Zero());
  }

  static RigidTransform from_matrix(const Matrix34& m) {
    return RigidTransform(Matrix3(m.template leftCols<3>()), Vector(m.col(3)));
  }

  const Quaternion& rotation() const { return rotation_; }
  const Vector& translation() const { return translation_; }
  Matrix3 rotation_matrix() const { return rotation_.toRotationMatrix(); }

  Matrix34 matrix() const {
    Matrix34 m;
    m.template leftCols<3>() = rotation_matrix();
    m.col(3) = translation_;
    return m;
  }

  Vector operator*(const Vector& p) const { return rotation_ * p + translation_; }

  template <typename Other>
  RigidTransform<Other> cast() const {
    return RigidTransform<Other>(rotation_.template cast<Other>(),
                                 translation_.template cast<Other>());
  }

 private:
  Quaternion rotation_;
  Vector translation_;
};

using Pose = RigidTransform<double>;

/// a after b: points are mapped by b first.
template <typename Scalar>
RigidTransform<Scalar> compose(const RigidTransform<Scalar>& a, const RigidTransform<Scalar>& b) {
  return RigidTransform<Scalar>(a.rotation() * b.rotation(),
                                a.rotation() * b.translation() + a.translation());
}

template <typename Scalar>
RigidTransform<Scalar> operator*(const RigidTransform<Scalar>& a, const RigidTransform<Scalar>& b) {
  return compose(a, b);
}

template <typename Scalar>
RigidTransform<Scalar> invert(const RigidTransform<Scalar>& t) {
  const Eigen::Quaternion<Scalar> r = t.rotation().conjugate();
  return RigidTransform<Scalar>(r, -(r * t.translation()));
}

template <typename Scalar>
PoseDelta<Scalar> encode(const RigidTransform<Scalar>& t) {
  PoseDelta<Scalar> d;
  d.template head<3>() = log_rotation(t.rotation());
  d.template tail<3>() = t.translation();
  return d;
}

template <typename Derived>
RigidTransform<typename Derived::Scalar> decode(const Eigen::MatrixBase<Derived>& d) {
  using Scalar = typename Derived::Scalar;
  return RigidTransform<Scalar>(exp_rotation<Scalar>(d.template head<3>()),
                                Vector3<Scalar>(d.template tail<3>()));
}

/// Rotation angle (radians) and translation distance between two poses.
template <typename Scalar>
std::pair<Scalar, Scalar> pose_distance(const RigidTransform<Scalar>& a,
                                        const RigidTransform<Scalar>& b) {
  return {rotation_angle<Scalar>(a.rotation().conjugate() * b.rotation()),
          (a.translation() - b.translation()).norm()};
}

struct CameraIntrinsics {
  double fx = 575.0;
  double fy = 575.0;
  double cx = 319.5;
  double cy = 239.5;
  int width = 640;
  int height = 480;

  void validate() const {
    if (!(fx > 0 && fy > 0) || width <= 0 || height <= 0 || !(cx >= 0 && cx < width) ||
        !(cy >= 0 && cy < height))
      throw Error(ErrorKind::InvalidArgument, "camera intrinsics out of range");
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> project(const Vector3<Scalar>& p, const CameraIntrinsics& k) {
  if (!(p.z() > Scalar(0))) throw Error(ErrorKind::BehindCamera, "point has z <= 0");
  return {Scalar(k.fx) * p.x() / p.z() + Scalar(k.cx), Scalar(k.fy) * p.y() / p.z() + Scalar(k.cy)};
}

template <typename Scalar>
Vector3<Scalar> backproject(const Eigen::Matrix<Scalar, 2, 1>& pixel, Scalar depth,
                            const CameraIntrinsics& k) {
  if (!(depth > Scalar(0))) throw Error(ErrorKind::NonPositiveDepth, "depth must be positive");
  return {(pixel.x() - Scalar(k.cx)) / Scalar(k.fx) * depth,
          (pixel.y() - Scalar(k.cy)) / Scalar(k.fy) * depth, depth};
}

/// Rotation taking the optical axis onto the viewing ray through `pixel`.
/// Minimal (no twist about the ray).
inline Eigen::Quaterniond ray_rotation(const Eigen::Vector2d& pixel, const CameraIntrinsics& k) {
  const Eigen::Vector3d ray((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
  return Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), ray.normalized());
}

/// Per-axis absolute errors: translation in millimeters, rotation in degrees.
struct PoseError {
  double t_x = 0, t_y = 0, t_z = 0;
  double roll = 0, pitch = 0, yaw = 0;
};

/// X-Y-Z fixed-axis angles (roll, pitch, yaw) with R = Rz(yaw) Ry(pitch) Rx(roll).
/// At pitch = +-90 deg roll is pinned to zero and the remainder goes to yaw.
template <typename Scalar>
Vector3<Scalar> euler_xyz(const Eigen::Matrix<Scalar, 3, 3>& r) {
  const Scalar s = std::clamp(-r(2, 0), Scalar(-1), Scalar(1));
  const Scalar pitch = std::asin(s);
  if (std::abs(s) > Scalar(1) - Scalar(1e-12)) {
    // Gimbal lock.
    const Scalar yaw = std::atan2(-r(0, 1), r(1, 1));
    return {Scalar(0), pitch, yaw};
  }
  return {std::atan2(r(2, 1), r(2, 2)), pitch, std::atan2(r(1, 0), r(0, 0))};
}

/// Relative rotation is truth^-1 * estimate.
template <typename Scalar>
PoseError pose_error(const RigidTransform<Scalar>& estimate, const RigidTransform<Scalar>& truth) {
  const Vector3<Scalar> dt = (estimate.translation() - truth.translation()).cwiseAbs() * Scalar(1000);
  const Eigen::Matrix<Scalar, 3, 3> rel =
      (truth.rotation().conjugate() * estimate.rotation()).toRotationMatrix();
  const Vector3<Scalar> e = euler_xyz(rel).cwiseAbs() * Scalar(180.0 / std::numbers::pi);
  return {double(dt.x()), double(dt.y()), double(dt.z()), double(e.x()), double(e.y()), double(e.z())};
}

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

}  // namespace pf
