#include <doctest.h>

#include <cmath>

#include "poseforest/geom.hpp"
#include "poseforest/mesh.hpp"
#include "poseforest/random.hpp"
#include "test_util.hpp"

using namespace pf;

namespace {

// Independent route to roll/pitch/yaw: closed-form quaternion expressions
// for R = Rz(yaw) Ry(pitch) Rx(roll).
Eigen::Vector3d euler_from_quaternion(const Eigen::Quaterniond& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  const double roll = std::atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y));
  const double pitch = std::asin(std::clamp(2 * (w * y - z * x), -1.0, 1.0));
  const double yaw = std::atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z));
  return {roll, pitch, yaw};
}

const CameraIntrinsics kCam{500, 500, 320, 240, 640, 480};

}  // namespace

TEST_CASE("compose examples") {
  Rng rng(1);
  const Pose t = test::random_pose(rng);
  const auto [a0, d0] = pose_distance(compose(Pose::identity(), t), t);
  CHECK(a0 < 1e-12);
  CHECK(d0 < 1e-12);
  const auto [a1, d1] = pose_distance(compose(t, invert(t)), Pose::identity());
  CHECK(a1 < 1e-9);
  CHECK(d1 < 1e-9);
  const Pose sum = compose(Pose::translation_only(1, 0, 0), Pose::translation_only(0, 2, 0));
  CHECK(sum.translation().isApprox(Eigen::Vector3d(1, 2, 0)));
  CHECK(rotation_angle(sum.rotation()) == 0.0);
}

TEST_CASE("compose applies the right operand first") {
  const Pose rot = Pose::rotation_only(Eigen::Vector3d::UnitZ(), deg2rad(90));
  const Pose shift = Pose::translation_only(1, 0, 0);
  const Eigen::Vector3d p = compose(rot, shift) * Eigen::Vector3d::Zero();
  CHECK(p.isApprox(Eigen::Vector3d(0, 1, 0), 1e-12));
}

TEST_CASE("group properties over random transforms") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Pose a = test::random_pose(rng), b = test::random_pose(rng), c = test::random_pose(rng);
    const auto [ang, dist] = pose_distance(compose(compose(a, b), c), compose(a, compose(b, c)));
    REQUIRE(ang < 1e-9);
    REQUIRE(dist < 1e-9);
    const auto [ang2, dist2] = pose_distance(invert(invert(a)), a);
    REQUIRE(ang2 < 1e-9);
    REQUIRE(dist2 < 1e-9);
    REQUIRE(std::abs(compose(a, b).rotation().norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("pose delta encoding") {
  CHECK(encode(Pose::identity()) == Delta::Zero());
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Pose t = test::random_pose(rng, std::numbers::pi - 1e-6);
    const auto [ang, dist] = pose_distance(decode(encode(t)), t);
    REQUIRE(ang < 1e-9);
    REQUIRE(dist < 1e-12);
    REQUIRE(encode(t).head<3>().norm() < std::numbers::pi);
  }
  // Near-pi rotations keep their angle.
  const Pose near_pi = Pose::rotation_only(Eigen::Vector3d(1, -1, 2), std::numbers::pi - 1e-6);
  CHECK(encode(near_pi).head<3>().norm() == doctest::Approx(std::numbers::pi - 1e-6).epsilon(1e-12));
}

TEST_CASE("project and backproject") {
  const auto a = project(Eigen::Vector3d(0, 0, 1), kCam);
  CHECK(a.x() == 320.0);
  CHECK(a.y() == 240.0);
  const auto b = project(Eigen::Vector3d(0.1, 0, 1), kCam);
  CHECK(b.x() == doctest::Approx(370.0));
  CHECK(b.y() == 240.0);
  CHECK_THROWS_AS(project(Eigen::Vector3d(0, 0, -1), kCam), Error);
  test::check_error_kind([] { project(Eigen::Vector3d(0, 0, -1), kCam); }, ErrorKind::BehindCamera);

  CHECK(backproject(Eigen::Vector2d(320, 240), 1.0, kCam).isApprox(Eigen::Vector3d(0, 0, 1)));
  CHECK(backproject(Eigen::Vector2d(370, 240), 1.0, kCam).isApprox(Eigen::Vector3d(0.1, 0, 1)));
  test::check_error_kind([] { backproject(Eigen::Vector2d(320, 240), 0.0, kCam); },
                         ErrorKind::NonPositiveDepth);

  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector2d px(uniform(rng, 0, 640), uniform(rng, 0, 480));
    const double z = uniform(rng, 0.2, 10.0);
    const Eigen::Vector2d back = project(backproject(px, z, kCam), kCam);
    REQUIRE((back - px).norm() < 1e-9);
  }
}

TEST_CASE("intrinsics validation") {
  CHECK_NOTHROW(kCam.validate());
  CameraIntrinsics bad = kCam;
  bad.cx = 700;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = kCam;
  bad.fx = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("pose error examples") {
  Rng rng(5);
  const Pose truth = test::random_pose(rng);
  const PoseError zero = pose_error(truth, truth);
  CHECK(zero.t_x == 0.0);
  CHECK(zero.t_y == 0.0);
  CHECK(zero.t_z == 0.0);
  CHECK(zero.roll < 1e-9);
  CHECK(zero.pitch < 1e-9);
  CHECK(zero.yaw < 1e-9);

  const Pose shifted(truth.rotation(), truth.translation() + Eigen::Vector3d(0.001, 0, 0));
  const PoseError e1 = pose_error(shifted, truth);
  CHECK(e1.t_x == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(e1.t_y == 0.0);
  CHECK(e1.t_z == 0.0);

  // Truth rotated about the camera z axis; truth's own rotation is about z
  // too, so camera-frame and object-frame readings coincide.
  const Pose truth_z(Eigen::Quaterniond(Eigen::AngleAxisd(0.7, Eigen::Vector3d::UnitZ())),
                     Eigen::Vector3d(0.05, -0.02, 0.8));
  const Pose est_z(Eigen::AngleAxisd(deg2rad(2.0), Eigen::Vector3d::UnitZ()) * truth_z.rotation(),
                   truth_z.translation());
  const PoseError e2 = pose_error(est_z, truth_z);
  CHECK(e2.yaw == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(e2.roll < 1e-6);
  CHECK(e2.pitch < 1e-6);
  CHECK(e2.t_x < 1e-9);
  CHECK(e2.t_y < 1e-9);
  CHECK(e2.t_z < 1e-9);

  // Euler extraction against the quaternion-formula oracle.
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d angles(uniform(rng, -3.0, 3.0), uniform(rng, -1.5, 1.5), uniform(rng, -3.0, 3.0));
    const Eigen::Quaterniond q = Eigen::AngleAxisd(angles.z(), Eigen::Vector3d::UnitZ()) *
                                 Eigen::AngleAxisd(angles.y(), Eigen::Vector3d::UnitY()) *
                                 Eigen::AngleAxisd(angles.x(), Eigen::Vector3d::UnitX());
    const Eigen::Vector3d got = euler_xyz(q.toRotationMatrix());
    const Eigen::Vector3d oracle = euler_from_quaternion(q);
    REQUIRE((got - oracle).norm() < 1e-7);
    REQUIRE((got - angles).norm() < 1e-7);
  }
}

TEST_CASE("pose error is zero for identical random poses") {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Pose t = test::random_pose(rng);
    const PoseError e = pose_error(t, t);
    REQUIRE(e.t_x == 0.0);
    REQUIRE(e.t_y == 0.0);
    REQUIRE(e.t_z == 0.0);
    REQUIRE(std::max({e.roll, e.pitch, e.yaw}) < 1e-9);
  }
}

TEST_CASE("gimbal lock folds roll into yaw") {
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitX()))
                                .toRotationMatrix();
  const Eigen::Vector3d e = euler_xyz(r);
  CHECK(e.x() == 0.0);
  CHECK(e.y() == doctest::Approx(std::numbers::pi / 2).epsilon(1e-6));
  // Rz(a) Ry(90) Rx(b) == Rz(a - b) Ry(90)
  CHECK(e.z() == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("add distance") {
  const TriangleMesh cube = shapes::unit_cube();
  Rng rng(7);
  const Pose truth = test::random_pose(rng);
  CHECK(add_distance(truth, truth, cube) == 0.0);

  const Pose shifted(truth.rotation(), truth.translation() + Eigen::Vector3d(0.003, 0.0, -0.004));
  CHECK(add_distance(shifted, truth, cube) == doctest::Approx(0.005).epsilon(1e-12));

  // Frozen from a brute-force vertex loop (numpy), 10 deg about the centroid.
  const Pose rz = Pose::rotation_only(Eigen::Vector3d::UnitZ(), deg2rad(10));
  CHECK(add_distance(rz, Pose::identity(), cube) == doctest::Approx(0.12325683343243872).epsilon(1e-12));
  const Pose r123 = Pose::rotation_only(Eigen::Vector3d(1, 2, 3), deg2rad(10));
  CHECK(add_distance(r123, Pose::identity(), cube) == doctest::Approx(0.11759453091936002).epsilon(1e-12));

  test::check_error_kind(
      [&] { add_distance(truth, truth, std::span<const Eigen::Vector3d>()); }, ErrorKind::EmptyMesh);
}
