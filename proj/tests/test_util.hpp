#pragma once

#include <doctest.h>

#include <functional>

#include "poseforest/error.hpp"
#include "poseforest/geom.hpp"
#include "poseforest/random.hpp"

namespace pf::test {

/// Uniform axis, angle in [0, max_angle), translation in a 1 m cube.
inline Pose random_pose(Rng& rng, double max_angle = 3.14159) {
  Eigen::Vector3d axis;
  do {
    axis = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
  } while (axis.norm() < 1e-6);
  const double angle = uniform(rng, 0.0, max_angle);
  const Eigen::Vector3d t(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
  return Pose(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())), t);
}

inline void check_error_kind(const std::function<void()>& fn, ErrorKind kind) {
  bool thrown = false;
  try {
    fn();
  } catch (const Error& e) {
    thrown = true;
    CHECK(e.kind() == kind);
  }
  CHECK(thrown);
}

}  // namespace pf::test
