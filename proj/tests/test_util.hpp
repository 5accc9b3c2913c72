#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "videopose/geometry.hpp"

namespace vp::test {

inline Quaternion random_unit_quaternion(std::mt19937_64 &rng) {
  std::normal_distribution<double> n{0.0, 1.0};
  return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

inline Vec3 random_vec(std::mt19937_64 &rng, double lo, double hi) {
  std::uniform_real_distribution<double> u{lo, hi};
  return {u(rng), u(rng), u(rng)};
}

inline Pose random_pose(std::mt19937_64 &rng) {
  Pose p;
  p.rotation = random_unit_quaternion(rng);
  p.translation = random_vec(rng, -0.5, 0.5) + Vec3{0.0, 0.0, 1.5};
  return p;
}

inline CameraExtrinsic random_extrinsic(std::mt19937_64 &rng) {
  return CameraExtrinsic::from_rotation_translation(quat_to_matrix(random_unit_quaternion(rng)),
                                                    random_vec(rng, -1.0, 1.0));
}

}  // namespace vp::test
