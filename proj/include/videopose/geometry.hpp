#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace vp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Scalar-first quaternion. Raw network outputs are stored unnormalized; every
// geometric use goes through normalized().
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  double dot(const Quaternion &other) const;
  // Throws kInvalidInput on a zero-norm quaternion.
  Quaternion normalized() const;
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  Quaternion operator*(double s) const { return {w * s, x * s, y * s, z * s}; }
  // Hamilton product.
  Quaternion compose(const Quaternion &rhs) const;
  // Sign-canonical form with w >= 0.
  Quaternion canonical() const;

  static Quaternion identity() { return {}; }
  static Quaternion from_axis_angle(const Vec3 &axis, double angle);
  static Quaternion from_matrix(const Mat3 &rotation);
};

struct Pose {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  Mat3 rotation_matrix() const;
  Vec3 transform(const Vec3 &point) const;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double px = 0.0;
  double py = 0.0;

  // Throws kInvalidInput unless fx > 0 and fy > 0.
  void validate() const;
  Mat3 matrix() const;
};

// World-to-camera rigid transform.
class CameraExtrinsic {
 public:
  CameraExtrinsic() : matrix_{Mat4::Identity()} {}
  // Throws kInvalidInput when the rotation block is not orthonormal within
  // 1e-6 or the bottom row is not (0, 0, 0, 1).
  explicit CameraExtrinsic(const Mat4 &matrix);

  static CameraExtrinsic from_rotation_translation(const Mat3 &rotation,
                                                   const Vec3 &translation);
  static CameraExtrinsic look_at(const Vec3 &eye, const Vec3 &target,
                                 const Vec3 &up);

  const Mat4 &matrix() const { return matrix_; }
  Mat3 rotation() const { return matrix_.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return matrix_.topRightCorner<3, 1>(); }
  CameraExtrinsic inverse() const;
  CameraExtrinsic operator*(const CameraExtrinsic &rhs) const;
  Vec3 apply(const Vec3 &point) const;

 private:
  Mat4 matrix_;
};

Mat3 quat_to_matrix(const Quaternion &q);

// Pinhole projection of a camera-frame point.
Vec2 project_center(const Vec3 &translation, const CameraIntrinsics &k);

// Inverse of project_center given the depth, with the regressed pixel offset
// added to the box center.
Vec3 recover_translation(const Vec2 &box_center, const Vec2 &delta_c,
                         double tz, const CameraIntrinsics &k);

// M_curr * M_prev^-1: maps points in the previous camera frame into the
// current camera frame.
CameraExtrinsic relative_transform(const CameraExtrinsic &prev,
                                   const CameraExtrinsic &curr);

// Geodesic angle in [0, pi], insensitive to the sign of either argument.
double rotation_angle_between(const Quaternion &q1, const Quaternion &q2);

double deg_from_rad(double rad);

}  // namespace vp
