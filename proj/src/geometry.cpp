#include "videopose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "videopose/error.hpp"

namespace vp {

double Quaternion::norm() const {
  return std::sqrt(w * w + x * x + y * y + z * z);
}

double Quaternion::dot(const Quaternion &o) const {
  return w * o.w + x * o.x + y * o.y + z * o.z;
}

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n))
    throw Error{ErrorCode::kInvalidInput,
                "quaternion has zero or non-finite norm"};
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::compose(const Quaternion &r) const {
  return {w * r.w - x * r.x - y * r.y - z * r.z,
          w * r.x + x * r.w + y * r.z - z * r.y,
          w * r.y - x * r.z + y * r.w + z * r.x,
          w * r.z + x * r.y - y * r.x + z * r.w};
}

Quaternion Quaternion::canonical() const { return w < 0.0 ? -*this : *this; }

Quaternion Quaternion::from_axis_angle(const Vec3 &axis, double angle) {
  const Vec3 a = axis.normalized();
  const double s = std::sin(angle / 2.0);
  return {std::cos(angle / 2.0), a.x() * s, a.y() * s, a.z() * s};
}

Quaternion Quaternion::from_matrix(const Mat3 &rotation) {
  const Eigen::Quaterniond q{rotation};
  return Quaternion{q.w(), q.x(), q.y(), q.z()}.normalized();
}

Mat3 Pose::rotation_matrix() const { return quat_to_matrix(rotation); }

Vec3 Pose::transform(const Vec3 &point) const {
  return rotation_matrix() * point + translation;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw Error{ErrorCode::kInvalidInput,
                "camera intrinsics require fx > 0 and fy > 0"};
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, px, 0.0, fy, py, 0.0, 0.0, 1.0;
  return k;
}

CameraExtrinsic::CameraExtrinsic(const Mat4 &matrix) : matrix_{matrix} {
  const Mat3 r = matrix.topLeftCorner<3, 3>();
  if (!matrix.allFinite() ||
      (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      r.determinant() < 0.0)
    throw Error{ErrorCode::kInvalidInput,
                "extrinsic rotation block is not orthonormal"};
  const Eigen::RowVector4d bottom = matrix.row(3);
  if ((bottom - Eigen::RowVector4d{0.0, 0.0, 0.0, 1.0}).cwiseAbs().maxCoeff() >
      1e-12)
    throw Error{ErrorCode::kInvalidInput,
                "extrinsic bottom row must be (0, 0, 0, 1)"};
}

CameraExtrinsic CameraExtrinsic::from_rotation_translation(
    const Mat3 &rotation, const Vec3 &translation) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return CameraExtrinsic{m};
}

CameraExtrinsic CameraExtrinsic::look_at(const Vec3 &eye, const Vec3 &target,
                                         const Vec3 &up) {
  // Camera looks down +z with +y pointing down in the image.
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.unitOrthogonal();
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return from_rotation_translation(r, -r * eye);
}

CameraExtrinsic CameraExtrinsic::inverse() const {
  const Mat3 rt = rotation().transpose();
  return from_rotation_translation(rt, -rt * translation());
}

CameraExtrinsic CameraExtrinsic::operator*(const CameraExtrinsic &rhs) const {
  Mat4 m = matrix_ * rhs.matrix_;
  // Re-orthonormalize so long products stay within the type invariant.
  const Eigen::JacobiSVD<Mat3> svd{m.topLeftCorner<3, 3>(),
                                   Eigen::ComputeFullU | Eigen::ComputeFullV};
  m.topLeftCorner<3, 3>() = svd.matrixU() * svd.matrixV().transpose();
  m.row(3) << 0.0, 0.0, 0.0, 1.0;
  return CameraExtrinsic{m};
}

Vec3 CameraExtrinsic::apply(const Vec3 &point) const {
  return rotation() * point + translation();
}

Mat3 quat_to_matrix(const Quaternion &raw) {
  const Quaternion q = raw.normalized();
  const double ww = q.w * q.w, xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  Mat3 r;
  r << ww + xx - yy - zz, 2.0 * (xy - wz), 2.0 * (xz + wy),  //
      2.0 * (xy + wz), ww - xx + yy - zz, 2.0 * (yz - wx),   //
      2.0 * (xz - wy), 2.0 * (yz + wx), ww - xx - yy + zz;
  return r;
}

Vec2 project_center(const Vec3 &t, const CameraIntrinsics &k) {
  if (!(t.z() > 0.0))
    throw Error{ErrorCode::kBehindCamera,
                "cannot project a point with Tz <= 0"};
  return {k.fx * t.x() / t.z() + k.px, k.fy * t.y() / t.z() + k.py};
}

Vec3 recover_translation(const Vec2 &c, const Vec2 &delta_c, double tz,
                         const CameraIntrinsics &k) {
  if (!(tz > 0.0))
    throw Error{ErrorCode::kInvalidDepth, "recovered depth must be positive"};
  return {(c.x() + delta_c.x() - k.px) * tz / k.fx,
          (c.y() + delta_c.y() - k.py) * tz / k.fy, tz};
}

CameraExtrinsic relative_transform(const CameraExtrinsic &prev,
                                   const CameraExtrinsic &curr) {
  return curr * prev.inverse();
}

double rotation_angle_between(const Quaternion &q1, const Quaternion &q2) {
  const double d = std::abs(q1.normalized().dot(q2.normalized()));
  return 2.0 * std::acos(std::min(1.0, d));
}

double deg_from_rad(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace vp
