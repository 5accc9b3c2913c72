#include "videopose/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "videopose/error.hpp"

namespace vp {

namespace {

// Partial derivatives of quat_to_matrix (homogeneous form) with respect to a
// unit quaternion, contracted with dL/dR.
QuatGrad contract_rotation_grad(const Quaternion &q, const Mat3 &g) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  QuatGrad d{};
  d[0] = 2.0 * (g(0, 0) * w - g(0, 1) * z + g(0, 2) * y + g(1, 0) * z +
                g(1, 1) * w - g(1, 2) * x - g(2, 0) * y + g(2, 1) * x +
                g(2, 2) * w);
  d[1] = 2.0 * (g(0, 0) * x + g(0, 1) * y + g(0, 2) * z + g(1, 0) * y -
                g(1, 1) * x - g(1, 2) * w + g(2, 0) * z + g(2, 1) * w -
                g(2, 2) * x);
  d[2] = 2.0 * (-g(0, 0) * y + g(0, 1) * x + g(0, 2) * w + g(1, 0) * x +
                g(1, 1) * y + g(1, 2) * z - g(2, 0) * w + g(2, 1) * z -
                g(2, 2) * y);
  d[3] = 2.0 * (-g(0, 0) * z - g(0, 1) * w + g(0, 2) * x + g(1, 0) * w -
                g(1, 1) * z + g(1, 2) * y + g(2, 0) * x + g(2, 1) * y +
                g(2, 2) * z);
  return d;
}

// Chain rule through q_hat = q / |q|.
QuatGrad through_normalization(const Quaternion &raw, const QuatGrad &d_hat) {
  const double n = raw.norm();
  const Quaternion u = raw * (1.0 / n);
  const double radial = d_hat[0] * u.w + d_hat[1] * u.x + d_hat[2] * u.y + d_hat[3] * u.z;
  return {(d_hat[0] - radial * u.w) / n, (d_hat[1] - radial * u.x) / n,
          (d_hat[2] - radial * u.y) / n, (d_hat[3] - radial * u.z) / n};
}

}  // namespace

PoseLossResult pose_loss(const ObjectModel &model, const Quaternion &q_pred,
                         const Vec3 &t_pred, const Quaternion &q_gt,
                         const Vec3 &t_gt, bool symmetric) {
  if (model.points.empty())
    throw Error{ErrorCode::kInvalidInput, "pose loss needs a non-empty model"};
  const Quaternion q_hat = q_pred.normalized();
  const Mat3 r_pred = quat_to_matrix(q_hat);
  const Mat3 r_gt = quat_to_matrix(q_gt);
  const auto &pts = model.points;
  const double inv_m = 1.0 / static_cast<double>(pts.size());

  std::vector<Vec3> targets;
  targets.reserve(pts.size());
  for (const auto &x : pts) targets.push_back(r_gt * x + t_gt);

  PoseLossResult out;
  Mat3 d_r = Mat3::Zero();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 p = r_pred * pts[i] + t_pred;
    const Vec3 *target = &targets[i];
    if (symmetric) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto &y : targets) {
        const double d = (p - y).squaredNorm();
        if (d < best) {
          best = d;
          target = &y;
        }
      }
    }
    const Vec3 e = p - *target;
    out.value += e.squaredNorm();
    out.d_translation += 2.0 * e;
    d_r += 2.0 * e * pts[i].transpose();
  }
  out.value *= inv_m;
  out.d_translation *= inv_m;
  d_r *= inv_m;
  out.d_quat = through_normalization(q_pred, contract_rotation_grad(q_hat, d_r));
  return out;
}

QuatLossResult quat_reg_loss(const Quaternion &q) {
  const double n = q.norm();
  QuatLossResult out;
  out.value = std::abs(1.0 - n);
  if (n > 0.0 && n != 1.0) {
    const double s = n > 1.0 ? 1.0 / n : -1.0 / n;
    out.grad = {s * q.w, s * q.x, s * q.y, s * q.z};
  }
  return out;
}

QuatLossResult quat_inner_prod_loss(const Quaternion &q_pred,
                                    const Quaternion &q_gt,
                                    bool double_cover_abs) {
  const double d = q_pred.dot(q_gt);
  QuatLossResult out;
  const double s = double_cover_abs && d < 0.0 ? 1.0 : -1.0;
  out.value = double_cover_abs ? 1.0 - std::abs(d) : 1.0 - d;
  out.grad = {s * q_gt.w, s * q_gt.x, s * q_gt.y, s * q_gt.z};
  return out;
}

DenseLossResult depth_loss(std::span<const double> pred,
                           std::span<const double> gt,
                           std::span<const std::uint8_t> valid) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw Error{ErrorCode::kShape, "depth loss inputs differ in size"};
  const auto count = std::count_if(valid.begin(), valid.end(),
                                   [](std::uint8_t v) { return v != 0; });
  if (count == 0)
    throw Error{ErrorCode::kInvalidArgument, "depth loss mask has no valid cells"};
  DenseLossResult out;
  out.grad.assign(pred.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    const double d = pred[i] - gt[i];
    out.value += std::abs(d);
    out.grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  out.value *= inv;
  return out;
}

DenseLossResult label_loss(std::span<const double> logits, std::size_t classes,
                           std::span<const std::uint8_t> labels) {
  const std::size_t pixels = labels.size();
  if (classes == 0 || logits.size() != classes * pixels)
    throw Error{ErrorCode::kShape, "label loss logits do not match C x pixels"};
  if (pixels == 0)
    throw Error{ErrorCode::kInvalidArgument, "label loss needs at least one pixel"};
  DenseLossResult out;
  out.grad.assign(logits.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    const std::size_t label = labels[p];
    if (label >= classes)
      throw Error{ErrorCode::kInvalidInput,
                  "label " + std::to_string(label) + " out of range for " +
                      std::to_string(classes) + " classes"};
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c)
      peak = std::max(peak, logits[c * pixels + p]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      denom += std::exp(logits[c * pixels + p] - peak);
    const double log_z = peak + std::log(denom);
    out.value += log_z - logits[label * pixels + p];
    for (std::size_t c = 0; c < classes; ++c) {
      const double prob = std::exp(logits[c * pixels + p] - log_z);
      out.grad[c * pixels + p] = (prob - (c == label ? 1.0 : 0.0)) * inv;
    }
  }
  out.value *= inv;
  return out;
}

LossBreakdown &LossBreakdown::operator+=(const LossBreakdown &o) {
  depth += o.depth;
  label += o.label;
  pose += o.pose;
  reg += o.reg;
  inner_prod += o.inner_prod;
  total += o.total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double s) const {
  LossBreakdown b = *this;
  b.depth *= s;
  b.label *= s;
  b.pose *= s;
  b.reg *= s;
  b.inner_prod *= s;
  b.total *= s;
  return b;
}

LossBreakdown total_loss(double depth, double label, double pose, double reg,
                         double inner_prod, const LossWeights &w) {
  LossBreakdown b{depth, label, pose, reg, inner_prod, 0.0, w};
  b.total = w.depth * depth + w.label * label + w.pose * pose + w.reg * reg +
            w.inner_prod * inner_prod;
  return b;
}

}  // namespace vp
