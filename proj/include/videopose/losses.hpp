#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "videopose/geometry.hpp"
#include "videopose/objects.hpp"

namespace vp {

using QuatGrad = std::array<double, 4>;  // d/d(w, x, y, z)

struct PoseLossResult {
  double value = 0.0;
  QuatGrad d_quat{};               // w.r.t. the raw predicted quaternion
  Vec3 d_translation = Vec3::Zero();  // w.r.t. the predicted translation
};

// Mean squared point distance between the model under the predicted and
// ground-truth poses. The symmetric variant matches every predicted point to
// its nearest ground-truth point. The raw quaternion is normalized first.
PoseLossResult pose_loss(const ObjectModel &model, const Quaternion &q_pred,
                         const Vec3 &t_pred, const Quaternion &q_gt,
                         const Vec3 &t_gt, bool symmetric);

struct QuatLossResult {
  double value = 0.0;
  QuatGrad grad{};
};

// |1 - ||q||| ; the subgradient at q = 0 and on the unit sphere is zero.
QuatLossResult quat_reg_loss(const Quaternion &q_pred);
// 1 - <q_pred, q_gt>, or 1 - |<q_pred, q_gt>| with double_cover_abs.
QuatLossResult quat_inner_prod_loss(const Quaternion &q_pred,
                                    const Quaternion &q_gt,
                                    bool double_cover_abs = false);

struct DenseLossResult {
  double value = 0.0;
  std::vector<double> grad;  // same layout as the prediction
};

// Masked mean absolute error over cells where valid[i] != 0.
DenseLossResult depth_loss(std::span<const double> pred,
                           std::span<const double> gt,
                           std::span<const std::uint8_t> valid);

// Mean per-pixel softmax cross entropy. Logits are channel-major
// (C planes of `pixels` values each); class 0 is background.
DenseLossResult label_loss(std::span<const double> logits, std::size_t classes,
                           std::span<const std::uint8_t> labels);

struct LossWeights {
  double depth = 1.0;
  double label = 1.0;
  double pose = 1.0;
  double reg = 1.0;
  double inner_prod = 1.0;
};

struct LossBreakdown {
  double depth = 0.0;
  double label = 0.0;
  double pose = 0.0;
  double reg = 0.0;
  double inner_prod = 0.0;
  double total = 0.0;
  LossWeights weights;

  LossBreakdown &operator+=(const LossBreakdown &other);
  LossBreakdown scaled(double s) const;
};

LossBreakdown total_loss(double depth, double label, double pose, double reg,
                         double inner_prod, const LossWeights &weights = {});

}  // namespace vp
