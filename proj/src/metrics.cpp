#include "videopose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "videopose/error.hpp"

namespace vp {

namespace {

std::vector<Vec3> transformed(const std::vector<Vec3> &points, const Pose &pose) {
  const Mat3 r = pose.rotation_matrix();
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto &p : points) out.push_back(r * p + pose.translation);
  return out;
}

void require_points(const ObjectModel &model) {
  if (model.points.empty())
    throw Error{ErrorCode::kInvalidInput, "object model has no points"};
}

// Pairwise summation: equal terms over power-of-two counts sum exactly.
double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 2) return v.empty() ? 0.0 : v.size() == 1 ? v[0] : v[0] + v[1];
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace

double add_metric(const ObjectModel &model, const Pose &gt, const Pose &pred) {
  require_points(model);
  const auto a = transformed(model.points, pred);
  const auto b = transformed(model.points, gt);
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = (a[i] - b[i]).norm();
  return pairwise_sum(d) / static_cast<double>(a.size());
}

double add_s_metric(const ObjectModel &model, const Pose &gt, const Pose &pred) {
  require_points(model);
  const auto a = transformed(model.points, pred);
  const auto b = transformed(model.points, gt);
  std::vector<double> d;
  d.reserve(a.size());
  for (const auto &p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto &q : b) best = std::min(best, (p - q).squaredNorm());
    d.push_back(std::sqrt(best));
  }
  return pairwise_sum(d) / static_cast<double>(a.size());
}

PoseError compute_pose_error(const ObjectModel &model, const Pose &gt,
                             const Pose &pred) {
  PoseError e;
  e.add = add_metric(model, gt, pred);
  e.add_s = std::min(add_s_metric(model, gt, pred), e.add);
  e.rotation_error = rotation_angle_between(gt.rotation, pred.rotation);
  e.translation_error = (gt.translation - pred.translation).norm();
  return e;
}

AccuracyCurve accuracy_curve(const std::vector<double> &errors,
                             double max_threshold, int steps) {
  if (errors.empty())
    throw Error{ErrorCode::kInvalidArgument, "accuracy curve needs at least one error"};
  if (!(max_threshold > 0.0) || steps < 2)
    throw Error{ErrorCode::kInvalidArgument,
                "accuracy curve needs max_threshold > 0 and steps >= 2"};
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  AccuracyCurve curve;
  curve.thresholds.resize(steps);
  curve.accuracy.resize(steps);
  const double n = static_cast<double>(sorted.size());
  double area = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double t = max_threshold * (static_cast<double>(i) + 0.5) / steps;
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    curve.thresholds[i] = t;
    curve.accuracy[i] = static_cast<double>(below) / n;
    area += curve.accuracy[i];
  }
  curve.auc = area / steps;
  return curve;
}

DatasetEvaluation evaluate_dataset(const std::vector<PredictionRecord> &predictions,
                                   const ObjectRegistry &registry,
                                   const EvalOptions &options) {
  DatasetEvaluation out;
  out.errors.reserve(predictions.size());
  std::vector<std::vector<double>> add(registry.size()), adds(registry.size());
  std::vector<double> all_add, all_adds;
  for (const auto &p : predictions) {
    const auto idx = registry.index_of(p.object_id);
    if (!idx)
      throw Error{ErrorCode::kInvalidArgument,
                  "prediction for unknown object '" + p.object_id + "'"};
    const ObjectModel &model = registry.at(*idx);
    const PoseError e = compute_pose_error(model, p.gt, p.pred);
    out.errors.push_back(e);
    const double add_value =
        options.symmetric_adds_for_add && model.symmetric ? e.add_s : e.add;
    add[*idx].push_back(add_value);
    adds[*idx].push_back(e.add_s);
    all_add.push_back(add_value);
    all_adds.push_back(e.add_s);
  }
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (add[i].empty()) continue;
    out.rows.push_back({registry.at(i).id, add[i].size(),
                        accuracy_curve(add[i], options.max_threshold, options.steps).auc,
                        accuracy_curve(adds[i], options.max_threshold, options.steps).auc});
  }
  if (!all_add.empty())
    out.rows.push_back({"ALL", all_add.size(),
                        accuracy_curve(all_add, options.max_threshold, options.steps).auc,
                        accuracy_curve(all_adds, options.max_threshold, options.steps).auc});
  return out;
}

}  // namespace vp
