#pragma once

#include <numbers>
#include <string>
#include <vector>

#include "videopose/geometry.hpp"
#include "videopose/objects.hpp"

namespace vp {

struct PoseError {
  double add = 0.0;                // meters
  double add_s = 0.0;              // meters
  double rotation_error = 0.0;     // radians
  double translation_error = 0.0;  // meters
};

struct AccuracyCurve {
  std::vector<double> thresholds;  // ascending
  std::vector<double> accuracy;    // fraction of errors below each threshold
  double auc = 0.0;                // in [0, 1]
};

inline constexpr double kDefaultTranslationCap = 0.10;  // meters
inline constexpr double kDefaultRotationCap = std::numbers::pi / 2.0;
inline constexpr int kDefaultCurveSteps = 1000;

// Mean of unsquared distances between corresponding model points.
double add_metric(const ObjectModel &model, const Pose &gt, const Pose &pred);
// Mean distance from each predicted point to its nearest ground-truth point.
double add_s_metric(const ObjectModel &model, const Pose &gt, const Pose &pred);
PoseError compute_pose_error(const ObjectModel &model, const Pose &gt,
                             const Pose &pred);

// Thresholds sit at the centres of `steps` equal bins over [0, max_threshold];
// the AUC is the mean accuracy, i.e. the normalized area under the step curve.
AccuracyCurve accuracy_curve(const std::vector<double> &errors,
                             double max_threshold, int steps = kDefaultCurveSteps);

struct PredictionRecord {
  std::string frame_id;  // "<video>/<frame index>"
  std::string object_id;
  Pose gt;
  Pose pred;
};

struct EvalRow {
  std::string id;  // object id, or "ALL"
  std::size_t count = 0;
  double add_auc = 0.0;   // fraction
  double adds_auc = 0.0;  // fraction
};

struct EvalOptions {
  double max_threshold = kDefaultTranslationCap;
  int steps = kDefaultCurveSteps;
  // Report ADD-S in the ADD column for symmetric objects.
  bool symmetric_adds_for_add = false;
};

struct DatasetEvaluation {
  std::vector<EvalRow> rows;  // registry order, objects without predictions
                              // skipped, "ALL" last
  std::vector<PoseError> errors;  // aligned with the input predictions
};

DatasetEvaluation evaluate_dataset(const std::vector<PredictionRecord> &predictions,
                                   const ObjectRegistry &registry,
                                   const EvalOptions &options = {});

}  // namespace vp
