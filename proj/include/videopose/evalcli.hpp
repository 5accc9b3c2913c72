#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "videopose/data.hpp"
#include "videopose/metrics.hpp"
#include "videopose/network.hpp"
#include "videopose/training.hpp"

namespace vp {

// Percentages, registry order, ALL last.
struct ReportRow {
  std::string id;
  std::size_t count = 0;
  double add_auc = 0.0;
  double adds_auc = 0.0;
  std::optional<double> add_delta;  // against a reference report, points
  std::optional<double> adds_delta;
};

struct ReportTable {
  std::vector<ReportRow> rows;
  std::string checkpoint_id;
  std::string dataset_id;
  std::string box_source;  // "gt", "gt dilated xF" or "file:<name>"
};

ReportTable make_report(const std::vector<PredictionRecord> &predictions,
                        const ObjectRegistry &registry, const EvalOptions &options = {});
// Fills the delta fields row by row (matched on id).
void attach_deltas(ReportTable &table, const ReportTable &reference);
std::string report_json(const ReportTable &table);
std::string report_text(const ReportTable &table);

// Prediction interchange file, CSV with a header:
// frame_id,object_id,qw,qx,qy,qz,tx,ty,tz,gt_qw,gt_qx,gt_qy,gt_qz,gt_tx,gt_ty,gt_tz
void write_predictions(const std::filesystem::path &path, const std::vector<PredictionRecord> &records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path &path);

// Box file, CSV with a header: frame_id,object_id,x0,y0,x1,y1
using BoxTable = std::map<std::string, std::map<std::string, BBox>>;  // frame id -> object id
void write_boxes(const std::filesystem::path &path, const BoxTable &boxes);
// Throws kLoad for malformed rows and for object ids outside the registry.
BoxTable read_boxes(const std::filesystem::path &path, const ObjectRegistry &registry);
BoxProvider file_boxes(const BoxTable &boxes, const std::string &video_id);
// Ground-truth boxes scaled about their centres, clipped to the image.
BoxProvider dilated_gt_boxes(double factor);

// A trained network or the ground-truth echo oracle.
class Predictor {
 public:
  Predictor(Checkpoint checkpoint, const ObjectRegistry &registry);
  explicit Predictor(VideoPoseNet net);

  bool is_echo() const { return !net_; }
  const VideoPoseNet &net() const { return *net_; }
  ClipPrediction predict(const VideoClip &clip, const BoxProvider &boxes = ground_truth_boxes()) const;

 private:
  std::optional<VideoPoseNet> net_;
};

struct EvalRequest {
  std::string checkpoint_id;
  std::optional<std::filesystem::path> boxes_file;
  double dilate = 1.0;
  bool val_only = false;  // restrict to the trailing validation videos
  double val_fraction = 0.2;
  int clip_length = 10;
  int stride = 2;
};

struct EvalOutput {
  std::vector<PredictionRecord> records;
  std::vector<Quaternion> raw_quats;
  ReportTable report;
};

EvalOutput run_eval(const Predictor &predictor, const Dataset &dataset, const EvalRequest &request);

enum class CurveKind { kAdd, kAddS, kRotation, kTranslation };
CurveKind curve_kind_from_string(const std::string &s);  // kUsage when unknown
const char *to_string(CurveKind kind);

struct CurveSet {
  CurveKind kind = CurveKind::kAddS;
  double max_threshold = 0.0;
  std::string unit;
  std::vector<std::pair<std::string, AccuracyCurve>> curves;  // objects, then ALL
};

CurveSet compute_curves(const std::vector<PredictionRecord> &records, const ObjectRegistry &registry,
                        CurveKind kind, int steps = kDefaultCurveSteps);
std::string curves_json(const CurveSet &curves);
void plot_curves(const CurveSet &curves, const std::filesystem::path &png);

struct BenchResult {
  std::string variant;
  int frames = 0;
  int warmup = 0;
  int timed_frames = 0;
  double wall_seconds = 0.0;
  double fps = 0.0;
};

// Streams frames through the network one at a time (encode to pose
// regression, memory carried across frames) and times all but the warmup.
BenchResult run_bench(const VideoPoseNet &net, const Dataset &dataset, int frames, int warmup = 10);
std::string bench_json(const BenchResult &result, bool include_timing = true);

struct KeyframeRow {
  int position = 0;
  std::size_t count = 0;
  double add_auc = 0.0;   // percent
  double adds_auc = 0.0;  // percent
  std::vector<PredictionRecord> records;
};

inline const std::vector<int> kDefaultKeyframePositions{2, 5, 10, 15, 19};

// Scores only the prediction at clip index p of each full-length eval clip.
std::vector<KeyframeRow> run_keyframe_study(const Predictor &predictor, const Dataset &dataset,
                                            const std::vector<int> &positions = kDefaultKeyframePositions,
                                            int clip_length = 20, int stride = 2);
std::string keyframe_json(const std::vector<KeyframeRow> &rows);

std::vector<Vec2> project_points(const ObjectModel &model, const Pose &pose, const CameraIntrinsics &k);

// One overlay per requested frame: gt points in green, predictions in red,
// gt boxes in yellow. Returns the written paths.
std::vector<std::filesystem::path> render_overlays(const Predictor &predictor, const Dataset &dataset,
                                                   std::size_t video, const std::vector<int> &frames,
                                                   const std::filesystem::path &out_dir, int scale = 4);

}  // namespace vp
