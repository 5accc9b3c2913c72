#include "videopose/evalcli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "videopose/error.hpp"

namespace vp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in{line};
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string &s, const fs::path &path, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument{s};
    return v;
  } catch (const std::exception &) {
    throw Error{ErrorCode::kLoad, path.string() + ":" + std::to_string(line) + ": bad number '" + s + "'"};
  }
}

std::ifstream open_csv(const fs::path &path, const std::string &header) {
  std::ifstream in{path};
  if (!in) throw Error{ErrorCode::kLoad, "cannot open " + path.string()};
  std::string first;
  std::getline(in, first);
  if (!first.empty() && first.back() == '\r') first.pop_back();
  if (first != header) throw Error{ErrorCode::kLoad, path.string() + ": unexpected header"};
  return in;
}

const std::string kPredHeader =
    "frame_id,object_id,qw,qx,qy,qz,tx,ty,tz,gt_qw,gt_qx,gt_qy,gt_qz,gt_tx,gt_ty,gt_tz";
const std::string kBoxHeader = "frame_id,object_id,x0,y0,x1,y1";

double pct(double fraction) { return 100.0 * fraction; }

}  // namespace

ReportTable make_report(const std::vector<PredictionRecord> &predictions, const ObjectRegistry &registry,
                        const EvalOptions &options) {
  ReportTable t;
  if (predictions.empty()) return t;
  for (const auto &r : evaluate_dataset(predictions, registry, options).rows)
    t.rows.push_back({r.id, r.count, pct(r.add_auc), pct(r.adds_auc), std::nullopt, std::nullopt});
  return t;
}

void attach_deltas(ReportTable &table, const ReportTable &reference) {
  for (auto &row : table.rows)
    for (const auto &ref : reference.rows)
      if (ref.id == row.id) {
        row.add_delta = row.add_auc - ref.add_auc;
        row.adds_delta = row.adds_auc - ref.adds_auc;
      }
}

std::string report_json(const ReportTable &t) {
  json rows = json::array();
  for (const auto &r : t.rows) {
    json j = {{"id", r.id}, {"count", r.count}, {"add_auc", r.add_auc}, {"adds_auc", r.adds_auc}};
    if (r.add_delta) j["add_delta"] = *r.add_delta;
    if (r.adds_delta) j["adds_delta"] = *r.adds_delta;
    rows.push_back(j);
  }
  return json{{"checkpoint", t.checkpoint_id}, {"dataset", t.dataset_id}, {"box_source", t.box_source},
              {"rows", rows}}
      .dump(2);
}

std::string report_text(const ReportTable &t) {
  std::ostringstream out;
  out << "checkpoint " << t.checkpoint_id << "  dataset " << t.dataset_id << "  boxes " << t.box_source
      << "\n";
  const bool deltas = !t.rows.empty() && t.rows.front().add_delta.has_value();
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %7s %9s %9s", "object", "count", "ADD", "ADD-S");
  out << line << (deltas ? "   dADD  dADD-S" : "") << "\n";
  for (const auto &r : t.rows) {
    std::snprintf(line, sizeof line, "%-16s %7zu %9.2f %9.2f", r.id.c_str(), r.count, r.add_auc, r.adds_auc);
    out << line;
    if (r.add_delta) {
      std::snprintf(line, sizeof line, " %+6.2f %+7.2f", *r.add_delta, *r.adds_delta);
      out << line;
    }
    out << "\n";
  }
  return out.str();
}

void write_predictions(const fs::path &path, const std::vector<PredictionRecord> &records) {
  std::ofstream out{path};
  if (!out) throw Error{ErrorCode::kLoad, "cannot write " + path.string()};
  out << kPredHeader << "\n";
  for (const auto &r : records) {
    out << r.frame_id << ',' << r.object_id;
    for (const Pose *p : {&r.pred, &r.gt}) {
      const Quaternion &q = p->rotation;
      for (double v : {q.w, q.x, q.y, q.z, p->translation.x(), p->translation.y(), p->translation.z()})
        out << ',' << fmt17(v);
    }
    out << "\n";
  }
}

std::vector<PredictionRecord> read_predictions(const fs::path &path) {
  std::ifstream in = open_csv(path, kPredHeader);
  std::vector<PredictionRecord> out;
  int n = 1;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 16)
      throw Error{ErrorCode::kLoad, path.string() + ":" + std::to_string(n) + ": expected 16 fields"};
    double v[14];
    for (int i = 0; i < 14; ++i) v[i] = parse_number(cells[static_cast<std::size_t>(i) + 2], path, n);
    PredictionRecord r;
    r.frame_id = cells[0];
    r.object_id = cells[1];
    r.pred.rotation = {v[0], v[1], v[2], v[3]};
    r.pred.translation = {v[4], v[5], v[6]};
    r.gt.rotation = {v[7], v[8], v[9], v[10]};
    r.gt.translation = {v[11], v[12], v[13]};
    out.push_back(r);
  }
  return out;
}

void write_boxes(const fs::path &path, const BoxTable &boxes) {
  std::ofstream out{path};
  if (!out) throw Error{ErrorCode::kLoad, "cannot write " + path.string()};
  out << kBoxHeader << "\n";
  for (const auto &[frame, objs] : boxes)
    for (const auto &[id, b] : objs)
      out << frame << ',' << id << ',' << fmt17(b.x0) << ',' << fmt17(b.y0) << ',' << fmt17(b.x1) << ','
          << fmt17(b.y1) << "\n";
}

BoxTable read_boxes(const fs::path &path, const ObjectRegistry &registry) {
  std::ifstream in = open_csv(path, kBoxHeader);
  BoxTable out;
  int n = 1;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(n) + ": ";
    if (cells.size() != 6) throw Error{ErrorCode::kLoad, where + "expected 6 fields"};
    if (!registry.contains(cells[1]))
      throw Error{ErrorCode::kLoad, where + "unknown object '" + cells[1] + "'"};
    out[cells[0]][cells[1]] = BBox{parse_number(cells[2], path, n), parse_number(cells[3], path, n),
                                   parse_number(cells[4], path, n), parse_number(cells[5], path, n)};
  }
  return out;
}

BoxProvider file_boxes(const BoxTable &boxes, const std::string &video_id) {
  return [&boxes, video_id](std::size_t, const FrameRecord &frame,
                            const std::string &id) -> std::optional<BBox> {
    const auto f = boxes.find(video_id + "/" + std::to_string(frame.index));
    if (f == boxes.end()) return std::nullopt;
    const auto o = f->second.find(id);
    if (o == f->second.end()) return std::nullopt;
    return o->second;
  };
}

BoxProvider dilated_gt_boxes(double factor) {
  return [factor](std::size_t, const FrameRecord &frame, const std::string &id) -> std::optional<BBox> {
    const ObjectAnnotation *a = frame.find(id);
    if (!a || a->absent) return std::nullopt;
    return scale_bbox(a->bbox, factor, factor, frame.width(), frame.height());
  };
}

Predictor::Predictor(Checkpoint checkpoint, const ObjectRegistry &registry) {
  check_registry(checkpoint, registry);
  if (checkpoint.kind == "network") net_.emplace(network_from_checkpoint(checkpoint, registry));
}

Predictor::Predictor(VideoPoseNet net) : net_{std::move(net)} {}

ClipPrediction Predictor::predict(const VideoClip &clip, const BoxProvider &boxes) const {
  return net_ ? predict_clip(*net_, clip, boxes) : echo_clip(clip, boxes);
}

EvalOutput run_eval(const Predictor &predictor, const Dataset &dataset, const EvalRequest &req) {
  if (!(req.dilate > 0.0)) throw Error{ErrorCode::kInvalidArgument, "dilation factor must be positive"};
  std::optional<BoxTable> table;
  if (req.boxes_file) table = read_boxes(*req.boxes_file, dataset.registry());

  std::vector<std::size_t> videos;
  if (req.val_only)
    videos = split_videos(dataset.videos().size(), req.val_fraction).val;
  else
    for (std::size_t v = 0; v < dataset.videos().size(); ++v) videos.push_back(v);

  EvalOutput out;
  for (std::size_t v : videos) {
    const std::string &vid = dataset.videos()[v].id;
    BoxProvider boxes = table ? file_boxes(*table, vid)
                        : req.dilate != 1.0 ? dilated_gt_boxes(req.dilate)
                                            : ground_truth_boxes();
    for (const auto &clip : make_eval_clips(dataset, v, req.clip_length, req.stride)) {
      ClipPrediction p = predictor.predict(clip, boxes);
      out.records.insert(out.records.end(), p.records.begin(), p.records.end());
      out.raw_quats.insert(out.raw_quats.end(), p.raw_quats.begin(), p.raw_quats.end());
    }
  }
  if (out.records.empty()) throw Error{ErrorCode::kLoad, "no object instances to evaluate"};
  out.report = make_report(out.records, dataset.registry());
  out.report.checkpoint_id = req.checkpoint_id;
  out.report.dataset_id = dataset.id();
  if (req.boxes_file)
    out.report.box_source = "file:" + req.boxes_file->filename().string();
  else if (req.dilate != 1.0)
    out.report.box_source = "gt dilated x" + fmt17(req.dilate);
  else
    out.report.box_source = "gt";
  return out;
}

CurveKind curve_kind_from_string(const std::string &s) {
  if (s == "add") return CurveKind::kAdd;
  if (s == "add_s" || s == "adds") return CurveKind::kAddS;
  if (s == "rotation") return CurveKind::kRotation;
  if (s == "translation") return CurveKind::kTranslation;
  throw Error{ErrorCode::kUsage, "unknown curve kind '" + s + "' (add, add_s, rotation, translation)"};
}

const char *to_string(CurveKind k) {
  switch (k) {
    case CurveKind::kAdd: return "add";
    case CurveKind::kAddS: return "add_s";
    case CurveKind::kRotation: return "rotation";
    case CurveKind::kTranslation: return "translation";
  }
  return "?";
}

CurveSet compute_curves(const std::vector<PredictionRecord> &records, const ObjectRegistry &registry,
                        CurveKind kind, int steps) {
  if (records.empty()) throw Error{ErrorCode::kLoad, "no predictions to plot"};
  CurveSet set;
  set.kind = kind;
  set.max_threshold = kind == CurveKind::kRotation ? kDefaultRotationCap : kDefaultTranslationCap;
  set.unit = kind == CurveKind::kRotation ? "rad" : "m";
  std::vector<std::vector<double>> per(registry.size());
  std::vector<double> all;
  for (const auto &r : records) {
    const auto idx = registry.index_of(r.object_id);
    if (!idx) throw Error{ErrorCode::kLoad, "prediction for unknown object '" + r.object_id + "'"};
    const PoseError e = compute_pose_error(registry.at(*idx), r.gt, r.pred);
    const double v = kind == CurveKind::kAdd        ? e.add
                     : kind == CurveKind::kAddS     ? e.add_s
                     : kind == CurveKind::kRotation ? e.rotation_error
                                                    : e.translation_error;
    per[*idx].push_back(v);
    all.push_back(v);
  }
  for (std::size_t i = 0; i < registry.size(); ++i)
    if (!per[i].empty())
      set.curves.emplace_back(registry.at(i).id, accuracy_curve(per[i], set.max_threshold, steps));
  set.curves.emplace_back("ALL", accuracy_curve(all, set.max_threshold, steps));
  return set;
}

std::string curves_json(const CurveSet &set) {
  json curves = json::array();
  for (const auto &[id, c] : set.curves)
    curves.push_back({{"id", id}, {"auc", c.auc}, {"thresholds", c.thresholds}, {"accuracy", c.accuracy}});
  return json{{"kind", to_string(set.kind)},
              {"unit", set.unit},
              {"max_threshold", set.max_threshold},
              {"curves", curves}}
      .dump();
}

void plot_curves(const CurveSet &set, const fs::path &png) {
  const int w = 720, h = 480, left = 70, right = 200, top = 30, bottom = 60;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  const int pw = w - left - right, ph = h - top - bottom;
  auto to_px = [&](double t, double a) {
    return cv::Point(left + static_cast<int>(std::lround(t / set.max_threshold * pw)),
                     top + static_cast<int>(std::lround((1.0 - a) * ph)));
  };
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, cv::Scalar(0, 0, 0), 1);
  for (int i = 0; i <= 4; ++i) {
    const double a = i / 4.0, t = set.max_threshold * i / 4.0;
    cv::line(img, to_px(0, a), to_px(set.max_threshold, a), cv::Scalar(220, 220, 220), 1);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", a);
    cv::putText(img, buf, to_px(0, a) + cv::Point(-45, 5), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
    std::snprintf(buf, sizeof buf, "%.3g", t);
    cv::putText(img, buf, to_px(t, 0) + cv::Point(-12, 18), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
  }
  const std::string xlabel = std::string{to_string(set.kind)} + " threshold (" + set.unit + ")";
  cv::putText(img, xlabel, {left + pw / 2 - 80, h - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0));
  cv::putText(img, "accuracy", {5, top - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0));
  const cv::Scalar palette[] = {{200, 80, 30}, {40, 160, 40}, {30, 30, 220}, {160, 40, 160},
                                {20, 150, 200}, {120, 120, 0}, {90, 90, 90}};
  for (std::size_t i = 0; i < set.curves.size(); ++i) {
    const auto &[id, c] = set.curves[i];
    const bool pooled = i + 1 == set.curves.size();
    const cv::Scalar col = pooled ? cv::Scalar(0, 0, 0) : palette[i % 7];
    std::vector<cv::Point> pts{to_px(0, c.accuracy.empty() ? 0.0 : c.accuracy.front())};
    for (std::size_t k = 0; k < c.thresholds.size(); ++k) pts.push_back(to_px(c.thresholds[k], c.accuracy[k]));
    cv::polylines(img, pts, false, col, pooled ? 2 : 1, cv::LINE_AA);
    char buf[80];
    std::snprintf(buf, sizeof buf, "%s AUC %.2f", id.c_str(), c.auc);
    const cv::Point at{left + pw + 12, top + 20 + 22 * static_cast<int>(i)};
    cv::line(img, at + cv::Point(0, -4), at + cv::Point(18, -4), col, 2);
    cv::putText(img, buf, at + cv::Point(24, 0), cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
  }
  if (!png.parent_path().empty()) fs::create_directories(png.parent_path());
  if (!cv::imwrite(png.string(), img)) throw Error{ErrorCode::kLoad, "cannot write " + png.string()};
}

BenchResult run_bench(const VideoPoseNet &net, const Dataset &dataset, int frames, int warmup) {
  if (frames < 100) throw Error{ErrorCode::kInvalidArgument, "bench needs at least 100 frames"};
  if (warmup < 0 || warmup >= frames) throw Error{ErrorCode::kInvalidArgument, "warmup must lie in [0, frames)"};
  if (dataset.videos().empty()) throw Error{ErrorCode::kLoad, "dataset has no videos"};
  // Decode everything up front so that disk access stays out of the timing.
  std::vector<const FrameRecord *> seq;
  std::vector<bool> starts;
  for (std::size_t v = 0; static_cast<int>(seq.size()) < frames; v = (v + 1) % dataset.videos().size())
    for (int f = 0; f < dataset.videos()[v].frame_count && static_cast<int>(seq.size()) < frames; ++f) {
      seq.push_back(&dataset.frame(v, f));
      starts.push_back(f == 0);
    }

  const BoxProvider boxes = ground_truth_boxes();
  TemporalStates states = net.initial_states();
  Tape tape;
  std::size_t pos = 0;
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < frames; ++i) {
    if (i == warmup) t0 = std::chrono::steady_clock::now();
    if (starts[static_cast<std::size_t>(i)]) {
      states = net.initial_states();
      pos = 0;
    }
    std::map<std::string, Tensor> memories;
    for (const auto &[id, s] : states)
      if (s.valid) memories[id] = s.memory->value;
    tape.clear_keep_parameters();
    for (auto &[id, m] : memories) states[id].memory = tape.constant(std::move(m));
    const FramePrediction fp = net.forward_frame(tape, *seq[static_cast<std::size_t>(i)], pos++, boxes, states);
    (void)fp;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  BenchResult r;
  r.variant = to_string(net.config().variant);
  r.frames = frames;
  r.warmup = warmup;
  r.timed_frames = frames - warmup;
  r.wall_seconds = wall;
  r.fps = wall > 0.0 ? r.timed_frames / wall : 0.0;
  return r;
}

std::string bench_json(const BenchResult &r, bool include_timing) {
  json j = {{"variant", r.variant}, {"frames", r.frames}, {"warmup", r.warmup}, {"timed_frames", r.timed_frames}};
  if (include_timing) {
    j["wall_seconds"] = r.wall_seconds;
    j["fps"] = r.fps;
  }
  return j.dump(2);
}

std::vector<KeyframeRow> run_keyframe_study(const Predictor &predictor, const Dataset &dataset,
                                            const std::vector<int> &positions, int clip_length, int stride) {
  if (positions.empty()) throw Error{ErrorCode::kInvalidArgument, "no keyframe positions given"};
  for (int p : positions)
    if (p < 0 || p >= clip_length)
      throw Error{ErrorCode::kInvalidArgument, "keyframe position " + std::to_string(p) +
                                                   " outside a clip of " + std::to_string(clip_length)};
  std::vector<KeyframeRow> rows(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) rows[i].position = positions[i];
  bool any = false;
  for (std::size_t v = 0; v < dataset.videos().size(); ++v)
    for (const auto &clip : make_eval_clips(dataset, v, clip_length, stride)) {
      if (static_cast<int>(clip.frames.size()) != clip_length) continue;
      any = true;
      const ClipPrediction p = predictor.predict(clip);
      for (std::size_t k = 0; k < p.records.size(); ++k)
        for (auto &row : rows)
          if (p.positions[k] == row.position) row.records.push_back(p.records[k]);
    }
  if (!any)
    throw Error{ErrorCode::kLoad, "no video yields a " + std::to_string(clip_length) + "-frame clip"};
  for (auto &row : rows) {
    if (row.records.empty()) continue;
    const ReportTable t = make_report(row.records, dataset.registry());
    row.count = t.rows.back().count;
    row.add_auc = t.rows.back().add_auc;
    row.adds_auc = t.rows.back().adds_auc;
  }
  return rows;
}

std::string keyframe_json(const std::vector<KeyframeRow> &rows) {
  json out = json::array();
  for (const auto &r : rows)
    out.push_back({{"position", r.position}, {"count", r.count}, {"add_auc", r.add_auc}, {"adds_auc", r.adds_auc}});
  return json{{"positions", out}}.dump(2);
}

std::vector<Vec2> project_points(const ObjectModel &model, const Pose &pose, const CameraIntrinsics &k) {
  std::vector<Vec2> out;
  out.reserve(model.points.size());
  for (const auto &p : model.points) {
    const Vec3 c = pose.transform(p);
    if (c.z() > 0.0) out.push_back(project_center(c, k));
  }
  return out;
}

std::vector<fs::path> render_overlays(const Predictor &predictor, const Dataset &dataset, std::size_t video,
                                      const std::vector<int> &frames, const fs::path &out_dir, int scale) {
  if (frames.empty()) throw Error{ErrorCode::kInvalidArgument, "no frames requested"};
  if (video >= dataset.videos().size()) throw Error{ErrorCode::kInvalidArgument, "video index out of range"};
  const VideoClip clip = dataset.clip(video, frames, 1);
  const ClipPrediction pred = predictor.predict(clip);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    const FrameRecord &f = clip.frames[t];
    cv::Mat img(f.height(), f.width(), CV_8UC3);
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x)
        for (int c = 0; c < 3; ++c)
          img.at<cv::Vec3b>(y, x)[2 - c] =
              static_cast<unsigned char>(std::lround(std::clamp(f.rgb.at(y, x, c), 0.0f, 1.0f) * 255.0f));
    cv::resize(img, img, {f.width() * scale, f.height() * scale}, 0, 0, cv::INTER_NEAREST);
    auto px = [&](const Vec2 &p) {
      return cv::Point(static_cast<int>(std::lround(p.x() * scale)), static_cast<int>(std::lround(p.y() * scale)));
    };
    for (const auto &o : f.objects) {
      if (o.absent) continue;
      cv::rectangle(img, px({o.bbox.x0, o.bbox.y0}), px({o.bbox.x1, o.bbox.y1}), cv::Scalar(0, 220, 220), 1);
      for (const auto &p : project_points(dataset.registry().by_id(o.id), o.pose, f.intrinsics))
        cv::circle(img, px(p), 1, cv::Scalar(0, 200, 0), cv::FILLED);
    }
    for (std::size_t k = 0; k < pred.records.size(); ++k) {
      if (pred.positions[k] != static_cast<int>(t)) continue;
      const auto &r = pred.records[k];
      for (const auto &p : project_points(dataset.registry().by_id(r.object_id), r.pred, f.intrinsics))
        cv::circle(img, px(p), 1, cv::Scalar(0, 0, 230), cv::FILLED);
    }
    char name[64];
    std::snprintf(name, sizeof name, "%s_%06d.png", clip.video_id.c_str(), f.index);
    const fs::path path = out_dir / name;
    if (!cv::imwrite(path.string(), img)) throw Error{ErrorCode::kLoad, "cannot write " + path.string()};
    written.push_back(path);
  }
  return written;
}

}  // namespace vp
