#include "videopose/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "json.hpp"
#include "videopose/error.hpp"

namespace vp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path &path) {
  std::ifstream in{path};
  if (!in) throw Error{ErrorCode::kLoad, "cannot open " + path.string()};
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kLoad, path.string() + ": " + e.what()};
  }
}

void write_json(const fs::path &path, const json &j) {
  std::ofstream out{path};
  if (!out) throw Error{ErrorCode::kLoad, "cannot write " + path.string()};
  out << j.dump(1) << '\n';
}

json intrinsics_json(const CameraIntrinsics &k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"px", k.px}, {"py", k.py}};
}

CameraIntrinsics intrinsics_from(const json &j) {
  CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(),
                     j.at("px").get<double>(), j.at("py").get<double>()};
  k.validate();
  return k;
}

bool same_intrinsics(const CameraIntrinsics &a, const CameraIntrinsics &b) {
  return a.fx == b.fx && a.fy == b.fy && a.px == b.px && a.py == b.py;
}

fs::path video_dir(const fs::path &root, const std::string &id) { return root / "videos" / id; }

cv::Mat read_image(const fs::path &path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw Error{ErrorCode::kLoad, "unreadable image " + path.string()};
  return m;
}

void write_image(const fs::path &path, const cv::Mat &m) {
  if (!cv::imwrite(path.string(), m))
    throw Error{ErrorCode::kLoad, "cannot write image " + path.string()};
}

}  // namespace

std::string frame_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

void write_manifest(const fs::path &root, const DatasetManifest &m) {
  json videos = json::array();
  for (const auto &v : m.videos) videos.push_back({{"id", v.id}, {"frames", v.frame_count}});
  fs::create_directories(root);
  write_json(root / kDatasetManifest, {{"dataset_id", m.dataset_id},
                                       {"image_width", m.image_width},
                                       {"image_height", m.image_height},
                                       {"intrinsics", intrinsics_json(m.intrinsics)},
                                       {"videos", videos}});
}

void write_frame(const fs::path &dir, const FrameRecord &f) {
  fs::create_directories(dir);
  const std::string stem = frame_stem(f.index);
  const int h = f.height(), w = f.width();

  cv::Mat rgb(h, w, CV_8UC3);
  cv::Mat depth(h, w, CV_16UC1);
  cv::Mat labels(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto &px = rgb.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(f.rgb.at(y, x, c)), 0.0, 1.0);
        px[2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0));  // BGR on disk
      }
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      depth.at<std::uint16_t>(y, x) =
          static_cast<std::uint16_t>(std::clamp(std::lround(f.depth[i] / kDepthUnit), 0L, 65535L));
      labels.at<std::uint8_t>(y, x) = f.labels[i];
    }
  write_image(dir / (stem + ".rgb.png"), rgb);
  write_image(dir / (stem + ".depth.png"), depth);
  write_image(dir / (stem + ".label.png"), labels);

  json objects = json::array();
  for (const auto &o : f.objects) {
    const Quaternion &q = o.pose.rotation;
    const Vec3 &t = o.pose.translation;
    objects.push_back({{"id", o.id},
                       {"quaternion", {q.w, q.x, q.y, q.z}},
                       {"translation", {t.x(), t.y(), t.z()}},
                       {"bbox", {o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1}},
                       {"absent", o.absent},
                       {"visible_fraction", o.visible_fraction}});
  }
  json extrinsic = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) extrinsic.push_back(f.extrinsic.matrix()(r, c));
  write_json(dir / (stem + ".meta.json"), {{"frame", f.index},
                                           {"intrinsics", intrinsics_json(f.intrinsics)},
                                           {"extrinsic", extrinsic},
                                           {"objects", objects}});
}

FrameRecord read_frame(const fs::path &dir, int index, const DatasetManifest &manifest,
                       const ObjectRegistry &registry) {
  const std::string stem = frame_stem(index);
  const fs::path meta_path = dir / (stem + ".meta.json");
  const json meta = read_json(meta_path);
  FrameRecord f;
  f.index = index;
  try {
    f.intrinsics = intrinsics_from(meta.at("intrinsics"));
    const auto &e = meta.at("extrinsic");
    if (e.size() != 16) throw Error{ErrorCode::kLoad, "extrinsic must hold 16 values"};
    Mat4 m;
    for (int i = 0; i < 16; ++i) m(i / 4, i % 4) = e[i].get<double>();
    f.extrinsic = CameraExtrinsic{m};
    for (const auto &o : meta.at("objects")) {
      ObjectAnnotation a;
      a.id = o.at("id").get<std::string>();
      if (!registry.contains(a.id))
        throw Error{ErrorCode::kLoad, "unknown object '" + a.id + "'"};
      const auto &q = o.at("quaternion");
      const auto &t = o.at("translation");
      const auto &b = o.at("bbox");
      a.pose.rotation = {q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                         q.at(3).get<double>()};
      a.pose.translation = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
      a.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                b.at(3).get<double>()};
      a.absent = o.value("absent", false);
      a.visible_fraction = o.value("visible_fraction", 1.0);
      f.objects.push_back(std::move(a));
    }
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kLoad, meta_path.string() + ": " + e.what()};
  } catch (const Error &e) {
    throw Error{ErrorCode::kLoad, meta_path.string() + ": " + e.what()};
  }
  if (!same_intrinsics(f.intrinsics, manifest.intrinsics))
    throw Error{ErrorCode::kLoad, meta_path.string() + ": intrinsics differ from the dataset"};

  const cv::Mat rgb = read_image(dir / (stem + ".rgb.png"), cv::IMREAD_COLOR);
  const cv::Mat depth = read_image(dir / (stem + ".depth.png"), cv::IMREAD_ANYDEPTH);
  const cv::Mat labels = read_image(dir / (stem + ".label.png"), cv::IMREAD_GRAYSCALE);
  const int h = manifest.image_height, w = manifest.image_width;
  for (const auto &[m, name] : {std::pair{&rgb, "rgb"}, {&depth, "depth"}, {&labels, "label"}})
    if (m->rows != h || m->cols != w)
      throw Error{ErrorCode::kLoad, (dir / (stem + "." + name + ".png")).string() +
                                        ": image size differs from the dataset"};
  if (depth.type() != CV_16UC1)
    throw Error{ErrorCode::kLoad, (dir / (stem + ".depth.png")).string() + ": expected 16-bit depth"};

  f.rgb = Image{h, w, 3};
  f.depth.resize(static_cast<std::size_t>(h) * w);
  f.labels.resize(f.depth.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto &px = rgb.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) f.rgb.at(y, x, c) = static_cast<float>(px[2 - c]) / 255.0f;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      f.depth[i] = depth.at<std::uint16_t>(y, x) * kDepthUnit;
      f.labels[i] = labels.at<std::uint8_t>(y, x);
    }

  // Every labelled class needs a pose in this frame.
  std::vector<bool> seen(registry.size() + 1, false);
  for (std::uint8_t l : f.labels) {
    if (l > registry.size())
      throw Error{ErrorCode::kLoad, (dir / (stem + ".label.png")).string() + ": label " +
                                        std::to_string(l) + " out of range"};
    seen[l] = true;
  }
  for (std::size_t c = 1; c < seen.size(); ++c)
    if (seen[c] && !f.find(registry.at(c - 1).id))
      throw Error{ErrorCode::kLoad, meta_path.string() + ": missing pose for labelled object '" +
                                        registry.at(c - 1).id + "'"};
  return f;
}

Dataset::Dataset(fs::path root, DatasetManifest manifest, ObjectRegistry registry)
    : root_{std::move(root)}, manifest_{std::move(manifest)}, registry_{std::move(registry)} {
  cache_.resize(manifest_.videos.size());
  for (std::size_t v = 0; v < cache_.size(); ++v)
    cache_[v].resize(static_cast<std::size_t>(manifest_.videos[v].frame_count));
}

std::size_t Dataset::video_index(const std::string &video_id) const {
  for (std::size_t v = 0; v < manifest_.videos.size(); ++v)
    if (manifest_.videos[v].id == video_id) return v;
  throw Error{ErrorCode::kInvalidArgument, "unknown video '" + video_id + "'"};
}

const FrameRecord &Dataset::frame(std::size_t video, int index) const {
  if (video >= cache_.size() || index < 0 ||
      index >= manifest_.videos[video].frame_count)
    throw Error{ErrorCode::kInvalidArgument, "frame " + std::to_string(index) +
                                                 " of video " + std::to_string(video) +
                                                 " out of range"};
  auto &slot = cache_[video][static_cast<std::size_t>(index)];
  if (!slot)
    slot = std::make_shared<FrameRecord>(read_frame(
        video_dir(root_, manifest_.videos[video].id), index, manifest_, registry_));
  return *slot;
}

VideoClip Dataset::clip(std::size_t video, const std::vector<int> &indices, int stride) const {
  VideoClip c;
  c.video_id = manifest_.videos.at(video).id;
  c.stride = stride;
  for (int i : indices) c.frames.push_back(frame(video, i));
  return c;
}

Dataset load_dataset(const fs::path &root) {
  const fs::path manifest_path = root / kDatasetManifest;
  if (!fs::exists(manifest_path))
    throw Error{ErrorCode::kLoad, "no dataset manifest at " + manifest_path.string()};
  const json j = read_json(manifest_path);
  DatasetManifest m;
  try {
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.image_width = j.at("image_width").get<int>();
    m.image_height = j.at("image_height").get<int>();
    m.intrinsics = intrinsics_from(j.at("intrinsics"));
    for (const auto &v : j.at("videos"))
      m.videos.push_back({v.at("id").get<std::string>(), v.at("frames").get<int>()});
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kLoad, manifest_path.string() + ": " + e.what()};
  }
  if (m.image_width <= 0 || m.image_height <= 0)
    throw Error{ErrorCode::kLoad, manifest_path.string() + ": image size must be positive"};
  if (m.videos.empty()) throw Error{ErrorCode::kLoad, manifest_path.string() + ": no videos"};
  for (const auto &v : m.videos) {
    const fs::path dir = video_dir(root, v.id);
    if (v.frame_count <= 0)
      throw Error{ErrorCode::kLoad, dir.string() + ": video has no frames"};
    for (int i = 0; i < v.frame_count; ++i)
      if (!fs::exists(dir / (frame_stem(i) + ".meta.json")))
        throw Error{ErrorCode::kLoad, "missing " + (dir / (frame_stem(i) + ".meta.json")).string()};
  }
  return Dataset{root, std::move(m), load_registry(root)};
}

std::vector<std::vector<int>> eval_clip_indices(int frame_count, int length, int stride) {
  if (length < 1 || stride < 1)
    throw Error{ErrorCode::kInvalidArgument, "clip length and stride must be >= 1"};
  std::vector<std::vector<int>> clips;
  for (int start = 0; start < frame_count; start += length * stride) {
    std::vector<int> idx;
    for (int i = start; i < frame_count && static_cast<int>(idx.size()) < length; i += stride)
      idx.push_back(i);
    clips.push_back(std::move(idx));
  }
  return clips;
}

std::vector<VideoClip> make_eval_clips(const Dataset &dataset, std::size_t video, int length,
                                       int stride) {
  std::vector<VideoClip> out;
  for (const auto &idx : eval_clip_indices(dataset.videos().at(video).frame_count, length, stride))
    out.push_back(dataset.clip(video, idx, stride));
  return out;
}

TrainClipChoice sample_train_clip(int frame_count, std::mt19937_64 &rng, int length,
                                  int max_stride) {
  if (length < 1 || max_stride < 1)
    throw Error{ErrorCode::kInvalidArgument, "clip length and max stride must be >= 1"};
  if (frame_count < length)
    throw Error{ErrorCode::kInvalidArgument,
                "video has " + std::to_string(frame_count) + " frames; a training clip needs " +
                    std::to_string(length)};
  TrainClipChoice c;
  // Explicit modulus keeps draws identical across standard libraries.
  do {
    c.stride = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_stride));
  } while ((length - 1) * c.stride + 1 > frame_count);
  const int span = (length - 1) * c.stride + 1;
  c.start = static_cast<int>(rng() % static_cast<std::uint64_t>(frame_count - span + 1));
  for (int i = 0; i < length; ++i) c.indices.push_back(c.start + i * c.stride);
  return c;
}

Image augment_image(const Image &rgb, std::mt19937_64 &rng, const AugmentConfig &config) {
  if (!config.enabled) return rgb;
  std::uniform_real_distribution<double> jitter{1.0 - config.jitter, 1.0 + config.jitter};
  const double brightness = jitter(rng), contrast = jitter(rng), saturation = jitter(rng);
  std::normal_distribution<double> noise{0.0, config.noise_sigma};
  Image out = rgb;
  double mean = 0.0;
  for (float v : rgb.data) mean += v;
  mean /= std::max<std::size_t>(rgb.data.size(), 1);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      double c[3];
      for (int k = 0; k < 3; ++k) c[k] = rgb.at(y, x, k) * brightness;
      const double luma = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
      for (int k = 0; k < 3; ++k) {
        double v = luma + (c[k] - luma) * saturation;
        v = mean * brightness + (v - mean * brightness) * contrast;
        if (config.noise_sigma > 0.0) v += noise(rng);
        out.at(y, x, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return out;
}

FrameRecord augment_frame(const FrameRecord &frame, std::mt19937_64 &rng,
                          const AugmentConfig &config) {
  FrameRecord out = frame;
  out.rgb = augment_image(frame.rgb, rng, config);
  for (auto &o : out.objects)
    if (!o.absent) o.bbox = augment_bbox(o.bbox, frame.width(), frame.height(), rng, config);
  return out;
}

BBox scale_bbox(const BBox &box, double sx, double sy, int width, int height) {
  const Vec2 c = box.center();
  const double hw = box.width() * sx / 2.0, hh = box.height() * sy / 2.0;
  return BBox{c.x() - hw, c.y() - hh, c.x() + hw, c.y() + hh}.clipped(width, height);
}

BBox augment_bbox(const BBox &box, int width, int height, std::mt19937_64 &rng,
                  const AugmentConfig &config) {
  if (!config.enabled) return box;
  std::uniform_real_distribution<double> grow{1.0, 1.0 + config.bbox_extend};
  const double sx = grow(rng), sy = grow(rng);
  return scale_bbox(box, sx, sy, width, height);
}

void convert_ycb_video(const fs::path &ycb_root, const fs::path &) {
  throw Error{ErrorCode::kUsage, "YCB-Video conversion is not included (source: " +
                                     ycb_root.string() + ")"};
}

}  // namespace vp
