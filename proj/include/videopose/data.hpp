#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "videopose/frame.hpp"
#include "videopose/objects.hpp"

namespace vp {

inline constexpr const char *kDatasetManifest = "dataset.json";
inline constexpr double kDepthUnit = 1e-4;  // meters per count in depth PNGs

struct VideoInfo {
  std::string id;
  int frame_count = 0;
};

struct DatasetManifest {
  std::string dataset_id;
  int image_width = 0;
  int image_height = 0;
  CameraIntrinsics intrinsics;
  std::vector<VideoInfo> videos;
};

// Indexed dataset in the portable layout:
//   dataset.json, objects.json, models/<id>.xyz,
//   videos/<video id>/NNNNNN.{rgb.png,depth.png,label.png,meta.json}
// Frames are decoded on demand and cached.
class Dataset {
 public:
  Dataset(std::filesystem::path root, DatasetManifest manifest, ObjectRegistry registry);

  const std::filesystem::path &root() const { return root_; }
  const DatasetManifest &manifest() const { return manifest_; }
  const std::string &id() const { return manifest_.dataset_id; }
  const ObjectRegistry &registry() const { return registry_; }
  const std::vector<VideoInfo> &videos() const { return manifest_.videos; }
  std::size_t video_index(const std::string &video_id) const;

  const FrameRecord &frame(std::size_t video, int index) const;
  VideoClip clip(std::size_t video, const std::vector<int> &indices, int stride) const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  ObjectRegistry registry_;
  mutable std::vector<std::vector<std::shared_ptr<FrameRecord>>> cache_;
};

Dataset load_dataset(const std::filesystem::path &root);

std::string frame_stem(int index);  // "000042"
void write_manifest(const std::filesystem::path &root, const DatasetManifest &manifest);
void write_frame(const std::filesystem::path &video_dir, const FrameRecord &frame);
// Reads one frame; the registry validates object ids, the manifest the
// image size and intrinsics.
FrameRecord read_frame(const std::filesystem::path &video_dir, int index,
                       const DatasetManifest &manifest, const ObjectRegistry &registry);

// Non-overlapping stride-`stride` clips; a short tail becomes a shorter clip.
std::vector<std::vector<int>> eval_clip_indices(int frame_count, int length = 10, int stride = 2);
std::vector<VideoClip> make_eval_clips(const Dataset &dataset, std::size_t video,
                                       int length = 10, int stride = 2);

struct TrainClipChoice {
  int stride = 1;
  int start = 0;
  std::vector<int> indices;
};

// Stride uniform on {1..max_stride} (redrawn until the clip fits), start
// uniform over the valid range. Throws kInvalidArgument for videos shorter
// than `length` frames.
TrainClipChoice sample_train_clip(int frame_count, std::mt19937_64 &rng, int length = 10,
                                  int max_stride = 10);

struct AugmentConfig {
  bool enabled = true;
  double jitter = 0.2;        // brightness/contrast/saturation, +-fraction
  double noise_sigma = 0.02;  // additive Gaussian pixel noise
  double bbox_extend = 0.1;   // width/height grow by up to this fraction
};

Image augment_image(const Image &rgb, std::mt19937_64 &rng, const AugmentConfig &config = {});
// Colour jitter plus box extension for every present object.
FrameRecord augment_frame(const FrameRecord &frame, std::mt19937_64 &rng,
                          const AugmentConfig &config = {});
// Scales width and height about the centre, then clips to the image.
BBox scale_bbox(const BBox &box, double sx, double sy, int width, int height);
BBox augment_bbox(const BBox &box, int width, int height, std::mt19937_64 &rng,
                  const AugmentConfig &config = {});

// YCB-Video conversion is not shipped. The expected mapping is one video
// directory per YCB sequence, poses from the per-frame meta matrices
// (object-to-camera), depth rescaled from the dataset's depth factor to
// kDepthUnit, and labels remapped to registry order. Always throws kUsage.
void convert_ycb_video(const std::filesystem::path &ycb_root, const std::filesystem::path &out);

}  // namespace vp
