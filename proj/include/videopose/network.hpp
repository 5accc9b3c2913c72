#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "videopose/autograd.hpp"
#include "videopose/frame.hpp"
#include "videopose/geometry.hpp"
#include "videopose/losses.hpp"
#include "videopose/objects.hpp"

namespace vp {

// Desk-scale stand-in for the VGG-16 backbone: one 3x3 conv + ReLU per stage
// with 2x2 max pooling between stages.
struct EncoderConfig {
  std::vector<int> widths{8, 16, 32, 64};
  int frozen_stages = 2;
  int trainable_tail = 2;

  int stages() const { return static_cast<int>(widths.size()); }
  int stride() const { return 1 << (stages() - 1); }
  // Throws kInvalidArgument unless frozen_stages + trainable_tail == stages.
  void validate() const;
};

enum class TemporalVariant { kNone, kBaselineRnn, kConvGru };
enum class WarpMode { kDepthAware, kRotationHomography };

const char *to_string(TemporalVariant v);
TemporalVariant temporal_variant_from_string(const std::string &s);

struct NetworkConfig {
  int num_classes = 3;
  int image_height = 128;
  int image_width = 128;
  EncoderConfig encoder;
  int decoder_hidden = 32;
  int decoder_penultimate = 64;
  int roi_size = 7;
  int roi_sampling = 2;
  int memory_channels = 128;
  int fused_channels = 256;
  int temporal_hidden = 128;
  int head_hidden = 512;
  TemporalVariant variant = TemporalVariant::kBaselineRnn;
  WarpMode warp = WarpMode::kDepthAware;
  bool tz_from_depth = false;
  double tz_prior = 1.0;       // initial Tz bias, meters
  double min_warp_depth = 0.05;

  int roi_channels() const { return encoder.widths.back() + decoder_penultimate; }
  void validate() const;
};

struct FrameFeatures {
  Var z3 = nullptr;           // C x h x w backbone map
  Var penultimate = nullptr;  // P x h x w depth-decoder map
  Var fused_map = nullptr;    // (C + P) x h x w, input to ROI align
  Var depth = nullptr;        // 1 x H x W meters
  Var logits = nullptr;       // (n + 1) x H x W
};

struct TemporalState {
  Var memory = nullptr;  // memory_channels x k x k
  CameraExtrinsic frame_extrinsic;
  BBox box;
  bool valid = false;
};

struct TemporalOutput {
  Var memory = nullptr;  // memory_channels x k x k
  Var fused = nullptr;   // fused_channels x k x k
};

struct PoseHeadOutput {
  Var delta_c_all = nullptr;  // 2n
  Var tz_all = nullptr;       // n
  Var quat_all = nullptr;     // 4n
  Var delta_c = nullptr;      // slice for the requested class, 2
  Var tz = nullptr;           // 1
  Var quat = nullptr;         // 4, raw
};

struct ObjectPrediction {
  std::string object_id;
  std::size_t class_index = 0;
  BBox box;
  PoseHeadOutput head;
  Quaternion quat_raw;
  Pose pose;  // normalized rotation, recovered translation
};

struct FramePrediction {
  FrameFeatures features;
  std::vector<ObjectPrediction> objects;
};

struct ClipForward {
  std::vector<FramePrediction> frames;
};

// Box lookup for (position in clip, frame, object id); nullopt means the
// object is not detected in that frame.
using BoxProvider = std::function<std::optional<BBox>(std::size_t, const FrameRecord &,
                                                      const std::string &)>;
BoxProvider ground_truth_boxes();

using TemporalStates = std::map<std::string, TemporalState>;

class VideoPoseNet {
 public:
  VideoPoseNet(NetworkConfig config, const ObjectRegistry &registry, std::uint64_t seed);

  const NetworkConfig &config() const { return config_; }
  const std::vector<std::string> &class_ids() const { return class_ids_; }
  ParameterSet &params() { return params_; }
  const ParameterSet &params() const { return params_; }

  // Image is 3 x H x W; H and W must match the configuration and be
  // divisible by the backbone stride.
  FrameFeatures encode_frame(Tape &tape, const Tensor &image) const;
  // Bilinear ROI align of the fused backbone/decoder map to roi_channels x k x k.
  Var roi_fuse(const FrameFeatures &features, const BBox &box) const;
  // Predicted depth sampled at the k x k ROI cell centres (no gradient).
  Tensor roi_depth(const FrameFeatures &features, const BBox &box) const;
  // Resamples the previous memory into the current ROI grid using the
  // camera motion and the current depth estimate.
  Var warp_previous_features(const TemporalState &state,
                             const CameraExtrinsic &curr_extrinsic,
                             const Tensor &curr_depth_roi, const BBox &curr_box,
                             const CameraIntrinsics &intrinsics) const;
  TemporalOutput temporal_step(Var warped_memory, Var z_t) const;
  TemporalOutput temporal_step_convgru(Var warped_memory, Var z_t) const;
  // Dispatches on the configured variant (kNone feeds zero memory).
  TemporalOutput temporal(Var warped_memory, Var z_t) const;
  PoseHeadOutput regress_pose(Var fused, std::size_t class_index) const;

  Var zero_memory(Tape &tape) const;
  TemporalStates initial_states() const;
  // One step of the clip recurrence; `states` carries the per-object memory.
  FramePrediction forward_frame(Tape &tape, const FrameRecord &frame, std::size_t pos,
                                const BoxProvider &boxes, TemporalStates &states) const;
  ClipForward forward_clip(Tape &tape, const VideoClip &clip,
                           const BoxProvider &boxes = ground_truth_boxes()) const;

 private:
  Var param(Tape &tape, const std::string &name) const;
  Var conv(Tape &tape, const std::string &name, Var x, int pad) const;
  Var fc(Tape &tape, const std::string &name, Var x) const;

  NetworkConfig config_;
  std::vector<std::string> class_ids_;
  ParameterSet params_;
};

Tensor image_to_tensor(const Image &rgb);

struct LossConfig {
  LossWeights weights;
  bool double_cover_abs = false;
  std::size_t loss_points = 500;
  std::uint64_t point_seed = 0;
};

struct ClipLoss {
  Var total = nullptr;
  LossBreakdown breakdown;
};

// Depth and label terms are averaged over frames; pose, reg and inner-product
// terms over the predicted object instances that have a ground-truth pose.
ClipLoss clip_loss(const ClipForward &forward, const VideoClip &clip,
                   const ObjectRegistry &registry, const LossConfig &config);

}  // namespace vp
