#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "videopose/autograd.hpp"
#include "videopose/data.hpp"
#include "videopose/metrics.hpp"
#include "videopose/network.hpp"

namespace vp {

struct TrainConfig {
  double base_lr = 5e-4;
  double weight_decay = 1e-5;
  double lr_decay = 0.8;
  int decay_every = 5;  // epochs
  double lr_floor = 1e-6;
  int epochs = 100;
  int batch_clips = 4;
  int clips_per_video = 1;  // random clips drawn per training video and epoch
  int clip_length = 10;
  int max_stride = 10;
  double val_fraction = 0.2;  // trailing videos held out
  int val_clip_length = 10;
  int val_stride = 2;
  double grad_clip = 10.0;  // global norm
  std::uint64_t seed = 0;
  NetworkConfig network;
  LossConfig loss;
  AugmentConfig augment;

  void validate() const;
};

double lr_at_epoch(const TrainConfig &config, int epoch);

std::string network_config_to_json(const NetworkConfig &config);
NetworkConfig network_config_from_json(const std::string &text);
std::string train_config_to_json(const TrainConfig &config);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const std::string &text);
TrainConfig load_train_config(const std::filesystem::path &path);

// Adam with L2 weight decay folded into the gradient. Frozen parameters and
// parameters without a gradient are left untouched.
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m, v;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(ParameterSet &params, const Gradients &grads, AdamState &state, double lr,
               double weight_decay, const AdamOptions &options = {});
// Rescales in place so the global norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(Gradients &grads, double max_norm);

// Hash over ids, symmetry flags and model points, in registry order.
std::uint64_t registry_hash(const ObjectRegistry &registry);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind = "network";  // "network" or "gt_echo"
  std::uint64_t registry_hash = 0;
  std::vector<std::string> class_ids;
  NetworkConfig network;
  std::string train_config;  // JSON, empty when unknown
  std::vector<Parameter> params;
  // Training state; epoch is the last completed epoch (-1 for none).
  int epoch = -1;
  AdamState adam;
  double best_adds_auc = -1.0;
  int best_epoch = -1;
};

void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &path);
// Throws kCheckpoint on a bad header, version, checksum or truncation.
Checkpoint load_checkpoint(const std::filesystem::path &path);
Checkpoint gt_echo_checkpoint(const ObjectRegistry &registry);
// Throws kCheckpoint unless the checkpoint was made for this registry.
void check_registry(const Checkpoint &checkpoint, const ObjectRegistry &registry);
// Rebuilds the network and copies the stored weights in.
VideoPoseNet network_from_checkpoint(const Checkpoint &checkpoint, const ObjectRegistry &registry);

struct VideoSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// The last round(fraction * n) videos (at least one when n >= 2 and
// fraction > 0) form the validation split.
VideoSplit split_videos(std::size_t count, double val_fraction);

struct ClipPrediction {
  std::vector<PredictionRecord> records;
  std::vector<int> positions;        // clip position of each record
  std::vector<Quaternion> raw_quats;  // unnormalized head outputs
};

// Scores every object with a box and a ground-truth pose.
ClipPrediction predict_clip(const VideoPoseNet &net, const VideoClip &clip,
                            const BoxProvider &boxes = ground_truth_boxes());
// Ground-truth echo for the oracle checkpoint.
ClipPrediction echo_clip(const VideoClip &clip, const BoxProvider &boxes = ground_truth_boxes());

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown train;
  double grad_norm = 0.0;  // mean pre-clip norm over batches
  std::size_t val_count = 0;
  double val_add_auc = 0.0;
  double val_adds_auc = 0.0;
  bool best = false;
};

std::string epoch_record_to_json(const EpochRecord &record);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::optional<std::filesystem::path> resume;
  int stop_after = -1;  // stop once this epoch completes (-1: run all)
  std::function<void(const EpochRecord &)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;  // epochs run by this call
  Checkpoint final_state;
};

// Writes metrics.jsonl, epoch_NNN.ckpt after each epoch and best.ckpt at the
// best validation ADD-S AUC. A non-finite loss aborts with kNumerical naming
// the batch. Single-threaded and deterministic for a fixed seed.
TrainResult train(const TrainConfig &config, const Dataset &dataset,
                  const TrainOptions &options = {});

}  // namespace vp
