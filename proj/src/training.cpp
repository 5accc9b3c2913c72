#include "videopose/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "videopose/error.hpp"

namespace vp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'V', 'P', 'C', 'K', 'P', 'T', '\0', '\1'};

std::uint64_t fnv1a(const void *data, std::size_t size, std::uint64_t h = 1469598103934665603ull) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

void reject_unknown(const json &j, std::initializer_list<const char *> keys, const char *where) {
  if (!j.is_object()) throw Error{ErrorCode::kLoad, std::string{where} + ": expected an object"};
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto &[k, v] : j.items())
    if (!known.count(k)) throw Error{ErrorCode::kLoad, std::string{where} + ": unknown key '" + k + "'"};
}

template <typename T>
void get_if(const json &j, const char *key, T &into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

const char *warp_name(WarpMode m) {
  return m == WarpMode::kDepthAware ? "depth_aware" : "rotation_homography";
}

WarpMode warp_from_name(const std::string &s) {
  if (s == "depth_aware") return WarpMode::kDepthAware;
  if (s == "rotation_homography") return WarpMode::kRotationHomography;
  throw Error{ErrorCode::kLoad, "unknown warp mode '" + s + "'"};
}

json network_json(const NetworkConfig &c) {
  return {{"num_classes", c.num_classes},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"encoder",
           {{"widths", c.encoder.widths},
            {"frozen_stages", c.encoder.frozen_stages},
            {"trainable_tail", c.encoder.trainable_tail}}},
          {"decoder_hidden", c.decoder_hidden},
          {"decoder_penultimate", c.decoder_penultimate},
          {"roi_size", c.roi_size},
          {"roi_sampling", c.roi_sampling},
          {"memory_channels", c.memory_channels},
          {"fused_channels", c.fused_channels},
          {"temporal_hidden", c.temporal_hidden},
          {"head_hidden", c.head_hidden},
          {"variant", to_string(c.variant)},
          {"warp", warp_name(c.warp)},
          {"tz_from_depth", c.tz_from_depth},
          {"tz_prior", c.tz_prior},
          {"min_warp_depth", c.min_warp_depth}};
}

NetworkConfig network_from(const json &j) {
  reject_unknown(j,
                 {"num_classes", "image_height", "image_width", "encoder", "decoder_hidden",
                  "decoder_penultimate", "roi_size", "roi_sampling", "memory_channels",
                  "fused_channels", "temporal_hidden", "head_hidden", "variant", "warp",
                  "tz_from_depth", "tz_prior", "min_warp_depth"},
                 "network");
  NetworkConfig c;
  get_if(j, "num_classes", c.num_classes);
  get_if(j, "image_height", c.image_height);
  get_if(j, "image_width", c.image_width);
  if (j.contains("encoder")) {
    const json &e = j.at("encoder");
    reject_unknown(e, {"widths", "frozen_stages", "trainable_tail"}, "encoder");
    get_if(e, "widths", c.encoder.widths);
    get_if(e, "frozen_stages", c.encoder.frozen_stages);
    get_if(e, "trainable_tail", c.encoder.trainable_tail);
  }
  get_if(j, "decoder_hidden", c.decoder_hidden);
  get_if(j, "decoder_penultimate", c.decoder_penultimate);
  get_if(j, "roi_size", c.roi_size);
  get_if(j, "roi_sampling", c.roi_sampling);
  get_if(j, "memory_channels", c.memory_channels);
  get_if(j, "fused_channels", c.fused_channels);
  get_if(j, "temporal_hidden", c.temporal_hidden);
  get_if(j, "head_hidden", c.head_hidden);
  if (j.contains("variant")) c.variant = temporal_variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("warp")) c.warp = warp_from_name(j.at("warp").get<std::string>());
  get_if(j, "tz_from_depth", c.tz_from_depth);
  get_if(j, "tz_prior", c.tz_prior);
  get_if(j, "min_warp_depth", c.min_warp_depth);
  return c;
}

json breakdown_json(const LossBreakdown &b) {
  return {{"depth", b.depth}, {"label", b.label}, {"pose", b.pose},
          {"reg", b.reg},     {"inner_prod", b.inner_prod}, {"total", b.total}};
}

template <typename F>
auto parse_json(const std::string &text, const char *where, F &&fn) {
  try {
    return fn(json::parse(text));
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kLoad, std::string{where} + ": " + e.what()};
  }
}

// Binary writer/reader for the checkpoint payload.
struct Writer {
  std::string buf;
  void raw(const void *p, std::size_t n) { buf.append(static_cast<const char *>(p), n); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void tensor(const Tensor &t) {
    u64(t.rank());
    for (int d : t.shape()) u64(static_cast<std::uint64_t>(d));
    raw(t.data(), t.size() * sizeof(double));
  }
};

struct Reader {
  const std::string &buf;
  std::size_t pos = 0;
  void raw(void *p, std::size_t n) {
    if (n > buf.size() - pos) throw Error{ErrorCode::kCheckpoint, "checkpoint truncated"};
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  Tensor tensor() {
    const std::uint64_t rank = u64();
    if (rank > 8) throw Error{ErrorCode::kCheckpoint, "checkpoint tensor rank is corrupt"};
    if (rank == 0) return {};
    std::vector<int> shape;
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const std::uint64_t d = u64();
      if (d > (1u << 28)) throw Error{ErrorCode::kCheckpoint, "checkpoint tensor shape is corrupt"};
      shape.push_back(static_cast<int>(d));
      count *= d;
    }
    if (count * sizeof(double) > buf.size() - pos)
      throw Error{ErrorCode::kCheckpoint, "checkpoint truncated"};
    std::vector<double> data(count);
    raw(data.data(), count * sizeof(double));
    return Tensor{std::move(shape), std::move(data)};
  }
};

std::string read_file(const fs::path &path, ErrorCode code) {
  std::ifstream in{path, std::ios::binary};
  if (!in) throw Error{code, "cannot open " + path.string()};
  return {std::istreambuf_iterator<char>{in}, {}};
}

void write_file_atomic(const fs::path &path, const std::string &bytes) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out{tmp, std::ios::binary};
    if (!out) throw Error{ErrorCode::kCheckpoint, "cannot write " + tmp.string()};
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error{ErrorCode::kCheckpoint, "cannot write " + tmp.string()};
  }
  fs::rename(tmp, path);
}

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), stream};
  return std::mt19937_64{seq};
}

std::string ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ckpt", epoch);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !(lr_floor > 0.0) || lr_floor > base_lr)
    throw Error{ErrorCode::kInvalidArgument, "need 0 < lr_floor <= base_lr"};
  if (!(lr_decay > 0.0 && lr_decay < 1.0))
    throw Error{ErrorCode::kInvalidArgument, "lr_decay must lie in (0, 1)"};
  if (decay_every < 1 || epochs < 0 || batch_clips < 1 || clips_per_video < 1 || clip_length < 1 ||
      max_stride < 1 || val_clip_length < 1 || val_stride < 1)
    throw Error{ErrorCode::kInvalidArgument, "training counts must be positive"};
  if (weight_decay < 0.0 || !(grad_clip > 0.0) || val_fraction < 0.0 || val_fraction >= 1.0)
    throw Error{ErrorCode::kInvalidArgument, "invalid weight decay, clip norm or validation fraction"};
  network.validate();
}

double lr_at_epoch(const TrainConfig &c, int epoch) {
  if (epoch < 0) throw Error{ErrorCode::kInvalidArgument, "epoch must be >= 0"};
  return std::max(c.base_lr * std::pow(c.lr_decay, epoch / c.decay_every), c.lr_floor);
}

std::string network_config_to_json(const NetworkConfig &c) { return network_json(c).dump(2); }

NetworkConfig network_config_from_json(const std::string &text) {
  return parse_json(text, "network config", [](const json &j) { return network_from(j); });
}

std::string train_config_to_json(const TrainConfig &c) {
  const json j = {
      {"base_lr", c.base_lr},
      {"weight_decay", c.weight_decay},
      {"lr_decay", c.lr_decay},
      {"decay_every", c.decay_every},
      {"lr_floor", c.lr_floor},
      {"epochs", c.epochs},
      {"batch_clips", c.batch_clips},
      {"clips_per_video", c.clips_per_video},
      {"clip_length", c.clip_length},
      {"max_stride", c.max_stride},
      {"val_fraction", c.val_fraction},
      {"val_clip_length", c.val_clip_length},
      {"val_stride", c.val_stride},
      {"grad_clip", c.grad_clip},
      {"seed", c.seed},
      {"network", network_json(c.network)},
      {"loss",
       {{"weights",
         {{"depth", c.loss.weights.depth},
          {"label", c.loss.weights.label},
          {"pose", c.loss.weights.pose},
          {"reg", c.loss.weights.reg},
          {"inner_prod", c.loss.weights.inner_prod}}},
        {"double_cover_abs", c.loss.double_cover_abs},
        {"loss_points", c.loss.loss_points},
        {"point_seed", c.loss.point_seed}}},
      {"augment",
       {{"enabled", c.augment.enabled},
        {"jitter", c.augment.jitter},
        {"noise_sigma", c.augment.noise_sigma},
        {"bbox_extend", c.augment.bbox_extend}}}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string &text) {
  return parse_json(text, "train config", [](const json &j) {
    reject_unknown(j,
                   {"base_lr", "weight_decay", "lr_decay", "decay_every", "lr_floor", "epochs",
                    "batch_clips", "clips_per_video", "clip_length", "max_stride", "val_fraction",
                    "val_clip_length", "val_stride", "grad_clip", "seed", "network", "loss",
                    "augment"},
                   "train config");
    TrainConfig c;
    get_if(j, "base_lr", c.base_lr);
    get_if(j, "weight_decay", c.weight_decay);
    get_if(j, "lr_decay", c.lr_decay);
    get_if(j, "decay_every", c.decay_every);
    get_if(j, "lr_floor", c.lr_floor);
    get_if(j, "epochs", c.epochs);
    get_if(j, "batch_clips", c.batch_clips);
    get_if(j, "clips_per_video", c.clips_per_video);
    get_if(j, "clip_length", c.clip_length);
    get_if(j, "max_stride", c.max_stride);
    get_if(j, "val_fraction", c.val_fraction);
    get_if(j, "val_clip_length", c.val_clip_length);
    get_if(j, "val_stride", c.val_stride);
    get_if(j, "grad_clip", c.grad_clip);
    get_if(j, "seed", c.seed);
    if (j.contains("network")) c.network = network_from(j.at("network"));
    if (j.contains("loss")) {
      const json &l = j.at("loss");
      reject_unknown(l, {"weights", "double_cover_abs", "loss_points", "point_seed"}, "loss");
      if (l.contains("weights")) {
        const json &w = l.at("weights");
        reject_unknown(w, {"depth", "label", "pose", "reg", "inner_prod"}, "loss weights");
        get_if(w, "depth", c.loss.weights.depth);
        get_if(w, "label", c.loss.weights.label);
        get_if(w, "pose", c.loss.weights.pose);
        get_if(w, "reg", c.loss.weights.reg);
        get_if(w, "inner_prod", c.loss.weights.inner_prod);
      }
      get_if(l, "double_cover_abs", c.loss.double_cover_abs);
      get_if(l, "loss_points", c.loss.loss_points);
      get_if(l, "point_seed", c.loss.point_seed);
    }
    if (j.contains("augment")) {
      const json &a = j.at("augment");
      reject_unknown(a, {"enabled", "jitter", "noise_sigma", "bbox_extend"}, "augment");
      get_if(a, "enabled", c.augment.enabled);
      get_if(a, "jitter", c.augment.jitter);
      get_if(a, "noise_sigma", c.augment.noise_sigma);
      get_if(a, "bbox_extend", c.augment.bbox_extend);
    }
    return c;
  });
}

TrainConfig load_train_config(const fs::path &path) {
  try {
    return train_config_from_json(read_file(path, ErrorCode::kLoad));
  } catch (const Error &e) {
    if (e.code() == ErrorCode::kLoad && std::string{e.what()}.starts_with("cannot open")) throw;
    throw Error{e.code(), path.string() + ": " + e.what()};
  }
}

void adam_step(ParameterSet &params, const Gradients &grads, AdamState &state, double lr,
               double weight_decay, const AdamOptions &o) {
  if (grads.size() != params.size())
    throw Error{ErrorCode::kInvalidArgument, "gradient count does not match the parameter set"};
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), Tensor{});
    state.v.assign(params.size(), Tensor{});
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter &p = params[i];
    if (p.frozen || grads[i].empty()) continue;
    Tensor &m = state.m[i], &v = state.v[i];
    if (m.empty()) {
      m = Tensor{p.value.shape()};
      v = Tensor{p.value.shape()};
    }
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = grads[i][k] + weight_decay * p.value[k];
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g;
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g * g;
      p.value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + o.eps);
    }
  }
}

double clip_global_norm(Gradients &grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto &g : grads)
      for (auto &x : g.values()) x *= s;
  }
  return norm;
}

std::uint64_t registry_hash(const ObjectRegistry &registry) {
  std::uint64_t h = fnv1a("registry", 8);
  const std::uint64_t n = registry.size();
  h = fnv1a(&n, sizeof n, h);
  for (const auto &m : registry.models()) {
    h = fnv1a(m.id.data(), m.id.size() + 1, h);
    const unsigned char sym = m.symmetric;
    h = fnv1a(&sym, 1, h);
    const std::uint64_t count = m.points.size();
    h = fnv1a(&count, sizeof count, h);
    for (const auto &p : m.points) h = fnv1a(p.data(), 3 * sizeof(double), h);
  }
  return h;
}

void save_checkpoint(const Checkpoint &c, const fs::path &path) {
  json names = json::array();
  for (const auto &p : c.params) names.push_back({{"name", p.name}, {"frozen", p.frozen}});
  const json header = {{"kind", c.kind},
                       {"registry_hash", c.registry_hash},
                       {"class_ids", c.class_ids},
                       {"network", network_json(c.network)},
                       {"train_config", c.train_config},
                       {"params", names},
                       {"epoch", c.epoch},
                       {"adam_step", c.adam.step},
                       {"adam_slots", c.adam.m.size()},
                       {"best_adds_auc", c.best_adds_auc},
                       {"best_epoch", c.best_epoch}};
  const std::string text = header.dump();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  w.raw(&version, sizeof version);
  w.u64(text.size());
  w.raw(text.data(), text.size());
  for (const auto &p : c.params) w.tensor(p.value);
  for (std::size_t i = 0; i < c.adam.m.size(); ++i) {
    w.tensor(c.adam.m[i]);
    w.tensor(c.adam.v[i]);
  }
  w.u64(fnv1a(w.buf.data(), w.buf.size()));
  write_file_atomic(path, w.buf);
}

Checkpoint load_checkpoint(const fs::path &path) {
  const std::string bytes = read_file(path, ErrorCode::kCheckpoint);
  const std::string where = path.string() + ": ";
  if (bytes.size() < sizeof kMagic + 4 + 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic))
    throw Error{ErrorCode::kCheckpoint, where + "not a checkpoint file"};
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a(bytes.data(), bytes.size() - 8) != stored)
    throw Error{ErrorCode::kCheckpoint, where + "checksum mismatch (file corrupt)"};
  const std::string body = bytes.substr(0, bytes.size() - 8);
  Reader r{body};
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  std::uint32_t version = 0;
  r.raw(&version, sizeof version);
  if (version != kCheckpointVersion)
    throw Error{ErrorCode::kCheckpoint, where + "unsupported checkpoint version " + std::to_string(version)};
  const std::uint64_t len = r.u64();
  if (len > body.size() - r.pos) throw Error{ErrorCode::kCheckpoint, where + "checkpoint truncated"};
  std::string text(len, '\0');
  r.raw(text.data(), len);
  Checkpoint c;
  std::size_t slots = 0;
  try {
    const json h = json::parse(text);
    c.kind = h.at("kind").get<std::string>();
    c.registry_hash = h.at("registry_hash").get<std::uint64_t>();
    c.class_ids = h.at("class_ids").get<std::vector<std::string>>();
    c.network = network_from(h.at("network"));
    c.train_config = h.at("train_config").get<std::string>();
    for (const auto &p : h.at("params"))
      c.params.push_back({p.at("name").get<std::string>(), Tensor{}, p.at("frozen").get<bool>()});
    c.epoch = h.at("epoch").get<int>();
    c.adam.step = h.at("adam_step").get<std::int64_t>();
    slots = h.at("adam_slots").get<std::size_t>();
    c.best_adds_auc = h.at("best_adds_auc").get<double>();
    c.best_epoch = h.at("best_epoch").get<int>();
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kCheckpoint, where + "bad header: " + e.what()};
  } catch (const Error &e) {
    throw Error{ErrorCode::kCheckpoint, where + "bad header: " + e.what()};
  }
  if (c.kind != "network" && c.kind != "gt_echo")
    throw Error{ErrorCode::kCheckpoint, where + "unknown checkpoint kind '" + c.kind + "'"};
  if (slots != 0 && slots != c.params.size())
    throw Error{ErrorCode::kCheckpoint, where + "optimizer state does not match the parameters"};
  for (auto &p : c.params) p.value = r.tensor();
  c.adam.m.resize(slots);
  c.adam.v.resize(slots);
  for (std::size_t i = 0; i < slots; ++i) {
    c.adam.m[i] = r.tensor();
    c.adam.v[i] = r.tensor();
  }
  if (r.pos != body.size()) throw Error{ErrorCode::kCheckpoint, where + "trailing bytes"};
  return c;
}

Checkpoint gt_echo_checkpoint(const ObjectRegistry &registry) {
  Checkpoint c;
  c.kind = "gt_echo";
  c.registry_hash = registry_hash(registry);
  for (const auto &m : registry.models()) c.class_ids.push_back(m.id);
  c.network.num_classes = static_cast<int>(registry.size());
  return c;
}

void check_registry(const Checkpoint &c, const ObjectRegistry &registry) {
  if (c.registry_hash != registry_hash(registry))
    throw Error{ErrorCode::kCheckpoint,
                "checkpoint was trained on a different object registry (hash mismatch); refusing"};
}

VideoPoseNet network_from_checkpoint(const Checkpoint &c, const ObjectRegistry &registry) {
  if (c.kind != "network") throw Error{ErrorCode::kCheckpoint, "checkpoint holds no network"};
  check_registry(c, registry);
  VideoPoseNet net{c.network, registry, 0};
  ParameterSet &ps = net.params();
  if (ps.size() != c.params.size())
    throw Error{ErrorCode::kCheckpoint, "checkpoint parameter count does not match the network"};
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Parameter &src = c.params[i];
    if (src.name != ps[i].name || !src.value.same_shape(ps[i].value))
      throw Error{ErrorCode::kCheckpoint, "checkpoint parameter '" + src.name + "' does not match"};
    ps[i].value = src.value;
  }
  return net;
}

VideoSplit split_videos(std::size_t count, double val_fraction) {
  std::size_t val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(count)));
  if (val == 0 && val_fraction > 0.0 && count >= 2) val = 1;
  val = std::min(val, count == 0 ? 0 : count - 1);
  VideoSplit s;
  for (std::size_t i = 0; i < count; ++i) (i < count - val ? s.train : s.val).push_back(i);
  return s;
}

ClipPrediction predict_clip(const VideoPoseNet &net, const VideoClip &clip, const BoxProvider &boxes) {
  Tape tape;
  const ClipForward fw = net.forward_clip(tape, clip, boxes);
  ClipPrediction out;
  for (std::size_t t = 0; t < fw.frames.size(); ++t) {
    const FrameRecord &frame = clip.frames[t];
    for (const auto &o : fw.frames[t].objects) {
      const ObjectAnnotation *gt = frame.find(o.object_id);
      if (!gt || gt->absent) continue;
      out.records.push_back({clip.video_id + "/" + std::to_string(frame.index), o.object_id, gt->pose, o.pose});
      out.positions.push_back(static_cast<int>(t));
      out.raw_quats.push_back(o.quat_raw);
    }
  }
  return out;
}

ClipPrediction echo_clip(const VideoClip &clip, const BoxProvider &boxes) {
  ClipPrediction out;
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    const FrameRecord &frame = clip.frames[t];
    for (const auto &gt : frame.objects) {
      if (gt.absent || !boxes(t, frame, gt.id)) continue;
      out.records.push_back({clip.video_id + "/" + std::to_string(frame.index), gt.id, gt.pose, gt.pose});
      out.positions.push_back(static_cast<int>(t));
      out.raw_quats.push_back(gt.pose.rotation);
    }
  }
  return out;
}

std::string epoch_record_to_json(const EpochRecord &r) {
  const json j = {{"epoch", r.epoch},
                  {"lr", r.lr},
                  {"train", breakdown_json(r.train)},
                  {"grad_norm", r.grad_norm},
                  {"val_count", r.val_count},
                  {"val_add_auc", r.val_add_auc},
                  {"val_adds_auc", r.val_adds_auc},
                  {"best", r.best}};
  return j.dump();
}

TrainResult train(const TrainConfig &config_in, const Dataset &dataset, const TrainOptions &options) {
  TrainConfig config = config_in;
  const ObjectRegistry &registry = dataset.registry();
  config.network.num_classes = static_cast<int>(registry.size());
  config.network.image_height = dataset.manifest().image_height;
  config.network.image_width = dataset.manifest().image_width;
  config.validate();

  const VideoSplit split = split_videos(dataset.videos().size(), config.val_fraction);
  std::vector<std::size_t> usable;
  for (std::size_t v : split.train)
    if (dataset.videos()[v].frame_count >= config.clip_length) usable.push_back(v);
  if (usable.empty())
    throw Error{ErrorCode::kLoad, "no training video has " + std::to_string(config.clip_length) + " frames"};

  VideoPoseNet net{config.network, registry, config.seed};
  Checkpoint state;
  state.kind = "network";
  state.registry_hash = registry_hash(registry);
  state.class_ids = net.class_ids();
  state.network = config.network;
  state.train_config = train_config_to_json(config);
  if (options.resume) {
    const Checkpoint resumed = load_checkpoint(*options.resume);
    check_registry(resumed, registry);
    net = network_from_checkpoint(resumed, registry);
    state.epoch = resumed.epoch;
    state.adam = resumed.adam;
    state.best_adds_auc = resumed.best_adds_auc;
    state.best_epoch = resumed.best_epoch;
  }

  std::ofstream log;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    log.open(options.out_dir / "metrics.jsonl", std::ios::app);
    if (!log) throw Error{ErrorCode::kLoad, "cannot write " + (options.out_dir / "metrics.jsonl").string()};
  }

  TrainResult result;
  for (int epoch = state.epoch + 1; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at_epoch(config, epoch);

    std::mt19937_64 rng = epoch_rng(config.seed, epoch, 0x74726e);
    struct Job {
      std::size_t video;
      TrainClipChoice choice;
    };
    std::vector<Job> jobs;
    for (std::size_t v : usable)
      for (int k = 0; k < config.clips_per_video; ++k)
        jobs.push_back({v, sample_train_clip(dataset.videos()[v].frame_count, rng, config.clip_length,
                                             config.max_stride)});
    for (std::size_t i = jobs.size(); i > 1; --i) std::swap(jobs[i - 1], jobs[rng() % i]);

    std::size_t clips_seen = 0, batches = 0;
    for (std::size_t b0 = 0; b0 < jobs.size(); b0 += static_cast<std::size_t>(config.batch_clips)) {
      const std::size_t b1 = std::min(jobs.size(), b0 + static_cast<std::size_t>(config.batch_clips));
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      Gradients grads = zero_gradients(net.params());
      for (std::size_t j = b0; j < b1; ++j) {
        VideoClip clip = dataset.clip(jobs[j].video, jobs[j].choice.indices, jobs[j].choice.stride);
        for (auto &f : clip.frames) f = augment_frame(f, rng, config.augment);
        Tape tape;
        const ClipForward fw = net.forward_clip(tape, clip);
        const ClipLoss loss = clip_loss(fw, clip, registry, config.loss);
        if (!std::isfinite(loss.breakdown.total)) {
          const std::string id = "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) +
                                 " (video " + clip.video_id + ", start " +
                                 std::to_string(jobs[j].choice.start) + ", stride " +
                                 std::to_string(jobs[j].choice.stride) + ")";
          if (log) log << json{{"abort", "non-finite loss"}, {"epoch", epoch}, {"batch", batches}, {"video", clip.video_id}}.dump() << '\n';
          throw Error{ErrorCode::kNumerical, "non-finite loss at " + id};
        }
        Gradients g = zero_gradients(net.params());
        tape.backward(loss.total, g);
        accumulate(grads, g, scale);
        rec.train += loss.breakdown;
        ++clips_seen;
      }
      const double norm = clip_global_norm(grads, config.grad_clip);
      if (!std::isfinite(norm)) {
        if (log) log << json{{"abort", "non-finite gradient"}, {"epoch", epoch}, {"batch", batches}}.dump() << '\n';
        throw Error{ErrorCode::kNumerical, "non-finite gradient at epoch " + std::to_string(epoch) +
                                               " batch " + std::to_string(batches)};
      }
      rec.grad_norm += norm;
      adam_step(net.params(), grads, state.adam, rec.lr, config.weight_decay);
      ++batches;
    }
    rec.train = rec.train.scaled(1.0 / static_cast<double>(clips_seen));
    rec.train.weights = config.loss.weights;
    rec.grad_norm /= static_cast<double>(batches);

    std::vector<PredictionRecord> val;
    for (std::size_t v : split.val)
      for (const auto &clip : make_eval_clips(dataset, v, config.val_clip_length, config.val_stride)) {
        ClipPrediction p = predict_clip(net, clip);
        val.insert(val.end(), p.records.begin(), p.records.end());
      }
    if (!val.empty()) {
      const DatasetEvaluation ev = evaluate_dataset(val, registry);
      rec.val_count = ev.rows.back().count;
      rec.val_add_auc = ev.rows.back().add_auc;
      rec.val_adds_auc = ev.rows.back().adds_auc;
    }

    state.epoch = epoch;
    state.params = net.params().all();
    rec.best = rec.val_adds_auc > state.best_adds_auc;
    if (rec.best) {
      state.best_adds_auc = rec.val_adds_auc;
      state.best_epoch = epoch;
    }
    if (!options.out_dir.empty()) {
      save_checkpoint(state, options.out_dir / ckpt_name(epoch));
      if (rec.best) save_checkpoint(state, options.out_dir / "best.ckpt");
      log << epoch_record_to_json(rec) << '\n';
      log.flush();
    }
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop_after >= 0 && epoch >= options.stop_after) break;
  }
  state.params = net.params().all();
  result.final_state = std::move(state);
  return result;
}

}  // namespace vp
