#include "videopose/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "videopose/error.hpp"

namespace vp {

void EncoderConfig::validate() const {
  if (widths.empty() || std::any_of(widths.begin(), widths.end(), [](int w) { return w <= 0; }))
    throw Error{ErrorCode::kInvalidArgument, "encoder widths must be positive"};
  if (frozen_stages < 0 || trainable_tail < 0 || frozen_stages + trainable_tail != stages())
    throw Error{ErrorCode::kInvalidArgument,
                "encoder frozen_stages + trainable_tail must equal the stage count"};
}

const char *to_string(TemporalVariant v) {
  switch (v) {
    case TemporalVariant::kNone: return "none";
    case TemporalVariant::kBaselineRnn: return "baseline_rnn";
    case TemporalVariant::kConvGru: return "convgru";
  }
  return "?";
}

TemporalVariant temporal_variant_from_string(const std::string &s) {
  if (s == "none") return TemporalVariant::kNone;
  if (s == "baseline_rnn" || s == "rnn") return TemporalVariant::kBaselineRnn;
  if (s == "convgru") return TemporalVariant::kConvGru;
  throw Error{ErrorCode::kUsage, "unknown temporal variant '" + s + "'"};
}

void NetworkConfig::validate() const {
  encoder.validate();
  if (num_classes < 1) throw Error{ErrorCode::kInvalidArgument, "num_classes must be >= 1"};
  if (image_height <= 0 || image_width <= 0 || image_height % encoder.stride() ||
      image_width % encoder.stride())
    throw Error{ErrorCode::kShape, "image dims must be positive multiples of the backbone stride"};
  if (roi_size < 1 || roi_sampling < 1 || memory_channels < 1 || fused_channels < 1 ||
      temporal_hidden < 1 || head_hidden < 1 || decoder_hidden < 1 || decoder_penultimate < 1)
    throw Error{ErrorCode::kInvalidArgument, "network widths must be positive"};
}

BoxProvider ground_truth_boxes() {
  return [](std::size_t, const FrameRecord &frame, const std::string &id) -> std::optional<BBox> {
    const ObjectAnnotation *a = frame.find(id);
    if (!a || a->absent) return std::nullopt;
    return a->bbox;
  };
}

Tensor image_to_tensor(const Image &rgb) {
  if (rgb.channels != 3) throw Error{ErrorCode::kShape, "expected an RGB image"};
  Tensor t{{3, rgb.height, rgb.width}};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x) t.at(c, y, x) = rgb.at(y, x, c) - 0.5;
  return t;
}

VideoPoseNet::VideoPoseNet(NetworkConfig config, const ObjectRegistry &registry,
                           std::uint64_t seed)
    : config_{std::move(config)} {
  config_.num_classes = static_cast<int>(registry.size());
  config_.validate();
  for (const auto &m : registry.models()) class_ids_.push_back(m.id);

  std::mt19937_64 rng{seed};
  auto he = [&](std::vector<int> shape, int fan_in) {
    return random_normal(std::move(shape), std::sqrt(2.0 / fan_in), rng);
  };
  auto add_conv = [&](const std::string &name, int in, int out, int k, bool frozen) {
    params_.add(name + ".w", he({out, in, k, k}, in * k * k), frozen);
    params_.add(name + ".b", Tensor{{out}}, frozen);
  };
  auto add_fc = [&](const std::string &name, int in, int out, double stddev) {
    params_.add(name + ".w", random_normal({out, in}, stddev, rng));
    params_.add(name + ".b", Tensor{{out}});
  };

  const auto &enc = config_.encoder;
  int in = 3;
  for (int s = 0; s < enc.stages(); ++s) {
    add_conv("enc" + std::to_string(s), in, enc.widths[s], 3, s < enc.frozen_stages);
    in = enc.widths[s];
  }
  const int n = config_.num_classes;
  add_conv("dec1", in, config_.decoder_hidden, 3, false);
  add_conv("dec2", config_.decoder_hidden, config_.decoder_penultimate, 3, false);
  add_conv("dec3", config_.decoder_penultimate, 1 + n + 1, 1, false);
  params_[params_.index_of("dec3.b")].value[0] = config_.tz_prior;

  const int m = config_.memory_channels, f = config_.fused_channels;
  const int c_roi = config_.roi_channels();
  if (config_.variant == TemporalVariant::kConvGru) {
    add_conv("gru_zr", c_roi + m, 2 * m, 3, false);
    add_conv("gru_h", c_roi + m, m, 3, false);
    add_conv("gru_out", m + c_roi, f, 3, false);
  } else {
    add_conv("rnn1", m + c_roi, config_.temporal_hidden, 3, false);
    add_conv("rnn2", config_.temporal_hidden, m + f, 3, false);
  }

  const int k = config_.roi_size;
  const int flat = f * k * k;
  const int hidden = config_.head_hidden;
  add_fc("trans_fc", flat, hidden, std::sqrt(2.0 / flat));
  add_fc("trans_dc", hidden, 2 * n, 1e-3);
  add_fc("trans_tz", hidden, n, 1e-3);
  add_fc("rot_fc", flat, hidden, std::sqrt(2.0 / flat));
  add_fc("rot_q", hidden, 4 * n, 1e-3);
  Tensor &tz_b = params_[params_.index_of("trans_tz.b")].value;
  for (int c = 0; c < n; ++c) tz_b[c] = config_.tz_prior;
  Tensor &q_b = params_[params_.index_of("rot_q.b")].value;
  for (int c = 0; c < n; ++c) q_b[4 * c] = 1.0;
}

Var VideoPoseNet::param(Tape &tape, const std::string &name) const {
  return tape.parameter(params_, params_.index_of(name));
}

Var VideoPoseNet::conv(Tape &tape, const std::string &name, Var x, int pad) const {
  return ag::conv2d(x, param(tape, name + ".w"), param(tape, name + ".b"), pad);
}

Var VideoPoseNet::fc(Tape &tape, const std::string &name, Var x) const {
  return ag::linear(x, param(tape, name + ".w"), param(tape, name + ".b"));
}

FrameFeatures VideoPoseNet::encode_frame(Tape &tape, const Tensor &image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != config_.image_height ||
      image.dim(2) != config_.image_width)
    throw Error{ErrorCode::kShape, "encode_frame: expected 3x" +
                                       std::to_string(config_.image_height) + "x" +
                                       std::to_string(config_.image_width) + " image, got " +
                                       image.shape_string()};
  const auto &enc = config_.encoder;
  Var x = tape.constant(image);
  for (int s = 0; s < enc.stages(); ++s) {
    x = ag::relu(conv(tape, "enc" + std::to_string(s), x, 1));
    if (s + 1 < enc.stages()) x = ag::maxpool2(x);
  }
  FrameFeatures out;
  out.z3 = x;
  Var d1 = ag::relu(conv(tape, "dec1", x, 1));
  out.penultimate = ag::relu(conv(tape, "dec2", d1, 1));
  Var head = conv(tape, "dec3", out.penultimate, 0);
  const int h = x->value.dim(1), w = x->value.dim(2);
  Var up = ag::resample(head, upsample_map(h, w, config_.image_height, config_.image_width));
  out.depth = ag::slice(up, 0, 1);
  out.logits = ag::slice(up, 1, config_.num_classes + 2);
  out.fused_map = ag::concat({out.z3, out.penultimate});
  return out;
}

namespace {

void require_roi(const BBox &box) {
  if (!(box.width() > 0.0) || !(box.height() > 0.0) || !std::isfinite(box.area()))
    throw Error{ErrorCode::kInvalidRoi, "ROI must have positive area"};
}

ResampleMap roi_map(const BBox &box, int in_h, int in_w, double stride, int k, int sampling) {
  ResampleMap m;
  m.in_h = in_h;
  m.in_w = in_w;
  m.out_h = k;
  m.out_w = k;
  const double bh = box.height() / k, bw = box.width() / k;
  const double scale = 1.0 / (sampling * sampling);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      for (int a = 0; a < sampling; ++a)
        for (int b = 0; b < sampling; ++b) {
          const double py = box.y0 + (i + (a + 0.5) / sampling) * bh;
          const double px = box.x0 + (j + (b + 0.5) / sampling) * bw;
          m.add_bilinear(py / stride - 0.5, px / stride - 0.5, scale);
        }
      m.finish_cell();
    }
  return m;
}

}  // namespace

Var VideoPoseNet::roi_fuse(const FrameFeatures &features, const BBox &box) const {
  require_roi(box);
  if (!box.intersects_image(config_.image_width, config_.image_height))
    throw Error{ErrorCode::kInvalidRoi, "ROI does not intersect the image"};
  const Tensor &f = features.fused_map->value;
  return ag::resample(features.fused_map,
                      roi_map(box, f.dim(1), f.dim(2), config_.encoder.stride(),
                              config_.roi_size, config_.roi_sampling));
}

Tensor VideoPoseNet::roi_depth(const FrameFeatures &features, const BBox &box) const {
  require_roi(box);
  const Tensor &d = features.depth->value;
  const ResampleMap m = roi_map(box, d.dim(1), d.dim(2), 1.0, config_.roi_size, 1);
  Tensor out{{config_.roi_size, config_.roi_size}};
  for (std::size_t o = 0; o < out.size(); ++o) {
    double s = 0.0;
    for (int q = m.offsets[o]; q < m.offsets[o + 1]; ++q) s += m.weight[q] * d[m.src[q]];
    out[o] = s;
  }
  return out;
}

Var VideoPoseNet::warp_previous_features(const TemporalState &state,
                                         const CameraExtrinsic &curr_extrinsic,
                                         const Tensor &curr_depth_roi, const BBox &curr_box,
                                         const CameraIntrinsics &k_cam) const {
  const int k = config_.roi_size;
  if (!state.memory) throw Error{ErrorCode::kInvalidArgument, "warp needs a memory state"};
  if (static_cast<int>(curr_depth_roi.size()) != k * k)
    throw Error{ErrorCode::kShape, "warp: depth ROI must hold k x k values"};
  require_roi(curr_box);
  const BBox &prev_box = state.box;
  // Current camera frame -> previous camera frame.
  const CameraExtrinsic back = relative_transform(state.frame_extrinsic, curr_extrinsic).inverse();
  const Mat3 r_back = back.rotation();
  const Vec3 t_back = back.translation();

  ResampleMap m;
  m.in_h = k;
  m.in_w = k;
  m.out_h = k;
  m.out_w = k;
  const bool prev_ok = prev_box.width() > 0.0 && prev_box.height() > 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double u = curr_box.x0 + (j + 0.5) * curr_box.width() / k;
      const double v = curr_box.y0 + (i + 0.5) * curr_box.height() / k;
      const Vec3 ray{(u - k_cam.px) / k_cam.fx, (v - k_cam.py) / k_cam.fy, 1.0};
      Vec3 p;
      if (config_.warp == WarpMode::kDepthAware) {
        const double d = std::max(curr_depth_roi[i * k + j], config_.min_warp_depth);
        p = r_back * (d * ray) + t_back;
      } else {
        p = r_back * ray;
      }
      if (prev_ok && p.z() > 1e-9) {
        const double up = k_cam.fx * p.x() / p.z() + k_cam.px;
        const double vp = k_cam.fy * p.y() / p.z() + k_cam.py;
        const double gx = (up - prev_box.x0) / prev_box.width() * k - 0.5;
        const double gy = (vp - prev_box.y0) / prev_box.height() * k - 0.5;
        m.add_bilinear_zero_pad(gy, gx, 1.0);
      }
      m.finish_cell();
    }
  return ag::resample(state.memory, m);
}

TemporalOutput VideoPoseNet::temporal_step(Var warped_memory, Var z_t) const {
  const int m = config_.memory_channels, f = config_.fused_channels;
  if (warped_memory->value.dim(0) != m || z_t->value.dim(0) != config_.roi_channels())
    throw Error{ErrorCode::kShape, "temporal_step: channel mismatch"};
  if (config_.variant == TemporalVariant::kConvGru)
    throw Error{ErrorCode::kInvalidArgument, "network was built with the ConvGRU variant"};
  Tape &tape = *z_t->tape;
  Var x = ag::concat({warped_memory, z_t});
  Var h = ag::relu(conv(tape, "rnn1", x, 1));
  Var y = conv(tape, "rnn2", h, 1);
  return {ag::tanh(ag::slice(y, 0, m)), ag::relu(ag::slice(y, m, m + f))};
}

TemporalOutput VideoPoseNet::temporal_step_convgru(Var warped_memory, Var z_t) const {
  const int m = config_.memory_channels;
  if (warped_memory->value.dim(0) != m || z_t->value.dim(0) != config_.roi_channels())
    throw Error{ErrorCode::kShape, "temporal_step_convgru: channel mismatch"};
  if (config_.variant != TemporalVariant::kConvGru)
    throw Error{ErrorCode::kInvalidArgument, "network was not built with the ConvGRU variant"};
  Tape &tape = *z_t->tape;
  Var h = warped_memory;
  Var gates = ag::sigmoid(conv(tape, "gru_zr", ag::concat({z_t, h}), 1));
  Var update = ag::slice(gates, 0, m);
  Var reset = ag::slice(gates, m, 2 * m);
  Var cand = ag::tanh(conv(tape, "gru_h", ag::concat({z_t, ag::mul(reset, h)}), 1));
  // h' = h + z * (cand - h)
  Var h_next = ag::add(h, ag::mul(update, ag::add(cand, ag::affine(h, -1.0, 0.0))));
  Var fused = ag::relu(conv(tape, "gru_out", ag::concat({h_next, z_t}), 1));
  return {h_next, fused};
}

TemporalOutput VideoPoseNet::temporal(Var warped_memory, Var z_t) const {
  switch (config_.variant) {
    case TemporalVariant::kConvGru: return temporal_step_convgru(warped_memory, z_t);
    case TemporalVariant::kNone: return temporal_step(zero_memory(*z_t->tape), z_t);
    case TemporalVariant::kBaselineRnn: break;
  }
  return temporal_step(warped_memory, z_t);
}

PoseHeadOutput VideoPoseNet::regress_pose(Var fused, std::size_t class_index) const {
  if (class_index >= static_cast<std::size_t>(config_.num_classes))
    throw Error{ErrorCode::kInvalidArgument,
                "class index " + std::to_string(class_index) + " out of range"};
  Tape &tape = *fused->tape;
  const int flat = static_cast<int>(fused->value.size());
  Var x = ag::reshape(fused, {flat});
  Var t_hidden = ag::relu(fc(tape, "trans_fc", x));
  Var r_hidden = ag::relu(fc(tape, "rot_fc", x));
  PoseHeadOutput out;
  out.delta_c_all = fc(tape, "trans_dc", t_hidden);
  out.tz_all = fc(tape, "trans_tz", t_hidden);
  out.quat_all = fc(tape, "rot_q", r_hidden);
  const int c = static_cast<int>(class_index);
  out.delta_c = ag::slice(out.delta_c_all, 2 * c, 2 * c + 2);
  out.tz = ag::slice(out.tz_all, c, c + 1);
  out.quat = ag::slice(out.quat_all, 4 * c, 4 * c + 4);
  return out;
}

Var VideoPoseNet::zero_memory(Tape &tape) const {
  return tape.constant(Tensor{{config_.memory_channels, config_.roi_size, config_.roi_size}});
}

namespace {

double median_depth_in_box(const Tensor &depth, const BBox &box) {
  const int h = depth.dim(1), w = depth.dim(2);
  const BBox b = box.clipped(w, h);
  std::vector<double> values;
  for (int y = static_cast<int>(std::floor(b.y0)); y < static_cast<int>(std::ceil(b.y1)); ++y)
    for (int x = static_cast<int>(std::floor(b.x0)); x < static_cast<int>(std::ceil(b.x1)); ++x)
      values.push_back(depth.at(0, y, x));
  if (values.empty()) return 0.0;
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace

TemporalStates VideoPoseNet::initial_states() const {
  TemporalStates states;
  for (const auto &id : class_ids_) states[id] = TemporalState{};
  return states;
}

FramePrediction VideoPoseNet::forward_frame(Tape &tape, const FrameRecord &frame, std::size_t pos,
                                            const BoxProvider &boxes, TemporalStates &states) const {
  constexpr double kMinTz = 1e-3;
  FramePrediction fp;
  fp.features = encode_frame(tape, image_to_tensor(frame.rgb));
  for (std::size_t c = 0; c < class_ids_.size(); ++c) {
    const std::string &id = class_ids_[c];
    TemporalState &state = states[id];
    const std::optional<BBox> box = boxes(pos, frame, id);
    if (!box || !box->intersects_image(config_.image_width, config_.image_height)) {
      state = TemporalState{};  // detection dropout resets the memory
      continue;
    }
    Var z = roi_fuse(fp.features, *box);
    Var warped = nullptr;
    if (state.valid && config_.variant != TemporalVariant::kNone) {
      warped = warp_previous_features(state, frame.extrinsic, roi_depth(fp.features, *box),
                                      *box, frame.intrinsics);
    } else {
      warped = zero_memory(tape);
    }
    const TemporalOutput t = temporal(warped, z);
    state.memory = t.memory;
    state.frame_extrinsic = frame.extrinsic;
    state.box = *box;
    state.valid = true;

    ObjectPrediction op;
    op.object_id = id;
    op.class_index = c;
    op.box = *box;
    op.head = regress_pose(t.fused, c);
    const Tensor &q = op.head.quat->value;
    op.quat_raw = Quaternion{q[0], q[1], q[2], q[3]};
    double tz = op.head.tz->value[0];
    if (config_.tz_from_depth) tz = median_depth_in_box(fp.features.depth->value, *box);
    tz = std::max(tz, kMinTz);
    const Vec2 dc{op.head.delta_c->value[0], op.head.delta_c->value[1]};
    op.pose.translation = recover_translation(box->center(), dc, tz, frame.intrinsics);
    op.pose.rotation = op.quat_raw.norm() > 0.0 ? op.quat_raw.normalized() : Quaternion{};
    fp.objects.push_back(std::move(op));
  }
  return fp;
}

ClipForward VideoPoseNet::forward_clip(Tape &tape, const VideoClip &clip,
                                       const BoxProvider &boxes) const {
  if (clip.frames.empty()) throw Error{ErrorCode::kInvalidArgument, "forward_clip: empty clip"};
  TemporalStates states = initial_states();
  ClipForward out;
  for (std::size_t pos = 0; pos < clip.frames.size(); ++pos)
    out.frames.push_back(forward_frame(tape, clip.frames[pos], pos, boxes, states));
  return out;
}

ClipLoss clip_loss(const ClipForward &forward, const VideoClip &clip,
                   const ObjectRegistry &registry, const LossConfig &config) {
  if (forward.frames.size() != clip.frames.size())
    throw Error{ErrorCode::kShape, "clip_loss: forward pass does not match the clip"};
  std::vector<Var> depth_terms, label_terms, pose_terms, reg_terms, inner_terms;
  std::vector<ObjectModel> models;
  for (const auto &m : registry.models())
    models.push_back(subsample_points(m, config.loss_points, config.point_seed));

  for (std::size_t f = 0; f < clip.frames.size(); ++f) {
    const FrameRecord &frame = clip.frames[f];
    const FrameFeatures &feat = forward.frames[f].features;
    const std::size_t pixels = frame.depth.size();
    std::vector<std::uint8_t> valid(pixels);
    for (std::size_t i = 0; i < pixels; ++i) valid[i] = frame.depth[i] > 0.0;
    if (std::any_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; })) {
      auto d = depth_loss(feat.depth->value.values(), frame.depth, valid);
      depth_terms.push_back(
          ag::custom_scalar({feat.depth}, d.value, {Tensor{feat.depth->value.shape(), std::move(d.grad)}}));
    }
    auto l = label_loss(feat.logits->value.values(),
                        static_cast<std::size_t>(feat.logits->value.dim(0)), frame.labels);
    label_terms.push_back(
        ag::custom_scalar({feat.logits}, l.value, {Tensor{feat.logits->value.shape(), std::move(l.grad)}}));

    for (const auto &op : forward.frames[f].objects) {
      const ObjectAnnotation *gt = frame.find(op.object_id);
      if (!gt) continue;
      const ObjectModel &model = models[op.class_index];
      const CameraIntrinsics &k = frame.intrinsics;
      const Vec2 c = op.box.center();
      const double dcx = op.head.delta_c->value[0], dcy = op.head.delta_c->value[1];
      const double tz = op.head.tz->value[0];
      const double ax = (c.x() + dcx - k.px) / k.fx, ay = (c.y() + dcy - k.py) / k.fy;
      const Vec3 t_pred{ax * tz, ay * tz, tz};
      const PoseLossResult p = pose_loss(model, op.quat_raw, t_pred, gt->pose.rotation,
                                         gt->pose.translation, model.symmetric);
      const Vec3 &g = p.d_translation;
      Tensor d_dc{{2}, {g.x() * tz / k.fx, g.y() * tz / k.fy}};
      Tensor d_tz{{1}, {g.x() * ax + g.y() * ay + g.z()}};
      Tensor d_q{{4}, {p.d_quat[0], p.d_quat[1], p.d_quat[2], p.d_quat[3]}};
      pose_terms.push_back(ag::custom_scalar({op.head.delta_c, op.head.tz, op.head.quat}, p.value,
                                             {std::move(d_dc), std::move(d_tz), std::move(d_q)}));
      const QuatLossResult r = quat_reg_loss(op.quat_raw);
      reg_terms.push_back(ag::custom_scalar({op.head.quat}, r.value,
                                            {Tensor{{4}, {r.grad.begin(), r.grad.end()}}}));
      const QuatLossResult ip =
          quat_inner_prod_loss(op.quat_raw, gt->pose.rotation, config.double_cover_abs);
      inner_terms.push_back(ag::custom_scalar({op.head.quat}, ip.value,
                                              {Tensor{{4}, {ip.grad.begin(), ip.grad.end()}}}));
    }
  }

  const LossWeights &w = config.weights;
  std::vector<Var> terms;
  std::vector<double> coeffs;
  LossBreakdown b;
  b.weights = w;
  auto add_group = [&](const std::vector<Var> &group, double weight, double &slot) {
    if (group.empty()) return;
    const double inv = 1.0 / static_cast<double>(group.size());
    for (Var v : group) {
      terms.push_back(v);
      coeffs.push_back(weight * inv);
      slot += v->value[0] * inv;
    }
  };
  add_group(depth_terms, w.depth, b.depth);
  add_group(label_terms, w.label, b.label);
  add_group(pose_terms, w.pose, b.pose);
  add_group(reg_terms, w.reg, b.reg);
  add_group(inner_terms, w.inner_prod, b.inner_prod);
  b = total_loss(b.depth, b.label, b.pose, b.reg, b.inner_prod, w);
  ClipLoss out;
  out.total = ag::weighted_sum(terms, coeffs);
  out.breakdown = b;
  return out;
}

}  // namespace vp
