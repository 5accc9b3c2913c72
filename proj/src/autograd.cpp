#include "videopose/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>

#include "videopose/error.hpp"

namespace vp {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

bool needs_grad(std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [](Var v) { return v && v->requires_grad; });
}

void require_same_shape(Var a, Var b, const char *op) {
  if (!a->value.same_shape(b->value))
    throw Error{ErrorCode::kShape, std::string{op} + ": shape mismatch " +
                                       a->value.shape_string() + " vs " +
                                       b->value.shape_string()};
}

}  // namespace

std::size_t ParameterSet::add(std::string name, Tensor value, bool frozen) {
  if (index_.count(name))
    throw Error{ErrorCode::kInvalidArgument, "duplicate parameter '" + name + "'"};
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value), frozen});
  return params_.size() - 1;
}

std::size_t ParameterSet::index_of(const std::string &name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw Error{ErrorCode::kInvalidArgument, "unknown parameter '" + name + "'"};
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto &p : params_) n += p.value.size();
  return n;
}

Gradients zero_gradients(const ParameterSet &params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto &p : params.all()) g.emplace_back(p.value.shape());
  return g;
}

void accumulate(Gradients &into, const Gradients &from, double scale) {
  if (into.size() != from.size())
    throw Error{ErrorCode::kShape, "gradient sets differ in size"};
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (from[i].empty()) continue;
    if (into[i].empty()) into[i] = Tensor{from[i].shape()};
    for (std::size_t k = 0; k < from[i].size(); ++k) into[i][k] += scale * from[i][k];
  }
}

double global_norm(const Gradients &grads) {
  double s = 0.0;
  for (const auto &g : grads) s += g.squared_norm();
  return std::sqrt(s);
}

Tensor &Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor{value.shape()};
  return grad;
}

Var Tape::constant(Tensor value) { return make(std::move(value), false, nullptr); }

Var Tape::parameter(const ParameterSet &params, std::size_t index) {
  if (param_set_ && param_set_ != &params)
    throw Error{ErrorCode::kInvalidArgument, "tape already holds another parameter set"};
  param_set_ = &params;
  auto it = param_nodes_.find(index);
  if (it != param_nodes_.end()) return it->second;
  const Parameter &p = params[index];
  Var v = make(p.value, !p.frozen, nullptr);
  v->param_index = static_cast<int>(index);
  param_nodes_.emplace(index, v);
  return v;
}

void Tape::clear_keep_parameters() {
  std::deque<std::unique_ptr<Node>> kept;
  for (auto &n : nodes_)
    if (n->param_index >= 0) {
      n->grad = Tensor{};
      kept.push_back(std::move(n));
    }
  nodes_ = std::move(kept);
}

Var Tape::make(Tensor value, bool requires_grad, std::function<void(Node &)> backward) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->backward = std::move(backward);
  node->tape = this;
  nodes_.push_back(std::move(node));
  Var v = nodes_.back().get();
  return v;
}

void Tape::backward(Var root, Gradients &out) {
  if (root->value.size() != 1)
    throw Error{ErrorCode::kShape, "backward needs a scalar root"};
  root->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node &n = **it;
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(n);
    if (n.param_index >= 0) {
      Tensor &dst = out.at(static_cast<std::size_t>(n.param_index));
      if (dst.empty()) dst = Tensor{n.value.shape()};
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
  }
}

void ResampleMap::add_bilinear(double y, double x, double scale) {
  if (y < -1.0 || y > in_h || x < -1.0 || x > in_w) return;
  y = std::clamp(y, 0.0, static_cast<double>(in_h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(in_w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, in_h - 1);
  const int x1 = std::min(x0 + 1, in_w - 1);
  const double ly = y - y0, lx = x - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  const int idx[4] = {y0 * in_w + x0, y0 * in_w + x1, y1 * in_w + x0, y1 * in_w + x1};
  const double w[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
  for (int k = 0; k < 4; ++k) {
    if (w[k] == 0.0) continue;
    src.push_back(idx[k]);
    weight.push_back(w[k] * scale);
  }
}

void ResampleMap::add_bilinear_zero_pad(double y, double x, double scale) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double ly = y - y0, lx = x - x0;
  const int ys[2] = {y0, y0 + 1};
  const int xs[2] = {x0, x0 + 1};
  const double wy[2] = {1.0 - ly, ly};
  const double wx[2] = {1.0 - lx, lx};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      if (ys[a] < 0 || ys[a] >= in_h || xs[b] < 0 || xs[b] >= in_w) continue;
      const double w = wy[a] * wx[b];
      if (w == 0.0) continue;
      src.push_back(ys[a] * in_w + xs[b]);
      weight.push_back(w * scale);
    }
}

ResampleMap upsample_map(int in_h, int in_w, int out_h, int out_w) {
  ResampleMap m;
  m.in_h = in_h;
  m.in_w = in_w;
  m.out_h = out_h;
  m.out_w = out_w;
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      // Half-pixel centres: output pixel centre maps onto the input grid.
      m.add_bilinear((y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5, 1.0);
      m.finish_cell();
    }
  return m;
}

Tensor random_normal(std::vector<int> shape, double stddev, std::mt19937_64 &rng) {
  Tensor t{std::move(shape)};
  auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  for (std::size_t i = 0; i < t.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 2.0 * std::numbers::pi * uniform();
    t[i] = stddev * r * std::cos(phi);
    if (i + 1 < t.size()) t[i + 1] = stddev * r * std::sin(phi);
  }
  return t;
}

namespace ag {

Var conv2d(Var x, Var weight, Var bias, int pad) {
  const Tensor &in = x->value;
  const Tensor &w = weight->value;
  if (in.rank() != 3 || w.rank() != 4 || w.dim(1) != in.dim(0) || w.dim(2) != w.dim(3))
    throw Error{ErrorCode::kShape, "conv2d: input " + in.shape_string() +
                                       " incompatible with weight " + w.shape_string()};
  const int c = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const int o = w.dim(0), k = w.dim(2);
  const int oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
  if (oh <= 0 || ow <= 0) throw Error{ErrorCode::kShape, "conv2d: output would be empty"};
  const int rows = c * k * k, cols = oh * ow;
  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double *dst = col->data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * cols;
        for (int y = 0; y < oh; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < ow; ++xx) {
            const int sx = xx + kx - pad;
            if (sx >= 0 && sx < wd) dst[y * ow + xx] = in.at(ci, sy, sx);
          }
        }
      }
  Tensor out{{o, oh, ow}};
  MapRM{out.data(), o, cols}.noalias() = CMapRM{w.data(), o, rows} * CMapRM{col->data(), rows, cols};
  if (bias) {
    for (int oi = 0; oi < o; ++oi) {
      double *row = out.data() + static_cast<std::size_t>(oi) * cols;
      for (int j = 0; j < cols; ++j) row[j] += bias->value[oi];
    }
  }
  const bool rg = needs_grad({x, weight, bias});
  return x->tape->make(std::move(out), rg, [=](Node &self) {
    CMapRM dout{self.grad.data(), o, cols};
    if (weight->requires_grad)
      MapRM{weight->grad_buffer().data(), o, rows}.noalias() +=
          dout * CMapRM{col->data(), rows, cols}.transpose();
    if (bias && bias->requires_grad) {
      Tensor &db = bias->grad_buffer();
      for (int oi = 0; oi < o; ++oi) db[oi] += dout.row(oi).sum();
    }
    if (x->requires_grad) {
      MatRM dcol = CMapRM{weight->value.data(), o, rows}.transpose() * dout;
      Tensor &dx = x->grad_buffer();
      for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const double *src = dcol.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * cols;
            for (int y = 0; y < oh; ++y) {
              const int sy = y + ky - pad;
              if (sy < 0 || sy >= h) continue;
              for (int xx = 0; xx < ow; ++xx) {
                const int sx = xx + kx - pad;
                if (sx >= 0 && sx < wd) dx.at(ci, sy, sx) += src[y * ow + xx];
              }
            }
          }
    }
  });
}

namespace {

template <typename F, typename D>
Var elementwise(Var x, F f, D derivative_from_output) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
  return x->tape->make(std::move(out), x->requires_grad, [=](Node &self) {
    Tensor &dx = x->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx[i] += self.grad[i] * derivative_from_output(self.value[i]);
  });
}

}  // namespace

Var relu(Var x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return elementwise(
      x, [](double v) { return std::tanh(v); }, [](double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return elementwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double y) { return y * (1.0 - y); });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return a->tape->make(std::move(out), needs_grad({a, b}), [=](Node &self) {
    for (Var v : {a, b}) {
      if (!v->requires_grad) continue;
      Tensor &d = v->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return a->tape->make(std::move(out), needs_grad({a, b}), [=](Node &self) {
    if (a->requires_grad) {
      Tensor &d = a->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor &d = b->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * a->value[i];
    }
  });
}

Var affine(Var x, double scale, double shift) {
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
  return x->tape->make(std::move(out), x->requires_grad, [=](Node &self) {
    Tensor &d = x->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * self.grad[i];
  });
}

Var concat(const std::vector<Var> &parts) {
  if (parts.empty()) throw Error{ErrorCode::kShape, "concat of nothing"};
  std::vector<int> shape = parts[0]->value.shape();
  int total = 0;
  bool rg = false;
  for (Var p : parts) {
    const auto &s = p->value.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      throw Error{ErrorCode::kShape, "concat: trailing dimensions differ"};
    total += s[0];
    rg = rg || p->requires_grad;
  }
  shape[0] = total;
  Tensor out{shape};
  std::size_t offset = 0;
  for (Var p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + offset);
    offset += p->value.size();
  }
  return parts[0]->tape->make(std::move(out), rg, [parts](Node &self) {
    std::size_t off = 0;
    for (Var p : parts) {
      if (p->requires_grad) {
        Tensor &d = p->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

Var slice(Var x, int begin, int end) {
  const auto &s = x->value.shape();
  if (s.empty() || begin < 0 || end > s[0] || begin >= end)
    throw Error{ErrorCode::kShape, "slice out of range for " + x->value.shape_string()};
  std::vector<int> shape = s;
  shape[0] = end - begin;
  const std::size_t inner = x->value.size() / static_cast<std::size_t>(s[0]);
  const std::size_t off = inner * static_cast<std::size_t>(begin);
  Tensor out{shape};
  std::copy(x->value.data() + off, x->value.data() + off + out.size(), out.data());
  return x->tape->make(std::move(out), x->requires_grad, [=](Node &self) {
    Tensor &d = x->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[off + i] += self.grad[i];
  });
}

Var reshape(Var x, std::vector<int> shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return x->tape->make(std::move(out), x->requires_grad, [=](Node &self) {
    Tensor &d = x->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

Var maxpool2(Var x) {
  const Tensor &in = x->value;
  if (in.rank() != 3 || in.dim(1) % 2 || in.dim(2) % 2)
    throw Error{ErrorCode::kShape, "maxpool2 needs even spatial dims, got " + in.shape_string()};
  const int c = in.dim(0), oh = in.dim(1) / 2, ow = in.dim(2) / 2;
  Tensor out{{c, oh, ow}};
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = 0;
        double v = -std::numeric_limits<double>::infinity();
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                (static_cast<std::size_t>(ci) * in.dim(1) + 2 * y + dy) * in.dim(2) + 2 * xx + dx;
            if (in[idx] > v) {
              v = in[idx];
              best = idx;
            }
          }
        out[o] = v;
        (*arg)[o] = best;
      }
  return x->tape->make(std::move(out), x->requires_grad, [=](Node &self) {
    Tensor &d = x->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[(*arg)[i]] += self.grad[i];
  });
}

Var resample(Var x, const ResampleMap &map) {
  const Tensor &in = x->value;
  if (in.rank() != 3 || in.dim(1) != map.in_h || in.dim(2) != map.in_w)
    throw Error{ErrorCode::kShape, "resample: input " + in.shape_string() +
                                       " does not match the sampling map"};
  const int c = in.dim(0);
  const std::size_t in_plane = static_cast<std::size_t>(map.in_h) * map.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(map.out_h) * map.out_w;
  if (map.offsets.size() != out_plane + 1)
    throw Error{ErrorCode::kShape, "resample: incomplete sampling map"};
  Tensor out{{c, map.out_h, map.out_w}};
  for (int ci = 0; ci < c; ++ci) {
    const double *src = in.data() + ci * in_plane;
    double *dst = out.data() + ci * out_plane;
    for (std::size_t o = 0; o < out_plane; ++o) {
      double s = 0.0;
      for (int k = map.offsets[o]; k < map.offsets[o + 1]; ++k) s += map.weight[k] * src[map.src[k]];
      dst[o] = s;
    }
  }
  auto shared = std::make_shared<ResampleMap>(map);
  return x->tape->make(std::move(out), x->requires_grad, [=](Node &self) {
    Tensor &d = x->grad_buffer();
    for (int ci = 0; ci < c; ++ci) {
      double *dst = d.data() + ci * in_plane;
      const double *g = self.grad.data() + ci * out_plane;
      for (std::size_t o = 0; o < out_plane; ++o)
        for (int k = shared->offsets[o]; k < shared->offsets[o + 1]; ++k)
          dst[shared->src[k]] += shared->weight[k] * g[o];
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor &w = weight->value;
  if (w.rank() != 2 || static_cast<std::size_t>(w.dim(1)) != x->value.size())
    throw Error{ErrorCode::kShape, "linear: input of size " + std::to_string(x->value.size()) +
                                       " incompatible with weight " + w.shape_string()};
  const int out_n = w.dim(0), in_n = w.dim(1);
  Tensor out{{out_n}};
  MapV{out.data(), out_n}.noalias() = CMapRM{w.data(), out_n, in_n} * CMapV{x->value.data(), in_n};
  if (bias) MapV{out.data(), out_n} += CMapV{bias->value.data(), out_n};
  return x->tape->make(std::move(out), needs_grad({x, weight, bias}), [=](Node &self) {
    CMapV dy{self.grad.data(), out_n};
    if (weight->requires_grad)
      MapRM{weight->grad_buffer().data(), out_n, in_n}.noalias() +=
          dy * CMapV{x->value.data(), in_n}.transpose();
    if (bias && bias->requires_grad) MapV{bias->grad_buffer().data(), out_n} += dy;
    if (x->requires_grad)
      MapV{x->grad_buffer().data(), in_n}.noalias() +=
          CMapRM{weight->value.data(), out_n, in_n}.transpose() * dy;
  });
}

Var custom_scalar(const std::vector<Var> &inputs, double value,
                  std::vector<Tensor> input_grads) {
  if (inputs.size() != input_grads.size() || inputs.empty())
    throw Error{ErrorCode::kShape, "custom_scalar: one gradient per input expected"};
  bool rg = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (input_grads[i].size() != inputs[i]->value.size())
      throw Error{ErrorCode::kShape, "custom_scalar: gradient size mismatch"};
    rg = rg || inputs[i]->requires_grad;
  }
  auto grads = std::make_shared<std::vector<Tensor>>(std::move(input_grads));
  return inputs[0]->tape->make(Tensor{{1}, {value}}, rg, [inputs, grads](Node &self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i]->requires_grad) continue;
      Tensor &d = inputs[i]->grad_buffer();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += g * (*grads)[i][k];
    }
  });
}

Var weighted_sum(const std::vector<Var> &scalars, const std::vector<double> &weights) {
  if (scalars.empty() || scalars.size() != weights.size())
    throw Error{ErrorCode::kShape, "weighted_sum: one weight per scalar expected"};
  double v = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i]->value.size() != 1) throw Error{ErrorCode::kShape, "weighted_sum of non-scalar"};
    v += weights[i] * scalars[i]->value[0];
    rg = rg || scalars[i]->requires_grad;
  }
  return scalars[0]->tape->make(Tensor{{1}, {v}}, rg, [scalars, weights](Node &self) {
    for (std::size_t i = 0; i < scalars.size(); ++i)
      if (scalars[i]->requires_grad) scalars[i]->grad_buffer()[0] += weights[i] * self.grad[0];
  });
}

}  // namespace ag

}  // namespace vp
