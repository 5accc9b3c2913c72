#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "videopose/tensor.hpp"

namespace vp {

struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

// Ordered, name-addressable collection of trainable tensors.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value, bool frozen = false);
  std::size_t size() const { return params_.size(); }
  Parameter &operator[](std::size_t i) { return params_[i]; }
  const Parameter &operator[](std::size_t i) const { return params_[i]; }
  std::size_t index_of(const std::string &name) const;
  bool contains(const std::string &name) const { return index_.count(name) != 0; }
  std::vector<Parameter> &all() { return params_; }
  const std::vector<Parameter> &all() const { return params_; }
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradients aligned with a ParameterSet; an empty tensor means "no gradient".
using Gradients = std::vector<Tensor>;
Gradients zero_gradients(const ParameterSet &params);
void accumulate(Gradients &into, const Gradients &from, double scale = 1.0);
double global_norm(const Gradients &grads);

class Tape;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  int param_index = -1;
  Tape *tape = nullptr;
  std::function<void(Node &)> backward;

  Tensor &grad_buffer();
};

using Var = Node *;

// Records operations so that backward() can replay them in reverse order.
// Nodes live as long as the tape.
class Tape {
 public:
  Var constant(Tensor value);
  // A tape binds to the first parameter set it sees.
  Var parameter(const ParameterSet &params, std::size_t index);
  Var make(Tensor value, bool requires_grad, std::function<void(Node &)> backward);

  // Seeds d(root)/d(root) = 1 and accumulates parameter gradients into `out`
  // (which must be sized like the parameter set).
  void backward(Var root, Gradients &out);
  std::size_t node_count() const { return nodes_.size(); }
  // Drops every node except the cached parameter nodes, for streaming
  // inference; parameter values are not re-read afterwards.
  void clear_keep_parameters();

 private:
  std::deque<std::unique_ptr<Node>> nodes_;
  std::unordered_map<std::size_t, Var> param_nodes_;
  const ParameterSet *param_set_ = nullptr;
};

// Precomputed bilinear sampling: output cell o reads
// sum_k weight[k] * input[src[k]] for k in [offsets[o], offsets[o + 1]),
// identically for every channel.
struct ResampleMap {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<int> offsets{0};
  std::vector<int> src;
  std::vector<double> weight;

  // Adds one bilinear sample at continuous index coordinates (y, x); samples
  // beyond one cell outside the grid contribute nothing, others clamp.
  void add_bilinear(double y, double x, double scale);
  // Same, but any sample outside [0, in-1] contributes zero.
  void add_bilinear_zero_pad(double y, double x, double scale);
  void finish_cell() { offsets.push_back(static_cast<int>(src.size())); }
};

ResampleMap upsample_map(int in_h, int in_w, int out_h, int out_w);

namespace ag {

Var conv2d(Var x, Var weight, Var bias, int pad);
Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
// scale * x + shift
Var affine(Var x, double scale, double shift);
Var concat(const std::vector<Var> &parts);  // along dim 0
Var slice(Var x, int begin, int end);        // along dim 0
Var reshape(Var x, std::vector<int> shape);
Var maxpool2(Var x);
Var resample(Var x, const ResampleMap &map);
Var linear(Var x, Var weight, Var bias);
// Scalar node with externally computed value and input gradients.
Var custom_scalar(const std::vector<Var> &inputs, double value,
                  std::vector<Tensor> input_grads);
// Weighted sum of scalar nodes.
Var weighted_sum(const std::vector<Var> &scalars, const std::vector<double> &weights);

}  // namespace ag

// He-style initialisation helpers (deterministic for a given engine state).
Tensor random_normal(std::vector<int> shape, double stddev, std::mt19937_64 &rng);

}  // namespace vp
