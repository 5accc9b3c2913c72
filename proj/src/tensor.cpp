#include "videopose/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "videopose/error.hpp"

namespace vp {

std::size_t shape_size(const std::vector<int> &shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error{ErrorCode::kShape, "negative tensor dimension"};
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_{std::move(shape)}, data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_{std::move(shape)}, data_{std::move(data)} {
  if (data_.size() != shape_size(shape_))
    throw Error{ErrorCode::kShape, "tensor data does not match shape " + shape_string()};
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_size(shape) != data_.size())
    throw Error{ErrorCode::kShape, "cannot reshape " + shape_string()};
  return Tensor{std::move(shape), data_};
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ')';
  return os.str();
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

}  // namespace vp
