#include "adaptkit/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "adaptkit/errors.hpp"

namespace adaptkit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " elements");
  }
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) throw DimensionError("axis out of range for " + shape_str(shape_));
  return shape_[i];
}

float& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::item() const {
  if (data_.size() != 1) throw ContractViolation("item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) {
  for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const noexcept {
  for (float x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor Tensor::slice_batch(std::size_t n) const {
  if (shape_.empty() || n >= shape_[0]) throw DimensionError("batch index out of range");
  const std::size_t stride = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = 1;
  return Tensor(std::move(s), std::vector<float>(data_.begin() + n * stride, data_.begin() + (n + 1) * stride));
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("stack of zero tensors");
  const Shape& inner = items.front().shape();
  Shape s;
  s.push_back(items.size());
  std::size_t start = (!inner.empty() && inner[0] == 1) ? 1 : 0;
  s.insert(s.end(), inner.begin() + start, inner.end());
  std::vector<float> data;
  data.reserve(items.size() * items.front().numel());
  for (const auto& t : items) {
    if (t.shape() != inner) throw DimensionError("stack of mismatched shapes");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(s), std::move(data));
}

Tensor Tensor::concat_batch(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("concat of zero tensors");
  Shape s = items.front().shape();
  if (s.empty()) throw DimensionError("concat of scalars");
  s[0] = 0;
  std::vector<float> data;
  for (const auto& t : items) {
    if (t.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), t.shape().begin() + 1)) {
      throw DimensionError("concat of mismatched shapes");
    }
    s[0] += t.dim(0);
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(s), std::move(data));
}

Tensor Tensor::gather_batch(std::span<const std::size_t> indices) const {
  if (shape_.empty()) throw DimensionError("gather on scalar");
  const std::size_t stride = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = indices.size();
  std::vector<float> out(indices.size() * stride);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= shape_[0]) throw DimensionError("gather index out of range");
    std::memcpy(out.data() + i * stride, data_.data() + indices[i] * stride, stride * sizeof(float));
  }
  return Tensor(std::move(s), std::move(out));
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

}  // namespace adaptkit
