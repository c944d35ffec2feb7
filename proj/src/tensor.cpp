#include "dsts/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dsts/common.hpp"

namespace dsts {

int64_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw ConfigError("tensor shape must have rank >= 1");
  if (shape.size() > 8) throw ConfigError("tensor rank > 8");
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ConfigError("tensor extent must be positive");
    if (n > std::numeric_limits<int64_t>::max() / e) throw ConfigError("tensor extent overflow");
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ConfigError("tensor data length does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<int> shape, float v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::vec(std::initializer_list<float> v) {
  return Tensor({static_cast<int>(v.size())}, std::vector<float>(v));
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw ConfigError("tensor dim index out of range");
  return shape_[static_cast<size_t>(i)];
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (float x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) throw NumericError("non-finite values in " + what);
}

std::string Tensor::shape_str() const {
  std::string s;
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape_[i]);
  }
  return s;
}

float tmean(const Tensor& t) {
  if (t.empty()) throw ConfigError("tmean of empty tensor");
  double acc = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) acc += t[i];
  return static_cast<float>(acc / static_cast<double>(t.numel()));
}

float tmin(const Tensor& t) {
  if (t.empty()) throw ConfigError("tmin of empty tensor");
  float m = t[0];
  for (int64_t i = 1; i < t.numel(); ++i) m = std::min(m, t[i]);
  return m;
}

float tmax(const Tensor& t) {
  if (t.empty()) throw ConfigError("tmax of empty tensor");
  float m = t[0];
  for (int64_t i = 1; i < t.numel(); ++i) m = std::max(m, t[i]);
  return m;
}

float l1_mean(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ConfigError("l1_mean shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::fabs(static_cast<double>(a[i]) - b[i]);
  return static_cast<float>(acc / static_cast<double>(a.numel()));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace dsts
