#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace dsts {

int64_t shape_numel(const std::vector<int>& shape);

// Dense row-major float32 tensor with value semantics. Rank up to 8,
// extents strictly positive. Copies copy the buffer; there are no views.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v);
  static Tensor vec(std::initializer_list<float> v);  // rank-1
  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  bool empty() const { return data_.empty(); }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(float v);

  bool all_finite() const;
  // Throws NumericError naming `what` when any element is NaN/Inf.
  void require_finite(const std::string& what) const;

  std::string shape_str() const;  // "4x64x64"

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

// Scalar reductions used by metrics and tests.
float tmean(const Tensor& t);
float tmin(const Tensor& t);
float tmax(const Tensor& t);
// Mean absolute difference; shapes must match.
float l1_mean(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace dsts
