#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "iscl/common.hpp"
#include "iscl/rng.hpp"

namespace iscl {

// Dense row-major float32 tensor. Convolutional data uses NCHW layout.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0f);
  }

  Tensor(std::vector<int64_t> shape, float fill_value) : Tensor(std::move(shape)) {
    fill(fill_value);
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, float v) {
    return Tensor(std::move(shape), v);
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<float> values) {
    Tensor t;
    require(count(shape) == static_cast<int64_t>(values.size()), ErrorCategory::Shape,
            "Tensor::from: value count does not match shape");
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  static Tensor randn(std::vector<int64_t> shape, RngStream& rng, float stddev = 1.0f,
                      float mean = 0.0f) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = mean + stddev * static_cast<float>(rng.normal());
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  int64_t dim(size_t i) const {
    require(i < shape_.size(), ErrorCategory::Shape, "Tensor::dim: axis out of range");
    return shape_[i];
  }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool defined() const { return !shape_.empty() || !data_.empty(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(float v) {
    for (auto& x : data_) x = v;
  }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  float min() const {
    float m = data_.empty() ? 0.0f : data_[0];
    for (float v : data_) m = v < m ? v : m;
    return m;
  }

  float max() const {
    float m = data_.empty() ? 0.0f : data_[0];
    for (float v : data_) m = v > m ? v : m;
    return m;
  }

  double sum() const {
    double s = 0.0;
    for (float v : data_) s += v;
    return s;
  }

  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

  // Squared L2 norm in double accumulation.
  double sqnorm() const {
    double s = 0.0;
    for (float v : data_) s += static_cast<double>(v) * v;
    return s;
  }

  uint64_t byte_hash() const {
    uint64_t h = fnv1a(shape_.data(), shape_.size() * sizeof(int64_t));
    return fnv1a(data_.data(), data_.size() * sizeof(float), h);
  }

  static int64_t count(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      require(d >= 0, ErrorCategory::Shape, "Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

}  // namespace iscl
