#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace siab {

/// NCHW extent of a dense activation.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return plane() * c; }
  std::size_t numel() const { return sample_size() * n; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense float32 NCHW tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  std::span<float> sample(int n) {
    return {data_.data() + n * shape_.sample_size(), shape_.sample_size()};
  }
  std::span<const float> sample(int n) const {
    return {data_.data() + n * shape_.sample_size(), shape_.sample_size()};
  }
  std::span<float> plane(int n, int c) {
    return {data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(), shape_.plane()};
  }
  std::span<const float> plane(int n, int c) const {
    return {data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(), shape_.plane()};
  }

  float& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  float at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  void fill(float v);

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Largest elementwise absolute difference; throws on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace siab
