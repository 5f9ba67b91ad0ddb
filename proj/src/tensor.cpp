#include "siab/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "siab/error.hpp"

namespace siab {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) +
         ", " + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw InvalidInput("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw InvalidInput("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  }
  return worst;
}

}  // namespace siab
