#include "ptyfed/field.hpp"

#include <algorithm>
#include <cmath>

#include "ptyfed/errors.hpp"

namespace ptyfed {

ComplexField2D::ComplexField2D(std::size_t height, std::size_t width, cplx fill)
    : height_(height), width_(width), data_(height * width, fill) {}

ComplexField2D::ComplexField2D(std::size_t height, std::size_t width, std::vector<cplx> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != height_ * width_) {
    throw ShapeError("field data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(height_) + "x" + std::to_string(width_));
  }
}

void ComplexField2D::fill(cplx value) { std::fill(data_.begin(), data_.end(), value); }

bool ComplexField2D::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](const cplx& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
}

double ComplexField2D::power() const noexcept {
  double total = 0.0;
  for (const auto& v : data_) total += std::norm(v);
  return total;
}

double max_relative_difference(const ComplexField2D& a, const ComplexField2D& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_relative_difference: shape mismatch");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
    scale = std::max(scale, std::abs(b.data()[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

}  // namespace ptyfed
