#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace ptyfed {

using cplx = std::complex<double>;

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels() const noexcept { return height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Axis-aligned pixel rectangle [y0, y1) x [x0, x1).
struct Rect {
  std::size_t y0 = 0;
  std::size_t x0 = 0;
  std::size_t y1 = 0;
  std::size_t x1 = 0;

  std::size_t height() const noexcept { return y1 - y0; }
  std::size_t width() const noexcept { return x1 - x0; }
  bool empty() const noexcept { return y1 <= y0 || x1 <= x0; }
  bool contains(const Rect& other) const noexcept {
    return other.y0 >= y0 && other.y1 <= y1 && other.x0 >= x0 && other.x1 <= x1;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

// Dense row-major complex array. Holds both the object transmission and the probe.
class ComplexField2D {
 public:
  ComplexField2D() = default;
  ComplexField2D(std::size_t height, std::size_t width, cplx fill = {});
  explicit ComplexField2D(Shape shape, cplx fill = {}) : ComplexField2D(shape.height, shape.width, fill) {}
  ComplexField2D(std::size_t height, std::size_t width, std::vector<cplx> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  Shape shape() const noexcept { return {height_, width_}; }

  cplx& operator()(std::size_t y, std::size_t x) noexcept { return data_[y * width_ + x]; }
  const cplx& operator()(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x]; }

  std::span<cplx> data() noexcept { return data_; }
  std::span<const cplx> data() const noexcept { return data_; }

  std::span<cplx> row(std::size_t y) noexcept { return {data_.data() + y * width_, width_}; }
  std::span<const cplx> row(std::size_t y) const noexcept { return {data_.data() + y * width_, width_}; }

  void fill(cplx value);
  bool all_finite() const noexcept;

  // Sum of |v|^2 over all pixels.
  double power() const noexcept;

  friend bool operator==(const ComplexField2D&, const ComplexField2D&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<cplx> data_;
};

// max_i |a_i - b_i| / max_i |b_i|; returns the absolute difference when b is identically zero.
double max_relative_difference(const ComplexField2D& a, const ComplexField2D& b);

}  // namespace ptyfed
