#pragma once

// Independent reference computations used by the tests. Nothing here calls into the
// library's FFT or solver code.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "ptyfed/field.hpp"
#include "ptyfed/ptycho.hpp"

namespace oracle {

using ptyfed::ComplexField2D;
using ptyfed::cplx;

// Direct O(N^2) summation of the unnormalized 2D DFT.
inline ComplexField2D naive_dft(const ComplexField2D& in) {
  const std::size_t h = in.height(), w = in.width();
  ComplexField2D out(h, w);
  for (std::size_t k = 0; k < h; ++k) {
    for (std::size_t l = 0; l < w; ++l) {
      cplx acc{};
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double angle = -2.0 * std::numbers::pi *
                               (static_cast<double>(k * y) / static_cast<double>(h) +
                                static_cast<double>(l * x) / static_cast<double>(w));
          acc += in(y, x) * std::polar(1.0, angle);
        }
      }
      out(k, l) = acc;
    }
  }
  return out;
}

// Patch by explicit element-wise loop copy.
inline ComplexField2D loop_patch(const ComplexField2D& object, std::int32_t y0, std::int32_t x0, std::size_t ph,
                                 std::size_t pw) {
  ComplexField2D out(ph, pw);
  for (std::size_t y = 0; y < ph; ++y) {
    for (std::size_t x = 0; x < pw; ++x) out(y, x) = object(static_cast<std::size_t>(y0) + y, static_cast<std::size_t>(x0) + x);
  }
  return out;
}

// Data-fidelity functional evaluated with the naive DFT.
inline double naive_residual(const ptyfed::ptycho::ScanDataset& d, const ComplexField2D& object,
                             const ComplexField2D& probe) {
  double r = 0.0;
  for (std::size_t j = 0; j < d.count(); ++j) {
    auto patch = loop_patch(object, d.positions[j].y, d.positions[j].x, probe.height(), probe.width());
    ComplexField2D exit(probe.height(), probe.width());
    for (std::size_t i = 0; i < exit.size(); ++i) exit.data()[i] = probe.data()[i] * patch.data()[i];
    const auto far = naive_dft(exit);
    const auto frame = d.frame(j);
    for (std::size_t k = 0; k < far.size(); ++k) {
      const double diff = std::abs(far.data()[k]) - std::sqrt(frame[k]);
      r += diff * diff;
    }
  }
  return r;
}

// Central finite differences of f with respect to the real and imaginary part of every
// entry of `field`, packed as dF/dRe + i dF/dIm.
inline ComplexField2D finite_difference(ComplexField2D field, const std::function<double(const ComplexField2D&)>& f,
                                        double h) {
  ComplexField2D grad(field.shape());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const cplx saved = field.data()[i];
    field.data()[i] = saved + cplx(h, 0);
    const double re_plus = f(field);
    field.data()[i] = saved - cplx(h, 0);
    const double re_minus = f(field);
    field.data()[i] = saved + cplx(0, h);
    const double im_plus = f(field);
    field.data()[i] = saved - cplx(0, h);
    const double im_minus = f(field);
    field.data()[i] = saved;
    grad.data()[i] = cplx((re_plus - re_minus) / (2 * h), (im_plus - im_minus) / (2 * h));
  }
  return grad;
}

// ||a - b|| / ||b|| in the Euclidean norm.
inline double relative_l2(const ComplexField2D& a, const ComplexField2D& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a.data()[i] - b.data()[i]);
    den += std::norm(b.data()[i]);
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline ComplexField2D random_field(std::size_t h, std::size_t w, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  ComplexField2D f(h, w);
  for (auto& v : f.data()) v = cplx(n(rng), n(rng));
  return f;
}

// Row-major raster counted with explicit loops.
inline std::vector<ptyfed::ptycho::ScanPosition> counted_raster(std::size_t oh, std::size_t ow, std::size_t ph,
                                                                std::size_t pw, std::size_t step) {
  std::vector<ptyfed::ptycho::ScanPosition> out;
  for (std::size_t y = 0; y + ph <= oh; y += step) {
    for (std::size_t x = 0; x + pw <= ow; x += step) {
      out.push_back({static_cast<std::int32_t>(y), static_cast<std::int32_t>(x)});
    }
  }
  return out;
}

}  // namespace oracle
