#pragma once

#include <span>

#include "ptyfed/field.hpp"

namespace ptyfed::fft {

// Unnormalized 2D forward DFT: X[k,l] = sum_{y,x} x[y,x] exp(-2 pi i (k y / H + l x / W)).
void forward_2d(Shape shape, std::span<const cplx> in, std::span<cplx> out);

// Inverse 2D DFT including the 1/(H*W) factor, so inverse(forward(x)) == x.
void inverse_2d(Shape shape, std::span<const cplx> in, std::span<cplx> out);

ComplexField2D forward_2d(const ComplexField2D& in);
ComplexField2D inverse_2d(const ComplexField2D& in);

}  // namespace ptyfed::fft
