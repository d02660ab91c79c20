#include "ptyfed/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "ptyfed/errors.hpp"

namespace ptyfed::fft {
namespace {

// The FFTW planner is not thread-safe; execution of an existing plan on new arrays is.
class PlanCache {
 public:
  ~PlanCache() {
    std::lock_guard lock(mutex_);
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(Shape shape, int sign, bool in_place) {
    const auto key = std::make_tuple(shape.height, shape.width, sign, in_place);
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;

    const auto n = shape.pixels();
    auto* a = fftw_alloc_complex(n);
    auto* b = in_place ? a : fftw_alloc_complex(n);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(shape.height), static_cast<int>(shape.width), a, b,
                                      sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!in_place) fftw_free(b);
    fftw_free(a);
    if (plan == nullptr) throw Error("fftw: failed to create plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int, bool>, fftw_plan> plans_;
};

PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

void execute(Shape shape, std::span<const cplx> in, std::span<cplx> out, int sign) {
  if (in.size() != shape.pixels() || out.size() != shape.pixels()) {
    throw ShapeError("fft: buffer length does not match " + std::to_string(shape.height) + "x" +
                     std::to_string(shape.width));
  }
  if (shape.pixels() == 0) return;
  const bool in_place = in.data() == out.data();
  fftw_plan plan = plans().get(shape, sign, in_place);
  // FFTW leaves the input of an out-of-place complex transform untouched.
  auto* src = reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in.data()));
  auto* dst = reinterpret_cast<fftw_complex*>(out.data());
  fftw_execute_dft(plan, src, dst);
}

}  // namespace

void forward_2d(Shape shape, std::span<const cplx> in, std::span<cplx> out) {
  execute(shape, in, out, FFTW_FORWARD);
}

void inverse_2d(Shape shape, std::span<const cplx> in, std::span<cplx> out) {
  execute(shape, in, out, FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(shape.pixels());
  for (auto& v : out) v *= scale;
}

ComplexField2D forward_2d(const ComplexField2D& in) {
  ComplexField2D out(in.shape());
  forward_2d(in.shape(), in.data(), out.data());
  return out;
}

ComplexField2D inverse_2d(const ComplexField2D& in) {
  ComplexField2D out(in.shape());
  inverse_2d(in.shape(), in.data(), out.data());
  return out;
}

}  // namespace ptyfed::fft
