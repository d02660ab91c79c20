#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ptyfed/errors.hpp"
#include "ptyfed/fft.hpp"
#include "ptyfed/ptycho.hpp"

namespace ptyfed::ptycho {

ReconResult reconstruct_epie(const ScanDataset& dataset, const ComplexField2D& initial_object,
                             const ComplexField2D& initial_probe, const ReconConfig& config) {
  config.validate();
  if (initial_object.shape() != dataset.object_shape || initial_probe.shape() != dataset.probe_shape) {
    throw ShapeError("reconstruct_epie: initial iterate does not match the dataset geometry");
  }
  const auto shape = dataset.probe_shape;
  const std::size_t n = shape.pixels();

  ReconResult result{initial_object, initial_probe, {}, 0, 0.0};
  std::vector<std::size_t> order(dataset.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);

  std::vector<cplx> patch(n), exit_wave(n), far_field(n), delta(n);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    if (config.stop.stop_requested()) throw CancelledError("reconstruction cancelled at iteration " + std::to_string(it));
    std::shuffle(order.begin(), order.end(), rng);
    double r = 0.0;
    for (const auto j : order) {
      const auto& pos = dataset.positions[j];
      const auto y0 = static_cast<std::size_t>(pos.y);
      const auto x0 = static_cast<std::size_t>(pos.x);
      for (std::size_t ky = 0; ky < shape.height; ++ky) {
        for (std::size_t kx = 0; kx < shape.width; ++kx) {
          patch[ky * shape.width + kx] = result.object(y0 + ky, x0 + kx);
        }
      }
      for (std::size_t k = 0; k < n; ++k) exit_wave[k] = result.probe.data()[k] * patch[k];
      fft::forward_2d(shape, exit_wave, far_field);
      const auto frame = dataset.frame(j);
      for (std::size_t k = 0; k < n; ++k) {
        const double amplitude = std::abs(far_field[k]);
        const double measured = std::sqrt(frame[k]);
        r += (amplitude - measured) * (amplitude - measured);
        const cplx phase = amplitude > 0.0 ? far_field[k] / amplitude : cplx{1.0, 0.0};
        far_field[k] = measured * phase - far_field[k];
      }
      fft::inverse_2d(shape, far_field, delta);

      double probe_peak = 0.0, patch_peak = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        probe_peak = std::max(probe_peak, std::norm(result.probe.data()[k]));
        patch_peak = std::max(patch_peak, std::norm(patch[k]));
      }
      const double object_step = probe_peak > 0.0 ? config.step_size / probe_peak : 0.0;
      const double probe_step = patch_peak > 0.0 ? config.step_size / patch_peak : 0.0;
      for (std::size_t ky = 0; ky < shape.height; ++ky) {
        for (std::size_t kx = 0; kx < shape.width; ++kx) {
          const std::size_t k = ky * shape.width + kx;
          result.object(y0 + ky, x0 + kx) += object_step * std::conj(result.probe.data()[k]) * delta[k];
        }
      }
      if (config.recover_probe) {
        for (std::size_t k = 0; k < n; ++k) result.probe.data()[k] += probe_step * std::conj(patch[k]) * delta[k];
      }
    }
    if (!std::isfinite(r) || !result.object.all_finite() || !result.probe.all_finite()) {
      throw DivergenceError(it, "reconstruction diverged at iteration " + std::to_string(it));
    }
    result.residual_history.push_back(r);
    ++result.iterations_run;
  }
  result.final_residual = residual(dataset, result.object, result.probe);
  return result;
}

}  // namespace ptyfed::ptycho
