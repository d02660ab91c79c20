#include "ptyfed/ptycho.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ptyfed/errors.hpp"
#include "ptyfed/fft.hpp"
#include "ptyfed/partition.hpp"

namespace ptyfed::ptycho {
namespace {

void require_same_shape(Shape a, Shape b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " does not match " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

void require_consistent(const ScanDataset& dataset, const ComplexField2D& object, const ComplexField2D& probe) {
  require_same_shape(object.shape(), dataset.object_shape, "object");
  require_same_shape(probe.shape(), dataset.probe_shape, "probe");
  if (dataset.frames.size() != dataset.count() * dataset.probe_shape.pixels()) {
    throw ShapeError("dataset frames do not match count x probe pixels");
  }
}

// Per-thread scratch for the exit wave and its transform.
struct Scratch {
  std::vector<cplx> wave;
  std::vector<cplx> far_field;

  void resize(std::size_t n) {
    wave.resize(n);
    far_field.resize(n);
  }
};

Scratch& scratch(std::size_t n) {
  thread_local Scratch s;
  s.resize(n);
  return s;
}

// Writes probe * patch_j into wave and its transform into far_field.
void propagate(const ScanDataset& dataset, std::size_t j, const ComplexField2D& object, const ComplexField2D& probe,
               Scratch& s) {
  const auto shape = dataset.probe_shape;
  const auto& pos = dataset.positions[j];
  for (std::size_t ky = 0; ky < shape.height; ++ky) {
    const auto obj_row = object.row(static_cast<std::size_t>(pos.y) + ky);
    const auto probe_row = probe.row(ky);
    for (std::size_t kx = 0; kx < shape.width; ++kx) {
      s.wave[ky * shape.width + kx] = probe_row[kx] * obj_row[static_cast<std::size_t>(pos.x) + kx];
    }
  }
  fft::forward_2d(shape, s.wave, s.far_field);
}

double position_residual(const ScanDataset& dataset, std::size_t j, const ComplexField2D& object,
                         const ComplexField2D& probe) {
  auto& s = scratch(dataset.probe_shape.pixels());
  propagate(dataset, j, object, probe, s);
  const auto frame = dataset.frame(j);
  double r = 0.0;
  for (std::size_t k = 0; k < frame.size(); ++k) {
    const double d = std::abs(s.far_field[k]) - std::sqrt(frame[k]);
    r += d * d;
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------------------
// Geometry and dataset bookkeeping

void ScanPositions::validate(Shape object_shape, Shape probe_shape) const {
  if (probe_shape.height > object_shape.height || probe_shape.width > object_shape.width) {
    throw BoundsError("probe does not fit inside the object");
  }
  const auto max_y = static_cast<std::int64_t>(object_shape.height - probe_shape.height);
  const auto max_x = static_cast<std::int64_t>(object_shape.width - probe_shape.width);
  for (std::size_t j = 0; j < points.size(); ++j) {
    const auto& p = points[j];
    if (p.y < 0 || p.x < 0 || p.y > max_y || p.x > max_x) {
      throw BoundsError("scan position " + std::to_string(j) + " at (" + std::to_string(p.y) + ", " +
                        std::to_string(p.x) + ") places the probe outside the object");
    }
  }
}

Rect ScanPositions::footprint(std::size_t j, Shape probe_shape) const {
  const auto& p = points.at(j);
  const auto y = static_cast<std::size_t>(p.y);
  const auto x = static_cast<std::size_t>(p.x);
  return {y, x, y + probe_shape.height, x + probe_shape.width};
}

std::string to_string(NoiseModel noise) { return noise == NoiseModel::none ? "none" : "poisson"; }

NoiseModel noise_from_string(const std::string& name) {
  if (name == "none") return NoiseModel::none;
  if (name == "poisson") return NoiseModel::poisson;
  throw ConfigError("unknown noise model '" + name + "'");
}

void ScanDataset::validate() const {
  if (frames.size() != count() * probe_shape.pixels()) {
    throw ShapeError("dataset '" + view_id + "': " + std::to_string(frames.size()) +
                     " intensities for " + std::to_string(count()) + " positions of " +
                     std::to_string(probe_shape.pixels()) + " pixels");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!(frames[i] >= 0.0) || !std::isfinite(frames[i])) {
      throw Error("dataset '" + view_id + "': frame " + std::to_string(i / std::max<std::size_t>(1, probe_shape.pixels())) +
                  " holds a negative or non-finite intensity");
    }
  }
  positions.validate(object_shape, probe_shape);
  if (probe && probe->shape() != probe_shape) throw ShapeError("dataset probe shape mismatch");
  if (truth_object && truth_object->shape() != object_shape) throw ShapeError("dataset truth object shape mismatch");
}

std::string to_string(Solver solver) { return solver == Solver::gradient_descent ? "gradient-descent" : "epie"; }

Solver solver_from_string(const std::string& name) {
  if (name == "gradient-descent" || name == "gd") return Solver::gradient_descent;
  if (name == "epie") return Solver::epie;
  throw ConfigError("unknown solver '" + name + "'");
}

void ReconConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (partitions < 1) throw ConfigError("partitions must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("step_size must be > 0");
  if (solver == Solver::epie && partitions > 1) {
    throw ConfigError("the ePIE solver is sequential and does not support partitions > 1");
  }
}

// ---------------------------------------------------------------------------------------
// Forward model

ComplexField2D extract_patch(const ComplexField2D& object, std::size_t pos_index, const ScanPositions& positions,
                             Shape probe_shape) {
  if (pos_index >= positions.count()) {
    throw BoundsError("scan position " + std::to_string(pos_index) + " does not exist");
  }
  const auto& p = positions[pos_index];
  if (p.y < 0 || p.x < 0 || static_cast<std::size_t>(p.y) + probe_shape.height > object.height() ||
      static_cast<std::size_t>(p.x) + probe_shape.width > object.width()) {
    throw BoundsError("scan position " + std::to_string(pos_index) + " places the patch outside the object");
  }
  ComplexField2D patch(probe_shape);
  for (std::size_t ky = 0; ky < probe_shape.height; ++ky) {
    const auto src = object.row(static_cast<std::size_t>(p.y) + ky).subspan(static_cast<std::size_t>(p.x),
                                                                             probe_shape.width);
    std::copy(src.begin(), src.end(), patch.row(ky).begin());
  }
  return patch;
}

ComplexField2D forward(const ComplexField2D& probe, const ComplexField2D& patch) {
  require_same_shape(patch.shape(), probe.shape(), "forward");
  ComplexField2D wave(probe.shape());
  for (std::size_t i = 0; i < wave.size(); ++i) wave.data()[i] = probe.data()[i] * patch.data()[i];
  return fft::forward_2d(wave);
}

ScanDataset simulate_diffraction(const ComplexField2D& object, const ComplexField2D& probe,
                                 const ScanPositions& positions, double photon_scale, NoiseModel noise,
                                 std::uint64_t seed) {
  if (!(photon_scale >= 0.0)) throw ConfigError("photon_scale must be >= 0");
  positions.validate(object.shape(), probe.shape());

  ScanDataset dataset;
  dataset.positions = positions;
  dataset.probe_shape = probe.shape();
  dataset.object_shape = object.shape();
  dataset.photon_scale = photon_scale;
  dataset.noise = noise;
  dataset.seed = seed;
  dataset.frames.assign(positions.count() * probe.size(), 0.0);

  std::mt19937_64 rng(seed);
  auto& s = scratch(probe.size());
  for (std::size_t j = 0; j < positions.count(); ++j) {
    propagate(dataset, j, object, probe, s);
    auto frame = dataset.frame(j);
    for (std::size_t k = 0; k < frame.size(); ++k) {
      const double intensity = photon_scale * std::norm(s.far_field[k]);
      if (noise == NoiseModel::poisson) {
        frame[k] = intensity > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(intensity)(rng)) : 0.0;
      } else {
        frame[k] = intensity;
      }
    }
  }
  return dataset;
}

double residual(const ScanDataset& dataset, const ComplexField2D& object, const ComplexField2D& probe) {
  require_consistent(dataset, object, probe);
  double total = 0.0;
  for (std::size_t j = 0; j < dataset.count(); ++j) total += position_residual(dataset, j, object, probe);
  return total;
}

// ---------------------------------------------------------------------------------------
// Corrections and updates

namespace detail {

double accumulate_position(const ScanDataset& dataset, std::size_t j, const ComplexField2D& object,
                           const ComplexField2D& probe, bool with_probe, CorrectionBuffers& buffers) {
  const auto shape = dataset.probe_shape;
  auto& s = scratch(shape.pixels());
  propagate(dataset, j, object, probe, s);

  // Modulus replacement: far_field becomes sqrt(d) * phase(Psi) - Psi.
  const auto frame = dataset.frame(j);
  double r = 0.0;
  for (std::size_t k = 0; k < frame.size(); ++k) {
    const cplx psi = s.far_field[k];
    const double amplitude = std::abs(psi);
    const double measured = std::sqrt(frame[k]);
    const double d = amplitude - measured;
    r += d * d;
    const cplx phase = amplitude > 0.0 ? psi / amplitude : cplx{1.0, 0.0};
    s.far_field[k] = measured * phase - psi;
  }
  // wave <- exit-wave correction delta_j; the exit wave itself is recomputed below.
  fft::inverse_2d(shape, s.far_field, s.wave);

  const auto& pos = dataset.positions[j];
  const std::size_t oy = static_cast<std::size_t>(pos.y) - buffers.origin_y;
  const std::size_t ox = static_cast<std::size_t>(pos.x) - buffers.origin_x;
  for (std::size_t ky = 0; ky < shape.height; ++ky) {
    auto acc_row = buffers.object.row(oy + ky);
    const auto probe_row = probe.row(ky);
    const auto obj_row = object.row(static_cast<std::size_t>(pos.y) + ky);
    for (std::size_t kx = 0; kx < shape.width; ++kx) {
      const cplx delta = s.wave[ky * shape.width + kx];
      acc_row[ox + kx] += std::conj(probe_row[kx]) * delta;
      if (with_probe) {
        buffers.probe(ky, kx) += std::conj(obj_row[static_cast<std::size_t>(pos.x) + kx]) * delta;
      }
    }
  }
  return r;
}

void apply_corrections(ComplexField2D& object, ComplexField2D& probe, const ComplexField2D& object_correction,
                       const ComplexField2D& probe_correction, StepLengths steps, bool recover_probe) {
  for (std::size_t i = 0; i < object.size(); ++i) object.data()[i] += steps.object * object_correction.data()[i];
  if (recover_probe) {
    for (std::size_t i = 0; i < probe.size(); ++i) probe.data()[i] += steps.probe * probe_correction.data()[i];
  }
}

}  // namespace detail

ResidualGradient residual_gradient(const ScanDataset& dataset, const ComplexField2D& object,
                                   const ComplexField2D& probe) {
  require_consistent(dataset, object, probe);
  detail::CorrectionBuffers buffers{ComplexField2D(object.shape()), 0, 0, ComplexField2D(probe.shape())};
  double r = 0.0;
  for (std::size_t j = 0; j < dataset.count(); ++j) {
    r += detail::accumulate_position(dataset, j, object, probe, true, buffers);
  }
  // Corrections are -(1/N) F^H (Psi - sqrt(d) phase), conj-weighted; the real gradient is
  // twice the Wirtinger derivative d/dconj, i.e. -2 N times the summed correction.
  const double scale = -2.0 * static_cast<double>(dataset.probe_shape.pixels());
  ResidualGradient g{std::move(buffers.object), std::move(buffers.probe), r};
  for (auto& v : g.object.data()) v *= scale;
  for (auto& v : g.probe.data()) v *= scale;
  return g;
}

std::vector<double> illumination(const ScanPositions& positions, Shape object_shape, const ComplexField2D& probe) {
  std::vector<double> map(object_shape.pixels(), 0.0);
  for (std::size_t j = 0; j < positions.count(); ++j) {
    const auto& p = positions[j];
    for (std::size_t ky = 0; ky < probe.height(); ++ky) {
      for (std::size_t kx = 0; kx < probe.width(); ++kx) {
        map[(static_cast<std::size_t>(p.y) + ky) * object_shape.width + static_cast<std::size_t>(p.x) + kx] +=
            std::norm(probe(ky, kx));
      }
    }
  }
  return map;
}

StepLengths normalized_steps(const ScanDataset& dataset, const ComplexField2D& object, const ComplexField2D& probe,
                             double step_size) {
  require_consistent(dataset, object, probe);
  const auto object_map = illumination(dataset.positions, dataset.object_shape, probe);
  const double object_peak = object_map.empty() ? 0.0 : *std::max_element(object_map.begin(), object_map.end());

  std::vector<double> probe_map(probe.size(), 0.0);
  for (std::size_t j = 0; j < dataset.count(); ++j) {
    const auto& p = dataset.positions[j];
    for (std::size_t ky = 0; ky < probe.height(); ++ky) {
      for (std::size_t kx = 0; kx < probe.width(); ++kx) {
        probe_map[ky * probe.width() + kx] +=
            std::norm(object(static_cast<std::size_t>(p.y) + ky, static_cast<std::size_t>(p.x) + kx));
      }
    }
  }
  const double probe_peak = probe_map.empty() ? 0.0 : *std::max_element(probe_map.begin(), probe_map.end());
  return {object_peak > 0.0 ? step_size / object_peak : 0.0, probe_peak > 0.0 ? step_size / probe_peak : 0.0};
}

std::pair<ComplexField2D, ComplexField2D> gradient_step(const ScanDataset& dataset, const ComplexField2D& object,
                                                        const ComplexField2D& probe, double step_size,
                                                        bool recover_probe) {
  if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
  return gradient_step(dataset, object, probe, normalized_steps(dataset, object, probe, step_size), recover_probe);
}

std::pair<ComplexField2D, ComplexField2D> gradient_step(const ScanDataset& dataset, const ComplexField2D& object,
                                                        const ComplexField2D& probe, StepLengths steps,
                                                        bool recover_probe) {
  require_consistent(dataset, object, probe);
  detail::CorrectionBuffers buffers{ComplexField2D(object.shape()), 0, 0, ComplexField2D(probe.shape())};
  for (std::size_t j = 0; j < dataset.count(); ++j) {
    detail::accumulate_position(dataset, j, object, probe, recover_probe, buffers);
  }
  auto next_object = object;
  auto next_probe = probe;
  detail::apply_corrections(next_object, next_probe, buffers.object, buffers.probe, steps, recover_probe);
  return {std::move(next_object), std::move(next_probe)};
}

// ---------------------------------------------------------------------------------------
// Iteration drivers

ReconResult reconstruct(const ScanDataset& dataset, const ComplexField2D& initial_object,
                        const ComplexField2D& initial_probe, const ReconConfig& config) {
  config.validate();
  require_consistent(dataset, initial_object, initial_probe);
  dataset.positions.validate(dataset.object_shape, dataset.probe_shape);

  if (config.solver == Solver::epie) return reconstruct_epie(dataset, initial_object, initial_probe, config);
  if (config.partitions > 1) return partitioned_reconstruct(dataset, initial_object, initial_probe, config);

  ReconResult result{initial_object, initial_probe, {}, 0, 0.0};
  const auto steps = normalized_steps(dataset, initial_object, initial_probe, config.step_size);
  detail::CorrectionBuffers buffers{ComplexField2D(initial_object.shape()), 0, 0,
                                    ComplexField2D(initial_probe.shape())};
  result.residual_history.reserve(config.iterations);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    if (config.stop.stop_requested()) throw CancelledError("reconstruction cancelled at iteration " + std::to_string(it));
    buffers.object.fill({});
    buffers.probe.fill({});
    double r = 0.0;
    for (std::size_t j = 0; j < dataset.count(); ++j) {
      r += detail::accumulate_position(dataset, j, result.object, result.probe, config.recover_probe, buffers);
    }
    if (!std::isfinite(r)) {
      throw DivergenceError(it, "reconstruction diverged at iteration " + std::to_string(it) + " (residual is not finite)");
    }
    result.residual_history.push_back(r);
    detail::apply_corrections(result.object, result.probe, buffers.object, buffers.probe, steps, config.recover_probe);
    if (!result.object.all_finite() || !result.probe.all_finite()) {
      throw DivergenceError(it, "reconstruction diverged at iteration " + std::to_string(it) + " (non-finite iterate)");
    }
    ++result.iterations_run;
  }
  result.final_residual = residual(dataset, result.object, result.probe);
  return result;
}

ComplexField2D default_initial_object(Shape object_shape) { return ComplexField2D(object_shape, cplx{1.0, 0.0}); }

ComplexField2D default_initial_probe(Shape probe_shape, std::uint64_t seed) {
  ComplexField2D probe(probe_shape);
  const double cy = static_cast<double>(probe_shape.height / 2);
  const double cx = static_cast<double>(probe_shape.width / 2);
  const double radius = 0.5 * static_cast<double>(std::min(probe_shape.height, probe_shape.width));
  const double sigma = 0.5 * radius;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (std::size_t y = 0; y < probe_shape.height; ++y) {
    for (std::size_t x = 0; x < probe_shape.width; ++x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const double phase = jitter(rng);
      if (r2 <= radius * radius) probe(y, x) = std::polar(std::exp(-r2 / (2.0 * sigma * sigma)), phase);
    }
  }
  const double norm = std::sqrt(probe.power());
  if (norm > 0.0) {
    for (auto& v : probe.data()) v /= norm;
  }
  return probe;
}

double magnitude_correlation(const ComplexField2D& a, const ComplexField2D& b, std::span<const bool> mask) {
  require_same_shape(a.shape(), b.shape(), "magnitude_correlation");
  if (mask.size() != a.size()) throw ShapeError("magnitude_correlation: mask length mismatch");
  double n = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask[i]) continue;
    n += 1.0;
    sa += std::abs(a.data()[i]);
    sb += std::abs(b.data()[i]);
  }
  if (n < 2.0) return 0.0;
  const double ma = sa / n, mb = sb / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask[i]) continue;
    const double da = std::abs(a.data()[i]) - ma;
    const double db = std::abs(b.data()[i]) - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace ptyfed::ptycho
