#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <utility>
#include <vector>

#include "ptyfed/field.hpp"

namespace ptyfed::ptycho {

// Top-left corner of the probe footprint in object pixel coordinates.
struct ScanPosition {
  std::int32_t y = 0;
  std::int32_t x = 0;
  friend bool operator==(const ScanPosition&, const ScanPosition&) = default;
};

struct ScanPositions {
  std::vector<ScanPosition> points;

  std::size_t count() const noexcept { return points.size(); }
  const ScanPosition& operator[](std::size_t j) const { return points[j]; }

  // Throws BoundsError naming the first position whose footprint leaves the object.
  void validate(Shape object_shape, Shape probe_shape) const;
  Rect footprint(std::size_t j, Shape probe_shape) const;
};

enum class NoiseModel { none, poisson };

std::string to_string(NoiseModel noise);
NoiseModel noise_from_string(const std::string& name);

// Diffraction intensity stack with its scan geometry.
struct ScanDataset {
  ScanPositions positions;
  Shape probe_shape;
  Shape object_shape;
  std::string view_id;
  // count x probe_shape.pixels() intensities, frame-major.
  std::vector<double> frames;

  double photon_scale = 1.0;
  NoiseModel noise = NoiseModel::none;
  std::uint64_t seed = 0;
  std::string kind;

  std::optional<ComplexField2D> probe;
  std::optional<ComplexField2D> truth_object;

  std::size_t count() const noexcept { return positions.count(); }
  std::span<const double> frame(std::size_t j) const {
    return {frames.data() + j * probe_shape.pixels(), probe_shape.pixels()};
  }
  std::span<double> frame(std::size_t j) {
    return {frames.data() + j * probe_shape.pixels(), probe_shape.pixels()};
  }

  // Checks the frame/position counts, non-negative intensities and position bounds.
  void validate() const;
};

enum class Solver { gradient_descent, epie };

std::string to_string(Solver solver);
Solver solver_from_string(const std::string& name);

struct ReconConfig {
  std::size_t iterations = 100;
  Solver solver = Solver::gradient_descent;
  // Relative step; the applied object step is step_size / max(sum_j |probe_j|^2) and the
  // probe step is step_size / max(sum_j |patch_j|^2), both taken from the initial iterate.
  double step_size = 0.5;
  bool recover_probe = false;
  std::size_t partitions = 1;
  std::uint64_t seed = 0;
  std::stop_token stop;

  void validate() const;
};

struct ReconResult {
  ComplexField2D object;
  ComplexField2D probe;
  // Data-fidelity value of the iterate entering each iteration.
  std::vector<double> residual_history;
  std::size_t iterations_run = 0;
  // Data-fidelity value of the returned iterate.
  double final_residual = 0.0;
};

ComplexField2D extract_patch(const ComplexField2D& object, std::size_t pos_index,
                             const ScanPositions& positions, Shape probe_shape);

// Far-field wave: unnormalized 2D DFT of probe * patch.
ComplexField2D forward(const ComplexField2D& probe, const ComplexField2D& patch);

ScanDataset simulate_diffraction(const ComplexField2D& object, const ComplexField2D& probe,
                                 const ScanPositions& positions, double photon_scale,
                                 NoiseModel noise, std::uint64_t seed);

// sum_j sum_k (|forward(probe, patch_j)|_k - sqrt(d_j,k))^2
double residual(const ScanDataset& dataset, const ComplexField2D& object, const ComplexField2D& probe);

// Real gradient of the residual packed as dR/dRe + i dR/dIm, for object and probe.
struct ResidualGradient {
  ComplexField2D object;
  ComplexField2D probe;
  double residual = 0.0;
};

ResidualGradient residual_gradient(const ScanDataset& dataset, const ComplexField2D& object,
                                   const ComplexField2D& probe);

// Absolute step lengths applied to the summed corrections.
struct StepLengths {
  double object = 0.0;
  double probe = 0.0;
};

// step_size divided by the peak illumination of object and probe respectively.
StepLengths normalized_steps(const ScanDataset& dataset, const ComplexField2D& object,
                             const ComplexField2D& probe, double step_size);

// Sum over positions of |probe|^2 placed at each footprint.
std::vector<double> illumination(const ScanPositions& positions, Shape object_shape,
                                 const ComplexField2D& probe);

// One full-batch amplitude-projection update. All position corrections are computed from
// the same iterate and summed before being applied to both object and probe.
std::pair<ComplexField2D, ComplexField2D> gradient_step(const ScanDataset& dataset,
                                                        const ComplexField2D& object,
                                                        const ComplexField2D& probe,
                                                        double step_size, bool recover_probe);

std::pair<ComplexField2D, ComplexField2D> gradient_step(const ScanDataset& dataset,
                                                        const ComplexField2D& object,
                                                        const ComplexField2D& probe,
                                                        StepLengths steps, bool recover_probe);

ReconResult reconstruct(const ScanDataset& dataset, const ComplexField2D& initial_object,
                        const ComplexField2D& initial_probe, const ReconConfig& config);

// Sequential ePIE sweep in seeded random order. Not used by the partitioned path.
ReconResult reconstruct_epie(const ScanDataset& dataset, const ComplexField2D& initial_object,
                             const ComplexField2D& initial_probe, const ReconConfig& config);

// Object of ones.
ComplexField2D default_initial_object(Shape object_shape);

// Gaussian-magnitude disk with flat phase plus a small seeded phase perturbation, unit power.
ComplexField2D default_initial_probe(Shape probe_shape, std::uint64_t seed);

// Pearson correlation of |a| and |b| over pixels where mask is true.
double magnitude_correlation(const ComplexField2D& a, const ComplexField2D& b,
                             std::span<const bool> mask);

namespace detail {

// Accumulates the amplitude-projection corrections of one position into buffers whose
// origin sits at (origin_y, origin_x) in object coordinates. Returns that position's
// residual contribution.
struct CorrectionBuffers {
  ComplexField2D object;  // sum_j conj(probe) * delta_j, local window
  std::size_t origin_y = 0;
  std::size_t origin_x = 0;
  ComplexField2D probe;   // sum_j conj(patch_j) * delta_j
};

double accumulate_position(const ScanDataset& dataset, std::size_t j, const ComplexField2D& object,
                           const ComplexField2D& probe, bool with_probe, CorrectionBuffers& buffers);

void apply_corrections(ComplexField2D& object, ComplexField2D& probe, const ComplexField2D& object_correction,
                       const ComplexField2D& probe_correction, StepLengths steps, bool recover_probe);

}  // namespace detail

}  // namespace ptyfed::ptycho
