#pragma once

#include <filesystem>

#include "ptyfed/ptycho.hpp"

namespace ptyfed::io {

inline constexpr int kFormatVersion = 1;

// Writes one view as a container directory:
//   meta.json       object_shape, probe_shape, count, photon_scale, noise, seed, format_version, ...
//   positions.bin   count pairs of little-endian int32 (y, x)
//   frames.bin      count x H x W little-endian float32, row-major, frame-major
//   probe.bin       optional, little-endian float64 interleaved (re, im)
//   truth_object.bin optional, same encoding as probe.bin
void write_dataset(const ptycho::ScanDataset& dataset, const std::filesystem::path& dir);

// Reads a container directory and validates it. view_id defaults to the directory name.
ptycho::ScanDataset read_dataset(const std::filesystem::path& dir);

void write_field(const ComplexField2D& field, const std::filesystem::path& file);
ComplexField2D read_field(const std::filesystem::path& file, Shape shape);

// object.bin, probe.bin, residuals.json (history + final value + shapes).
void write_reconstruction(const ptycho::ReconResult& result, const std::filesystem::path& dir);

struct StoredReconstruction {
  ComplexField2D object;
  ComplexField2D probe;
  std::vector<double> residual_history;
  double final_residual = 0.0;
};

StoredReconstruction read_reconstruction(const std::filesystem::path& dir);

// Copy of the dataset with intensities divided by photon_scale (when positive), so the
// data matches the unit-power forward model.
ptycho::ScanDataset normalized_intensities(const ptycho::ScanDataset& dataset);

}  // namespace ptyfed::io
