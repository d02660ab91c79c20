#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ptyfed/ptycho.hpp"

namespace ptyfed::phantoms {

// catalyst is the textured-disk stand-in for the experimental catalyst particle views.
enum class Kind { siemens_star, coin, flat, catalyst };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct PhantomSpec {
  Kind kind = Kind::siemens_star;
  Shape object_shape{64, 64};
  Shape probe_shape{16, 16};
  std::size_t step = 8;
  std::size_t views = 1;
  double photon_scale = 1.0;
  ptycho::NoiseModel noise = ptycho::NoiseModel::none;
  std::uint64_t seed = 0;

  // step in [1, min(probe)], views >= 1, probe fits in object, object >= 8x8.
  void validate() const;

  static PhantomSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Complex transmission with magnitude in [0.5, 1] and phase in [-pi/2, pi/2].
ComplexField2D make_object(Kind kind, Shape object_shape, std::uint64_t seed);

// Centred Gaussian-magnitude disk with quadratic phase, unit total power.
ComplexField2D make_probe(Shape probe_shape, std::uint64_t seed);

// Row-major raster with the given step; floor((O - P) / step) + 1 points per axis.
ptycho::ScanPositions raster_positions(Shape object_shape, Shape probe_shape, std::int64_t step);

// Per-pixel count of probe footprints (support of the probe array, not its magnitude).
std::vector<std::size_t> coverage_count(const ptycho::ScanPositions& positions, Shape object_shape, Shape probe_shape);

// Simulates one view. View k (1-based) uses seed + k for its noise.
ptycho::ScanDataset make_view(const PhantomSpec& spec, std::size_t view);

// Writes scan1 .. scan<views> container directories into out_dir and returns their paths.
std::vector<std::filesystem::path> generate_experiment(const PhantomSpec& spec, const std::filesystem::path& out_dir);

}  // namespace ptyfed::phantoms
