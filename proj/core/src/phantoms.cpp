#include "ptyfed/phantoms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "ptyfed/dataset_io.hpp"
#include "ptyfed/errors.hpp"

namespace ptyfed::phantoms {
namespace fs = std::filesystem;
using json = nlohmann::json;
using std::numbers::pi;

namespace {

// Maps a feature weight t in [0, 1] to the transmission 1 - 0.45 t with phase t * max_phase.
cplx transmission(double t, double max_phase) {
  t = std::clamp(t, 0.0, 1.0);
  return std::polar(1.0 - 0.45 * t, std::clamp(t * max_phase, -pi / 2, pi / 2));
}

ComplexField2D siemens_star(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double rotation = std::uniform_real_distribution<double>(0.0, 2.0 * pi)(rng);
  constexpr int spokes = 18;
  const double cy = 0.5 * static_cast<double>(shape.height);
  const double cx = 0.5 * static_cast<double>(shape.width);
  const double outer = 0.45 * static_cast<double>(std::min(shape.height, shape.width));
  ComplexField2D object(shape);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double r = std::hypot(dy, dx);
      double t = 0.0;
      if (r < outer && r > 1.0) {
        const double s = std::sin(spokes * std::atan2(dy, dx) + rotation);
        // Soft spoke edge, about one pixel wide at mid radius.
        t = 0.5 + 0.5 * std::tanh(3.0 * s);
      }
      object(y, x) = transmission(t, 0.8);
    }
  }
  return object;
}

ComplexField2D coin(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double period = std::uniform_real_distribution<double>(4.0, 6.0)(rng);
  const double cy = 0.5 * static_cast<double>(shape.height);
  const double cx = 0.5 * static_cast<double>(shape.width);
  const double radius = 0.4 * static_cast<double>(std::min(shape.height, shape.width));
  ComplexField2D object(shape);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double r = std::hypot(static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx);
      double t = 0.0;
      if (r < radius) {
        // Body of the coin with engraved rings.
        const double ring = 0.5 + 0.5 * std::cos(2.0 * pi * r / period);
        t = 0.6 + 0.4 * (ring > 0.7 ? 1.0 : 0.0) - 0.3 * (r > radius - 1.5 ? 1.0 : 0.0);
      }
      object(y, x) = transmission(t, 1.2);
    }
  }
  return object;
}

ComplexField2D catalyst(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double cy = 0.5 * static_cast<double>(shape.height);
  const double cx = 0.5 * static_cast<double>(shape.width);
  const double extent = static_cast<double>(std::min(shape.height, shape.width));
  const double radius = 0.38 * extent;

  struct Blob {
    double y, x, sigma, weight;
  };
  std::uniform_real_distribution<double> offset(-radius, radius);
  std::uniform_real_distribution<double> width(0.03 * extent, 0.09 * extent);
  std::uniform_real_distribution<double> weight(0.3, 1.0);
  std::vector<Blob> blobs(24);
  for (auto& b : blobs) b = {cy + offset(rng), cx + offset(rng), width(rng), weight(rng)};

  ComplexField2D object(shape);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double py = static_cast<double>(y) + 0.5;
      const double px = static_cast<double>(x) + 0.5;
      double t = 0.0;
      if (std::hypot(py - cy, px - cx) < radius) {
        t = 0.35;
        for (const auto& b : blobs) {
          const double d2 = (py - b.y) * (py - b.y) + (px - b.x) * (px - b.x);
          t += 0.5 * b.weight * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
      }
      object(y, x) = transmission(t, 1.4);
    }
  }
  return object;
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::siemens_star: return "siemens-star";
    case Kind::coin: return "coin";
    case Kind::flat: return "flat";
    case Kind::catalyst: return "catalyst";
  }
  return "unknown";
}

Kind kind_from_string(const std::string& name) {
  if (name == "siemens-star") return Kind::siemens_star;
  if (name == "coin") return Kind::coin;
  if (name == "flat") return Kind::flat;
  if (name == "catalyst") return Kind::catalyst;
  throw ConfigError("unknown phantom kind '" + name + "'");
}

void PhantomSpec::validate() const {
  if (object_shape.height < 8 || object_shape.width < 8) throw ConfigError("object must be at least 8x8");
  if (probe_shape.height < 1 || probe_shape.width < 1) throw ConfigError("probe must be at least 1x1");
  if (probe_shape.height > object_shape.height || probe_shape.width > object_shape.width) {
    throw ConfigError("probe does not fit inside the object");
  }
  if (step < 1) throw ConfigError("step must be >= 1");
  if (step > std::min(probe_shape.height, probe_shape.width)) {
    throw ConfigError("step " + std::to_string(step) + " exceeds the probe size; neighbouring positions would not overlap");
  }
  if (views < 1) throw ConfigError("views must be >= 1");
  if (!(photon_scale >= 0.0)) throw ConfigError("photon_scale must be >= 0");
}

PhantomSpec PhantomSpec::from_json(const json& j) {
  PhantomSpec spec;
  auto shape = [](const json& v) -> Shape {
    if (v.is_number_unsigned()) return {v.get<std::size_t>(), v.get<std::size_t>()};
    return {v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>()};
  };
  try {
    if (j.contains("kind")) spec.kind = kind_from_string(j["kind"].get<std::string>());
    if (j.contains("object_shape")) spec.object_shape = shape(j["object_shape"]);
    if (j.contains("probe_shape")) spec.probe_shape = shape(j["probe_shape"]);
    if (j.contains("step")) spec.step = j["step"].get<std::size_t>();
    if (j.contains("views")) spec.views = j["views"].get<std::size_t>();
    if (j.contains("photon_scale")) spec.photon_scale = j["photon_scale"].get<double>();
    if (j.contains("noise")) spec.noise = ptycho::noise_from_string(j["noise"].get<std::string>());
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantom spec: ") + e.what());
  }
  return spec;
}

json PhantomSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"object_shape", {object_shape.height, object_shape.width}},
          {"probe_shape", {probe_shape.height, probe_shape.width}},
          {"step", step},
          {"views", views},
          {"photon_scale", photon_scale},
          {"noise", ptycho::to_string(noise)},
          {"seed", seed}};
}

ComplexField2D make_object(Kind kind, Shape object_shape, std::uint64_t seed) {
  if (object_shape.height < 8 || object_shape.width < 8) throw ConfigError("object must be at least 8x8");
  switch (kind) {
    case Kind::flat: return ComplexField2D(object_shape, cplx{1.0, 0.0});
    case Kind::siemens_star: return siemens_star(object_shape, seed);
    case Kind::coin: return coin(object_shape, seed);
    case Kind::catalyst: return catalyst(object_shape, seed);
  }
  throw ConfigError("unknown phantom kind");
}

ComplexField2D make_probe(Shape probe_shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double curvature = 1.5 * (1.0 + 0.2 * std::uniform_real_distribution<double>(-1.0, 1.0)(rng));
  const double cy = static_cast<double>(probe_shape.height / 2);
  const double cx = static_cast<double>(probe_shape.width / 2);
  const double radius = 0.5 * static_cast<double>(std::min(probe_shape.height, probe_shape.width));
  const double sigma = 0.6 * radius;

  ComplexField2D probe(probe_shape);
  for (std::size_t y = 0; y < probe_shape.height; ++y) {
    for (std::size_t x = 0; x < probe_shape.width; ++x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      if (r2 > radius * radius) continue;
      probe(y, x) = std::polar(std::exp(-r2 / (2.0 * sigma * sigma)), curvature * r2 / (radius * radius));
    }
  }
  const double norm = std::sqrt(probe.power());
  for (auto& v : probe.data()) v /= norm;
  return probe;
}

ptycho::ScanPositions raster_positions(Shape object_shape, Shape probe_shape, std::int64_t step) {
  if (step <= 0) throw ConfigError("scan step must be > 0");
  if (probe_shape.height > object_shape.height || probe_shape.width > object_shape.width) {
    throw ConfigError("probe does not fit inside the object");
  }
  const auto max_y = static_cast<std::int64_t>(object_shape.height - probe_shape.height);
  const auto max_x = static_cast<std::int64_t>(object_shape.width - probe_shape.width);
  ptycho::ScanPositions positions;
  for (std::int64_t y = 0; y <= max_y; y += step) {
    for (std::int64_t x = 0; x <= max_x; x += step) {
      positions.points.push_back({static_cast<std::int32_t>(y), static_cast<std::int32_t>(x)});
    }
  }
  return positions;
}

std::vector<std::size_t> coverage_count(const ptycho::ScanPositions& positions, Shape object_shape,
                                        Shape probe_shape) {
  std::vector<std::size_t> count(object_shape.pixels(), 0);
  for (std::size_t j = 0; j < positions.count(); ++j) {
    const auto r = positions.footprint(j, probe_shape);
    for (std::size_t y = r.y0; y < r.y1; ++y) {
      for (std::size_t x = r.x0; x < r.x1; ++x) ++count[y * object_shape.width + x];
    }
  }
  return count;
}

ptycho::ScanDataset make_view(const PhantomSpec& spec, std::size_t view) {
  spec.validate();
  const auto object = make_object(spec.kind, spec.object_shape, spec.seed);
  const auto probe = make_probe(spec.probe_shape, spec.seed);
  const auto positions = raster_positions(spec.object_shape, spec.probe_shape, static_cast<std::int64_t>(spec.step));
  auto dataset = ptycho::simulate_diffraction(object, probe, positions, spec.photon_scale, spec.noise, spec.seed + view);
  dataset.view_id = "scan" + std::to_string(view);
  dataset.kind = to_string(spec.kind);
  dataset.probe = probe;
  dataset.truth_object = object;
  return dataset;
}

std::vector<fs::path> generate_experiment(const PhantomSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const auto object = make_object(spec.kind, spec.object_shape, spec.seed);
  const auto probe = make_probe(spec.probe_shape, spec.seed);
  const auto positions = raster_positions(spec.object_shape, spec.probe_shape, static_cast<std::int64_t>(spec.step));

  std::vector<fs::path> dirs;
  for (std::size_t k = 1; k <= spec.views; ++k) {
    auto dataset = ptycho::simulate_diffraction(object, probe, positions, spec.photon_scale, spec.noise, spec.seed + k);
    dataset.view_id = "scan" + std::to_string(k);
    dataset.kind = to_string(spec.kind);
    dataset.probe = probe;
    dataset.truth_object = object;
    const auto dir = out_dir / dataset.view_id;
    io::write_dataset(dataset, dir);
    dirs.push_back(dir);
  }
  return dirs;
}

}  // namespace ptyfed::phantoms
