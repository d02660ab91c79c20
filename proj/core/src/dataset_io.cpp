#include "ptyfed/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ptyfed/errors.hpp"

namespace ptyfed::io {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <class T>
T get_le(const char* in) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, in, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void write_file(const fs::path& file, const std::string& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + file.string());
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

json shape_json(Shape s) { return json::array({s.height, s.width}); }

Shape shape_from(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 2) {
    throw IoError(std::string("meta.json: '") + key + "' must be a [height, width] array");
  }
  return {j[key][0].get<std::size_t>(), j[key][1].get<std::size_t>()};
}

std::string encode_field(const ComplexField2D& field) {
  std::string bytes;
  bytes.reserve(field.size() * 16);
  for (const auto& v : field.data()) {
    put_le(bytes, v.real());
    put_le(bytes, v.imag());
  }
  return bytes;
}

}  // namespace

void write_field(const ComplexField2D& field, const fs::path& file) { write_file(file, encode_field(field)); }

ComplexField2D read_field(const fs::path& file, Shape shape) {
  const auto bytes = read_file(file);
  if (bytes.size() != shape.pixels() * 16) {
    throw IoError(file.string() + ": expected " + std::to_string(shape.pixels() * 16) + " bytes, found " +
                  std::to_string(bytes.size()));
  }
  std::vector<cplx> data(shape.pixels());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = {get_le<double>(bytes.data() + 16 * i), get_le<double>(bytes.data() + 16 * i + 8)};
  }
  return ComplexField2D(shape.height, shape.width, std::move(data));
}

void write_dataset(const ptycho::ScanDataset& dataset, const fs::path& dir) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json meta = {
      {"format_version", kFormatVersion},
      {"object_shape", shape_json(dataset.object_shape)},
      {"probe_shape", shape_json(dataset.probe_shape)},
      {"count", dataset.count()},
      {"photon_scale", dataset.photon_scale},
      {"noise", ptycho::to_string(dataset.noise)},
      {"seed", dataset.seed},
      {"view_id", dataset.view_id},
  };
  if (!dataset.kind.empty()) meta["kind"] = dataset.kind;

  std::string positions;
  positions.reserve(dataset.count() * 8);
  for (const auto& p : dataset.positions.points) {
    put_le(positions, p.y);
    put_le(positions, p.x);
  }
  std::string frames;
  frames.reserve(dataset.frames.size() * 4);
  for (const double v : dataset.frames) put_le(frames, static_cast<float>(v));

  write_file(dir / "positions.bin", positions);
  write_file(dir / "frames.bin", frames);
  if (dataset.probe) write_field(*dataset.probe, dir / "probe.bin");
  if (dataset.truth_object) write_field(*dataset.truth_object, dir / "truth_object.bin");
  // meta.json last: its presence marks a complete container.
  write_file(dir / "meta.json", meta.dump(2) + "\n");
}

ptycho::ScanDataset read_dataset(const fs::path& dir) {
  json meta;
  try {
    meta = json::parse(read_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  if (meta.value("format_version", 0) != kFormatVersion) {
    throw IoError((dir / "meta.json").string() + ": unsupported format_version");
  }

  ptycho::ScanDataset dataset;
  try {
    dataset.object_shape = shape_from(meta, "object_shape");
    dataset.probe_shape = shape_from(meta, "probe_shape");
    dataset.photon_scale = meta.at("photon_scale").get<double>();
    dataset.noise = ptycho::noise_from_string(meta.at("noise").get<std::string>());
    dataset.seed = meta.at("seed").get<std::uint64_t>();
    dataset.kind = meta.value("kind", std::string{});
    dataset.view_id = meta.value("view_id", dir.filename().string());
  } catch (const json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  const auto count = meta.at("count").get<std::size_t>();

  const auto positions = read_file(dir / "positions.bin");
  if (positions.size() != count * 8) throw IoError((dir / "positions.bin").string() + ": size does not match count");
  dataset.positions.points.resize(count);
  for (std::size_t j = 0; j < count; ++j) {
    dataset.positions.points[j] = {get_le<std::int32_t>(positions.data() + 8 * j),
                                   get_le<std::int32_t>(positions.data() + 8 * j + 4)};
  }

  const auto frames = read_file(dir / "frames.bin");
  const std::size_t values = count * dataset.probe_shape.pixels();
  if (frames.size() != values * 4) throw IoError((dir / "frames.bin").string() + ": size does not match count x H x W");
  dataset.frames.resize(values);
  for (std::size_t i = 0; i < values; ++i) dataset.frames[i] = get_le<float>(frames.data() + 4 * i);

  if (fs::exists(dir / "probe.bin")) dataset.probe = read_field(dir / "probe.bin", dataset.probe_shape);
  if (fs::exists(dir / "truth_object.bin")) {
    dataset.truth_object = read_field(dir / "truth_object.bin", dataset.object_shape);
  }
  dataset.validate();
  return dataset;
}

void write_reconstruction(const ptycho::ReconResult& result, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_field(result.object, dir / "object.bin");
  write_field(result.probe, dir / "probe.bin");
  json summary = {
      {"object_shape", shape_json(result.object.shape())},
      {"probe_shape", shape_json(result.probe.shape())},
      {"iterations_run", result.iterations_run},
      {"residual_history", result.residual_history},
      {"final_residual", result.final_residual},
  };
  write_file(dir / "residuals.json", summary.dump(2) + "\n");
}

StoredReconstruction read_reconstruction(const fs::path& dir) {
  json summary;
  try {
    summary = json::parse(read_file(dir / "residuals.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "residuals.json").string() + ": " + e.what());
  }
  StoredReconstruction stored;
  stored.object = read_field(dir / "object.bin", shape_from(summary, "object_shape"));
  stored.probe = read_field(dir / "probe.bin", shape_from(summary, "probe_shape"));
  stored.residual_history = summary.at("residual_history").get<std::vector<double>>();
  stored.final_residual = summary.at("final_residual").get<double>();
  return stored;
}

ptycho::ScanDataset normalized_intensities(const ptycho::ScanDataset& dataset) {
  auto copy = dataset;
  if (copy.photon_scale > 0.0 && copy.photon_scale != 1.0) {
    for (auto& v : copy.frames) v /= copy.photon_scale;
    copy.photon_scale = 1.0;
  }
  return copy;
}

}  // namespace ptyfed::io
