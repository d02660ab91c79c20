#include "ptyfed/facility.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <regex>

#include <nlohmann/json.hpp>

#include "ptyfed/checksum.hpp"
#include "ptyfed/clock.hpp"
#include "ptyfed/errors.hpp"
#include "ptyfed/log.hpp"

namespace ptyfed::facility {
namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(EndpointRole role) { return role == EndpointRole::beamline ? "beamline" : "compute"; }

EndpointRole role_from_string(const std::string& name) {
  if (name == "beamline") return EndpointRole::beamline;
  if (name == "compute") return EndpointRole::compute;
  throw ConfigError("unknown endpoint role '" + name + "'");
}

void LinkModel::validate() const {
  if (!(bandwidth > 0.0)) throw ConfigError("link bandwidth must be > 0");
  if (!(latency >= 0.0)) throw ConfigError("link latency must be >= 0");
}

double LinkModel::duration_for(std::uint64_t bytes) const {
  return latency + static_cast<double>(bytes) / bandwidth;
}

// ---------------------------------------------------------------------------------------
// Deployment

Deployment Deployment::from_json(const json& j, const fs::path& base_dir) {
  Deployment d;
  try {
    for (const auto& e : j.at("endpoints")) {
      Endpoint ep{e.at("id").get<std::string>(), fs::path(e.at("root").get<std::string>()),
                  role_from_string(e.at("role").get<std::string>())};
      if (ep.root.is_relative() && !base_dir.empty()) ep.root = base_dir / ep.root;
      ep.root = ep.root.lexically_normal();
      const bool duplicate = std::any_of(d.endpoints_.begin(), d.endpoints_.end(),
                                         [&](const Endpoint& other) { return other.id == ep.id; });
      if (duplicate) throw ConfigError("duplicate endpoint id '" + ep.id + "'");
      d.endpoints_.push_back(std::move(ep));
    }
    if (j.contains("links")) {
      for (const auto& l : j.at("links")) {
        LinkModel link{l.at("bandwidth_bps").get<double>(), l.value("latency_s", 0.0)};
        link.validate();
        d.set_link(l.at("src").get<std::string>(), l.at("dst").get<std::string>(), link);
      }
    }
    d.token_ = j.value("token", std::string{});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("deployment config: ") + e.what());
  }
  if (d.endpoints_.empty()) throw ConfigError("deployment config lists no endpoints");
  return d;
}

Deployment Deployment::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read deployment config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return from_json(j, file.parent_path());
}

json Deployment::to_json() const {
  json j = {{"endpoints", json::array()}, {"links", json::array()}, {"token", token_}};
  for (const auto& e : endpoints_) {
    j["endpoints"].push_back({{"id", e.id}, {"root", e.root.string()}, {"role", to_string(e.role)}});
  }
  for (const auto& [key, link] : links_) {
    j["links"].push_back(
        {{"src", key.first}, {"dst", key.second}, {"bandwidth_bps", link.bandwidth}, {"latency_s", link.latency}});
  }
  return j;
}

const Endpoint& Deployment::endpoint(const std::string& id) const {
  for (const auto& e : endpoints_) {
    if (e.id == id) return e;
  }
  throw ConfigError("unknown endpoint '" + id + "'");
}

const Endpoint& Deployment::endpoint(EndpointRole role) const {
  for (const auto& e : endpoints_) {
    if (e.role == role) return e;
  }
  throw ConfigError("deployment has no " + to_string(role) + " endpoint");
}

LinkModel Deployment::link(const std::string& src, const std::string& dst) const {
  if (auto it = links_.find({src, dst}); it != links_.end()) return it->second;
  return default_link;
}

void Deployment::set_link(const std::string& src, const std::string& dst, LinkModel link) {
  link.validate();
  links_[{src, dst}] = link;
}

void Deployment::authorize(std::string_view token) const {
  if (token_.empty() || token != token_) throw AuthError("token rejected by the federation");
}

void Deployment::materialize() const {
  for (const auto& e : endpoints_) {
    std::error_code ec;
    fs::create_directories(e.root, ec);
    if (ec) throw IoError("endpoint '" + e.id + "': cannot create " + e.root.string() + ": " + ec.message());
    if (::access(e.root.c_str(), W_OK) != 0) {
      throw IoError("endpoint '" + e.id + "': root " + e.root.string() + " is not writable");
    }
  }
}

Deployment Deployment::with_root_suffix(const fs::path& suffix) const {
  Deployment copy = *this;
  for (auto& e : copy.endpoints_) e.root /= suffix;
  return copy;
}

// ---------------------------------------------------------------------------------------
// Transfers

std::string to_string(TransferState state) {
  switch (state) {
    case TransferState::pending: return "pending";
    case TransferState::active: return "active";
    case TransferState::succeeded: return "succeeded";
    case TransferState::failed: return "failed";
  }
  return "unknown";
}

json TransferTask::to_json() const {
  return {{"src_endpoint", src_endpoint},
          {"src_path", src_path.generic_string()},
          {"dst_endpoint", dst_endpoint},
          {"dst_path", dst_path.generic_string()},
          {"state", to_string(state)},
          {"bytes", bytes},
          {"files", files},
          {"started", started},
          {"finished", finished},
          {"src_checksum", src_checksum},
          {"dst_checksum", dst_checksum},
          {"algorithm", algorithm},
          {"error", error}};
}

namespace {

bool escapes_root(const fs::path& rel) {
  if (rel.empty() || rel.is_absolute()) return true;
  for (const auto& part : rel.lexically_normal()) {
    if (part == "..") return true;
  }
  return false;
}

}  // namespace

TransferTask transfer(const Endpoint& src, const fs::path& src_rel, const Endpoint& dst, const fs::path& dst_rel,
                      const LinkModel& link, const TransferOptions& options) {
  TransferTask task;
  task.src_endpoint = src.id;
  task.src_path = src_rel;
  task.dst_endpoint = dst.id;
  task.dst_path = dst_rel;
  task.algorithm = checksum::kTreeAlgorithm;
  task.state = TransferState::active;
  task.started = wall_seconds();
  const auto clock_start = std::chrono::steady_clock::now();

  const auto source = src.root / src_rel;
  const auto target = dst.root / dst_rel;
  try {
    link.validate();
    if (escapes_root(src_rel) || escapes_root(dst_rel)) throw Error("transfer paths must be relative to their endpoint");
    if (!fs::exists(source)) throw Error("source " + source.string() + " does not exist");

    const auto src_digest = checksum::tree_sha256(source);
    task.src_checksum = src_digest.hex;
    task.bytes = src_digest.bytes;
    task.files = src_digest.files;

    // Retries overwrite: the destination is rebuilt from scratch.
    fs::remove_all(target);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    if (fs::is_directory(source)) {
      fs::copy(source, target, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    } else {
      fs::copy_file(source, target, fs::copy_options::overwrite_existing);
    }
    if (options.after_copy) options.after_copy(target);

    const auto paced_until = clock_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                               std::chrono::duration<double>(link.duration_for(task.bytes)));
    if (!sleep_until(paced_until, options.stop)) throw CancelledError("transfer cancelled");

    task.dst_checksum = checksum::tree_sha256(target).hex;
    if (task.dst_checksum != task.src_checksum) {
      throw Error("checksum mismatch: source " + task.src_checksum + " destination " + task.dst_checksum);
    }
    task.state = TransferState::succeeded;
  } catch (const std::exception& e) {
    task.state = TransferState::failed;
    task.error = e.what();
  }
  task.finished = wall_seconds();

  if (options.log != nullptr) {
    auto event = task.to_json();
    event["type"] = "transfer";
    options.log->append(std::move(event));
  }
  if (task.state == TransferState::failed) {
    log::warn("transfer " + src.id + ":" + src_rel.generic_string() + " -> " + dst.id + ":" + dst_rel.generic_string() +
              " failed: " + task.error);
  }
  return task;
}

// ---------------------------------------------------------------------------------------
// Scan naming and remote folders

std::string extract_scan_id(std::string_view folder_name) {
  static const std::regex pattern(R"(^[A-Za-z_\-]*([0-9]+)$)");
  std::match_results<std::string_view::const_iterator> match;
  if (!std::regex_match(folder_name.begin(), folder_name.end(), match, pattern)) {
    throw ConfigError("folder name '" + std::string(folder_name) + "' does not end in a numeric scan id");
  }
  return match[1].str();
}

RemoteDirs prepare_remote_dirs(const Endpoint& compute, const std::string& id) {
  if (id.empty() || escapes_root(id)) throw ConfigError("invalid scan id '" + id + "'");
  RemoteDirs dirs{compute.root / "input" / id, compute.root / "recon" / id};
  std::error_code ec;
  fs::create_directories(dirs.input_dir, ec);
  if (!ec) fs::create_directories(dirs.recon_dir, ec);
  if (ec) throw IoError("endpoint '" + compute.id + "': cannot prepare folders for " + id + ": " + ec.message());
  return dirs;
}

// ---------------------------------------------------------------------------------------
// Acquisition replay

std::vector<fs::path> list_scan_dirs(const fs::path& dataset_root) {
  if (!fs::is_directory(dataset_root)) throw IoError("dataset root " + dataset_root.string() + " is not a directory");
  static const std::regex pattern(R"(^[A-Za-z_\-]+([0-9]+)$)");
  std::vector<std::pair<unsigned long long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dataset_root)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoull(m[1].str()), entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> dirs;
  for (auto& [k, p] : found) dirs.push_back(std::move(p));
  return dirs;
}

std::size_t replay_acquisition(const fs::path& dataset_root, const Endpoint& beamline, const ReplayOptions& options,
                               const std::function<void(const ReplayEvent&)>& on_scan) {
  auto sources = list_scan_dirs(dataset_root);
  if (options.views > 0) {
    if (options.views > sources.size()) {
      throw IoError("missing source view: requested " + std::to_string(options.views) + " views, found " +
                    std::to_string(sources.size()) + " in " + dataset_root.string());
    }
    sources.resize(options.views);
  }
  for (const auto& s : sources) {
    if (!fs::exists(s / "meta.json")) throw IoError("source view " + s.string() + " lacks meta.json");
  }

  const auto dest_root = beamline.root / options.subdir;
  fs::create_directories(dest_root);
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(std::max(0.0, options.interval)));

  std::size_t emitted = 0;
  std::optional<std::chrono::steady_clock::time_point> previous;
  for (const auto& source : sources) {
    if (previous && !sleep_until(*previous + interval, options.stop)) break;
    if (options.stop.stop_requested()) break;

    const auto name = source.filename().string();
    const auto staging = dest_root / ("." + name + ".partial");
    const auto final_path = dest_root / name;
    fs::remove_all(staging);
    fs::copy(source, staging, fs::copy_options::recursive);
    fs::remove_all(final_path);
    fs::rename(staging, final_path);

    previous = std::chrono::steady_clock::now();
    ReplayEvent event{emitted, name, final_path, wall_seconds()};
    if (options.log != nullptr) {
      options.log->append({{"type", "replay"}, {"index", event.index}, {"scan", name},
                           {"path", final_path.generic_string()}, {"ts", event.emitted}});
    }
    ++emitted;
    if (on_scan) on_scan(event);
  }
  return emitted;
}

}  // namespace ptyfed::facility
