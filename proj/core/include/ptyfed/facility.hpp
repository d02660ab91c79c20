#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ptyfed/event_log.hpp"

namespace ptyfed::facility {

enum class EndpointRole { beamline, compute };

std::string to_string(EndpointRole role);
EndpointRole role_from_string(const std::string& name);

struct Endpoint {
  std::string id;
  std::filesystem::path root;
  EndpointRole role = EndpointRole::compute;
};

struct LinkModel {
  double bandwidth = 125'000'000.0;  // bytes per second
  double latency = 0.0;              // seconds

  void validate() const;
  // latency + bytes / bandwidth
  double duration_for(std::uint64_t bytes) const;
};

class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Endpoints, links and the bearer token of one simulated federation.
//
// Config file (UTF-8 JSON):
//   { "endpoints": [{"id", "root", "role"}],
//     "links": [{"src", "dst", "bandwidth_bps", "latency_s"}],
//     "token": "..." }
// bandwidth_bps is in bytes per second. Relative roots resolve against the config file's
// directory. Links are directional; a missing link falls back to default_link.
class Deployment {
 public:
  static Deployment from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static Deployment load(const std::filesystem::path& file);

  nlohmann::json to_json() const;

  const Endpoint& endpoint(const std::string& id) const;
  // First endpoint with the given role.
  const Endpoint& endpoint(EndpointRole role) const;
  const std::vector<Endpoint>& endpoints() const noexcept { return endpoints_; }

  LinkModel link(const std::string& src, const std::string& dst) const;
  void set_link(const std::string& src, const std::string& dst, LinkModel link);

  // Stand-in for the identity service: accepts exactly the configured token.
  void authorize(std::string_view token) const;
  const std::string& token() const noexcept { return token_; }

  // Creates every endpoint root and checks it is writable.
  void materialize() const;

  // Copy whose endpoint roots are root / suffix.
  Deployment with_root_suffix(const std::filesystem::path& suffix) const;

  LinkModel default_link;

 private:
  std::vector<Endpoint> endpoints_;
  std::map<std::pair<std::string, std::string>, LinkModel> links_;
  std::string token_;
};

enum class TransferState { pending, active, succeeded, failed };

std::string to_string(TransferState state);

struct TransferTask {
  std::string src_endpoint;
  std::filesystem::path src_path;
  std::string dst_endpoint;
  std::filesystem::path dst_path;
  TransferState state = TransferState::pending;
  std::uint64_t bytes = 0;
  std::size_t files = 0;
  double started = 0.0;   // epoch seconds
  double finished = 0.0;  // epoch seconds
  std::string src_checksum;
  std::string dst_checksum;
  std::string algorithm;
  std::string error;

  double duration() const noexcept { return finished - started; }
  nlohmann::json to_json() const;
};

struct TransferOptions {
  // Called with the destination path after the copy and before it is verified.
  std::function<void(const std::filesystem::path&)> after_copy;
  EventLog* log = nullptr;
  std::stop_token stop;
};

// Recursive copy of src (relative to its endpoint) onto dst, replacing whatever dst held.
// The call lasts at least link.duration_for(bytes). Both sides are digested; a mismatch
// yields a failed task. Errors are reported in the task, never thrown.
TransferTask transfer(const Endpoint& src, const std::filesystem::path& src_rel, const Endpoint& dst,
                      const std::filesystem::path& dst_rel, const LinkModel& link, const TransferOptions& options = {});

// "scan100" -> "100", "flyscan100" -> "100". Throws ConfigError without trailing digits.
std::string extract_scan_id(std::string_view folder_name);

struct RemoteDirs {
  std::filesystem::path input_dir;
  std::filesystem::path recon_dir;
};

// Creates <root>/input/<id> and <root>/recon/<id> (idempotent).
RemoteDirs prepare_remote_dirs(const Endpoint& compute, const std::string& id);

struct ReplayEvent {
  std::size_t index = 0;  // 0-based emission order
  std::string name;       // e.g. scan3
  std::filesystem::path path;
  double emitted = 0.0;   // epoch seconds
};

struct ReplayOptions {
  double interval = 0.0;                   // seconds between emissions
  std::size_t views = 0;                   // 0 = all scan<k> directories found
  std::filesystem::path subdir = "scans";  // destination under the beamline root
  EventLog* log = nullptr;
  std::stop_token stop;
};

// scan<k> directories of dataset_root sorted by k.
std::vector<std::filesystem::path> list_scan_dirs(const std::filesystem::path& dataset_root);

// Copies scan<k> into <beamline root>/<subdir>/scan<k> one view at a time, spacing the
// emissions by at least `interval`. Each copy is written under a hidden temporary name
// and renamed into place, so consumers never see a partial scan. Returns the number of
// views emitted.
std::size_t replay_acquisition(const std::filesystem::path& dataset_root, const Endpoint& beamline,
                               const ReplayOptions& options, const std::function<void(const ReplayEvent&)>& on_scan);

}  // namespace ptyfed::facility
