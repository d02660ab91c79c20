#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>

#include <nlohmann/json.hpp>

namespace ptyfed {

// Append-only JSON-lines file shared by concurrent writers. A default-constructed log
// discards events.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(const std::filesystem::path& path);

  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  // Adds a "ts" field (epoch seconds) when the event has none.
  void append(nlohmann::json event);
  bool enabled() const noexcept { return out_.is_open(); }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
  std::ofstream out_;
};

}  // namespace ptyfed
