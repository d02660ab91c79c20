#include "ptyfed/event_log.hpp"

#include "ptyfed/clock.hpp"
#include "ptyfed/errors.hpp"

namespace ptyfed {

EventLog::EventLog(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open event log " + path.string());
}

void EventLog::append(nlohmann::json event) {
  if (!event.contains("ts")) event["ts"] = wall_seconds();
  std::lock_guard lock(mutex_);
  if (!out_.is_open()) return;
  out_ << event.dump() << '\n';
  out_.flush();
}

}  // namespace ptyfed
