#include "ptyfed/slot_file.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "ptyfed/clock.hpp"
#include "ptyfed/errors.hpp"
#include "ptyfed/log.hpp"

namespace ptyfed::compute {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Exclusive open-file-description lock held for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file " + path.string() + ": " + std::strerror(errno));
    struct flock fl {};
    fl.l_type = F_WRLCK;
    fl.l_whence = SEEK_SET;
    while (::fcntl(fd_, F_OFD_SETLKW, &fl) == -1) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd_);
      throw IoError("cannot lock " + path.string() + ": " + std::strerror(err));
    }
  }

  ~FileLock() {
    struct flock fl {};
    fl.l_type = F_UNLCK;
    fl.l_whence = SEEK_SET;
    ::fcntl(fd_, F_OFD_SETLK, &fl);
    ::close(fd_);
  }

  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::vector<SlotEntry> load_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("slot file " + path.string() + " is corrupt: " + e.what());
  }
  if (j.value("version", 0) != 1) throw IoError("slot file " + path.string() + ": unsupported version");
  std::vector<SlotEntry> slots;
  for (const auto& s : j.at("slots")) {
    SlotEntry e;
    e.slot_id = s.at("slot_id").get<int>();
    e.node_id = s.at("node_id").get<std::string>();
    e.state = s.at("state").get<std::string>() == "busy" ? SlotState::busy : SlotState::free;
    if (!s.at("holder").is_null()) e.holder = s.at("holder").get<std::string>();
    slots.push_back(std::move(e));
  }
  return slots;
}

void store_table(const fs::path& path, const std::vector<SlotEntry>& slots) {
  json j = {{"version", 1}, {"slots", json::array()}};
  for (const auto& s : slots) {
    j["slots"].push_back({{"slot_id", s.slot_id},
                          {"node_id", s.node_id},
                          {"state", to_string(s.state)},
                          {"holder", s.holder ? json(*s.holder) : json(nullptr)}});
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out.flush()) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

std::string to_string(SlotState state) { return state == SlotState::busy ? "busy" : "free"; }

SlotFile::SlotFile(fs::path path) : path_(std::move(path)) {}

fs::path SlotFile::lock_path() const {
  auto p = path_;
  p += ".lock";
  return p;
}

void SlotFile::initialize() const {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  FileLock lock(lock_path());
  if (!fs::exists(path_)) store_table(path_, {});
}

std::vector<SlotEntry> SlotFile::read() const {
  FileLock lock(lock_path());
  return load_table(path_);
}

std::vector<SlotEntry> SlotFile::add_node(const std::string& node_id, std::size_t slots) const {
  FileLock lock(lock_path());
  auto table = load_table(path_);
  if (std::any_of(table.begin(), table.end(), [&](const SlotEntry& e) { return e.node_id == node_id; })) {
    throw ConfigError("node '" + node_id + "' already has slots in " + path_.string());
  }
  int next_id = 0;
  for (const auto& e : table) next_id = std::max(next_id, e.slot_id + 1);
  std::vector<SlotEntry> added;
  for (std::size_t i = 0; i < slots; ++i) {
    added.push_back({next_id++, node_id, SlotState::free, std::nullopt});
    table.push_back(added.back());
  }
  store_table(path_, table);
  return added;
}

void SlotFile::remove_node(const std::string& node_id) const {
  FileLock lock(lock_path());
  auto table = load_table(path_);
  std::erase_if(table, [&](const SlotEntry& e) { return e.node_id == node_id; });
  store_table(path_, table);
}

std::optional<std::vector<SlotEntry>> SlotFile::try_acquire(const std::string& task_id, std::size_t n,
                                                            const std::string& node_id) const {
  if (n == 0) throw ConfigError("cannot acquire zero slots");
  FileLock lock(lock_path());
  auto table = load_table(path_);

  // Free slot indices per node, in table order.
  std::vector<std::string> node_order;
  std::map<std::string, std::vector<std::size_t>> free_by_node;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table[i];
    if (!node_id.empty() && e.node_id != node_id) continue;
    if (!free_by_node.contains(e.node_id)) node_order.push_back(e.node_id);
    auto& list = free_by_node[e.node_id];
    if (e.state == SlotState::free) list.push_back(i);
  }
  for (const auto& node : node_order) {
    const auto& free = free_by_node[node];
    if (free.size() < n) continue;
    std::vector<SlotEntry> taken;
    for (std::size_t k = 0; k < n; ++k) {
      auto& e = table[free[k]];
      e.state = SlotState::busy;
      e.holder = task_id;
      taken.push_back(e);
    }
    store_table(path_, table);
    return taken;
  }
  return std::nullopt;
}

std::chrono::milliseconds SlotFile::backoff(std::size_t attempt) {
  return std::chrono::milliseconds(std::min<std::size_t>(10 * std::max<std::size_t>(attempt, 1), 200));
}

std::optional<std::vector<SlotEntry>> SlotFile::acquire(const std::string& task_id, std::size_t n,
                                                        const AcquireOptions& options) const {
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t attempt = 1;; ++attempt) {
    if (auto slots = try_acquire(task_id, n, options.node_id)) return slots;
    if (options.stop.stop_requested()) return std::nullopt;
    auto wake = std::chrono::steady_clock::now() + backoff(attempt);
    if (options.max_wait.count() > 0) {
      const auto limit = start + options.max_wait;
      if (std::chrono::steady_clock::now() >= limit) return std::nullopt;
      wake = std::min(wake, limit);
    }
    if (!sleep_until(wake, options.stop)) return std::nullopt;
  }
}

std::size_t SlotFile::release(const std::string& task_id) const {
  FileLock lock(lock_path());
  auto table = load_table(path_);
  std::size_t released = 0;
  for (auto& e : table) {
    if (e.holder == task_id) {
      e.state = SlotState::free;
      e.holder.reset();
      ++released;
    }
  }
  if (released == 0) {
    log::warn("release: task '" + task_id + "' holds no slots in " + path_.string());
    return 0;
  }
  store_table(path_, table);
  return released;
}

std::size_t SlotFile::repair(const std::optional<std::string>& holder) const {
  FileLock lock(lock_path());
  auto table = load_table(path_);
  std::size_t repaired = 0;
  for (auto& e : table) {
    if (e.state != SlotState::busy) continue;
    if (holder && e.holder != holder) continue;
    e.state = SlotState::free;
    e.holder.reset();
    ++repaired;
  }
  if (repaired > 0) store_table(path_, table);
  return repaired;
}

}  // namespace ptyfed::compute
