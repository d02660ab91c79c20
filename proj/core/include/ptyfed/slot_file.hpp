#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

namespace ptyfed::compute {

enum class SlotState { free, busy };

struct SlotEntry {
  int slot_id = 0;
  std::string node_id;
  SlotState state = SlotState::free;
  std::optional<std::string> holder;

  friend bool operator==(const SlotEntry&, const SlotEntry&) = default;
};

struct AcquireOptions {
  // Restricts placement to one node; empty means any node.
  std::string node_id;
  std::stop_token stop;
  // Gives up after this long; zero waits indefinitely.
  std::chrono::milliseconds max_wait{0};
};

// Accelerator-slot table shared by every worker on a host.
//
// On disk: UTF-8 JSON {"version": 1, "slots": [{"slot_id", "node_id", "state", "holder"}]},
// replaced atomically (temp file + rename) on every change. Mutual exclusion uses an
// open-file-description fcntl write lock on the sibling "<path>.lock" file, which excludes
// other processes and other threads alike since every operation opens its own description.
class SlotFile {
 public:
  explicit SlotFile(std::filesystem::path path);

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path lock_path() const;

  // Creates an empty table if none exists.
  void initialize() const;

  std::vector<SlotEntry> read() const;

  // Appends `slots` free entries for node_id; returns them.
  std::vector<SlotEntry> add_node(const std::string& node_id, std::size_t slots) const;
  void remove_node(const std::string& node_id) const;

  // One locked attempt: marks n free slots of a single node busy for task_id, or returns
  // nothing and leaves the table untouched.
  std::optional<std::vector<SlotEntry>> try_acquire(const std::string& task_id, std::size_t n,
                                                    const std::string& node_id = {}) const;

  // Retries try_acquire with backoff 10 ms x attempt, capped at 200 ms. Returns nothing
  // only when stopped or max_wait elapsed; never returns a partial set.
  std::optional<std::vector<SlotEntry>> acquire(const std::string& task_id, std::size_t n,
                                                const AcquireOptions& options = {}) const;

  // Frees every slot held by task_id; returns how many. Releasing nothing logs a warning.
  std::size_t release(const std::string& task_id) const;

  // Frees busy slots left behind by dead holders: all of them, or only those of `holder`.
  std::size_t repair(const std::optional<std::string>& holder = std::nullopt) const;

  static std::chrono::milliseconds backoff(std::size_t attempt);

 private:
  std::filesystem::path path_;
};

std::string to_string(SlotState state);

}  // namespace ptyfed::compute
