#pragma once

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <stop_token>
#include <thread>

namespace ptyfed {

// Seconds since the Unix epoch; the common time base for every journal.
inline double wall_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

// Sleeps until the deadline or until stop is requested. Returns false when interrupted.
inline bool sleep_until(std::chrono::steady_clock::time_point deadline, std::stop_token stop = {}) {
  if (!stop.stop_possible()) {
    std::this_thread::sleep_until(deadline);
    return true;
  }
  std::mutex m;
  std::condition_variable_any cv;
  std::unique_lock lock(m);
  cv.wait_until(lock, stop, deadline, [] { return false; });
  return !stop.stop_requested();
}

inline bool sleep_for(double seconds, std::stop_token stop = {}) {
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(seconds > 0.0 ? seconds : 0.0));
  return sleep_until(deadline, stop);
}

}  // namespace ptyfed
