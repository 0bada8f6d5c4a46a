#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

#if defined(__linux__)
#include <sched.h>
#endif

namespace d2gv {

/// Worker count used by the data-parallel kernels. 0 means "hardware".
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{0};
  return n;
}

inline void set_num_threads(int n) { thread_setting().store(std::max(0, n)); }

/// CPUs this process may run on (affinity mask on Linux).
inline int available_cpus() {
#if defined(__linux__)
  cpu_set_t set;
  if (sched_getaffinity(0, sizeof(set), &set) == 0) return std::max(1, CPU_COUNT(&set));
#endif
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

inline int num_threads() {
  const int n = thread_setting().load();
  if (n > 0) return n;
  static const int cpus = available_cpus();
  return cpus;
}

/// Runs fn(i) for i in [0, count). Tasks are handed out in contiguous
/// blocks; callers must not depend on execution order, only on which task
/// owns which output.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, int threads = 0) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(threads > 0 ? threads : num_threads()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t block = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * block;
    const std::size_t hi = std::min(count, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

}  // namespace d2gv
