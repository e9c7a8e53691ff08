#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace caedet {

/// Worker count for kernels: CAEDET_THREADS if set and positive, else the
/// hardware concurrency.
inline std::size_t kernel_threads() {
  static const std::size_t count = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CAEDET_THREADS")) {
      try {
        long v = std::stol(env);
        if (v > 0) return static_cast<std::size_t>(v);
      } catch (...) {
      }
    }
    return hw;
  }();
  return count;
}

/// Runs fn(i) for i in [begin, end). Each index is handled by exactly one
/// worker and fn must only write state owned by that index, so results do not
/// depend on the number of workers. Small jobs (total_work below the cutoff)
/// stay on the calling thread.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t total_work, Fn&& fn) {
  constexpr std::size_t kMinWorkPerThread = 1 << 18;
  const std::size_t n = end > begin ? end - begin : 0;
  std::size_t workers = std::min({kernel_threads(), n, total_work / kMinWorkPerThread});
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::size_t i = begin; i < std::min(end, begin + chunk); ++i) fn(i);
  for (auto& t : pool) t.join();
}

}  // namespace caedet
