#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mcep {

/// Worker count: MCEP_THREADS env var if set, else hardware concurrency, min 1.
inline unsigned thread_count() {
  if (const char* env = std::getenv("MCEP_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw >= 1 ? hw : 1u;
}

/// Runs fn(i) for i in [0, n). Results must be written to per-index slots so
/// the outcome is independent of scheduling; reductions happen sequentially
/// after the loop. Runs inline when only one worker is available.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned workers = thread_count()) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  unsigned k = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  pool.reserve(k - 1);
  for (unsigned w = 1; w < k; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

}  // namespace mcep
