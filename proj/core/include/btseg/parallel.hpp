#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace btseg {

/// Worker count: BTSEG_JOBS if set, else hardware concurrency.
inline int default_jobs() {
  if (const char* env = std::getenv("BTSEG_JOBS")) {
    const int j = std::atoi(env);
    if (j > 0) return j;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

/// Runs fn(i) for i in [0, n). Work items must write to disjoint state; the
/// result is then independent of scheduling.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn, int jobs = default_jobs()) {
  if (n <= 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  const int workers = int(std::min<std::int64_t>(jobs, n));
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    threads.emplace_back([&]() {
      for (;;) {
        const std::int64_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace btseg
