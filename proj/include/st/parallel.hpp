#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace st {

// Worker cap: min(ST_THREADS, hardware_concurrency), at least 1. Read per
// call; results never depend on it, only wall time does.
inline int max_threads() {
  int hw = int(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("ST_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) hw = std::min(hw, v);
  }
  return hw;
}

// Runs fn(i) for i in [0,n). Work items are claimed from a shared counter but
// each item's output must go to its own slot; callers reduce slots in index
// order so results do not depend on the thread count.
template <typename F>
void parallel_for(int n, F&& fn) {
  if (n <= 0) return;
  int workers = std::min(max_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto body = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers - 1));
  for (int t = 1; t < workers; ++t) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
}

}  // namespace st
