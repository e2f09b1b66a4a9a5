#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace coin {

// Worker-thread budget. Resolution order: thread-local override (used by
// --parallel-seeds workers and --deterministic), COIN_THREADS env var,
// hardware concurrency.
inline int& thread_override() {
  thread_local int n = 0;  // 0 = no override
  return n;
}

inline int max_threads() {
  if (int t = thread_override(); t > 0) return t;
  static const int env_threads = [] {
    if (const char* s = std::getenv("COIN_THREADS")) {
      int v = std::atoi(s);
      if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
  }();
  return env_threads;
}

inline void set_thread_override(int n) { thread_override() = n; }

// Static contiguous partition of [0, n) across workers. fn(begin, end) runs
// on each chunk; chunk boundaries depend only on n and the worker count, so
// per-row results are reproducible for a fixed thread budget.
template <class F>
void parallel_for(std::size_t n, std::size_t min_per_thread, F&& fn) {
  if (n == 0) return;
  int nt = max_threads();
  if (min_per_thread == 0) min_per_thread = 1;
  std::size_t usable = (n + min_per_thread - 1) / min_per_thread;
  nt = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(nt), usable));
  if (nt <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(nt) - 1);
  for (int t = 1; t < nt; ++t) {
    std::size_t b = chunk * static_cast<std::size_t>(t);
    if (b >= n) break;
    std::size_t e = std::min(n, b + chunk);
    workers.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& w : workers) w.join();
}

}  // namespace coin
