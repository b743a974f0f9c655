#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace ctrlgs {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items are
/// independent; callers that reduce results do so per item, in item order,
/// so output never depends on the worker count.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min(threads, n));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace ctrlgs
