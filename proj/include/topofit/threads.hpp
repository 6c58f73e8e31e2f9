#pragma once

#include <thread>
#include <vector>

#include "topofit/core.hpp"

namespace topofit {

// Splits [0, n) into `workers` contiguous chunks and runs
// fn(worker_id, begin, end) on each. Chunk boundaries depend only on n and
// the worker count, and callers merge per-worker results in worker order, so
// reductions are reproducible. workers == 1 runs inline.
template <typename Fn>
void parallel_chunks(int n, int workers, Fn&& fn) {
  check(workers >= 1, "worker count must be >= 1");
  if (n <= 0) return;
  workers = std::min(workers, n);
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  const int base = n / workers, extra = n % workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  int begin = 0;
  for (int w = 0; w < workers; ++w) {
    const int len = base + (w < extra ? 1 : 0);
    const int end = begin + len;
    pool.emplace_back([&fn, w, begin, end] { fn(w, begin, end); });
    begin = end;
  }
  for (auto& t : pool) t.join();
}

}  // namespace topofit
