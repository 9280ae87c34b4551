// Minimal fork-join helper. Work items must be independent; callers that
// need determinism merge per-item results in a fixed order afterwards.
#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tracefem {

inline int effective_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : (int)hw;
}

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  int nt = effective_threads(threads);
  if (nt <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  nt = (int)std::min<std::size_t>((std::size_t)nt, n);
  std::vector<std::thread> pool;
  pool.reserve((std::size_t)nt);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = (std::size_t)t; i < n; i += (std::size_t)nt) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace tracefem
