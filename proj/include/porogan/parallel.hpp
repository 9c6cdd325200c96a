#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace porogan {

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> n{1};
  return n;
}
}  // namespace detail

/// Worker count used by parallel_for. 1 (the default) runs everything inline,
/// which is the deterministic reference mode used by the tests.
inline unsigned num_threads() { return detail::thread_setting().load(); }

inline void set_num_threads(unsigned n) {
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  detail::thread_setting().store(n);
}

/// Runs body(i) for i in [begin, end) using a static block partition. Every
/// index is visited by exactly one thread, so outputs written per index are
/// identical regardless of the thread count.
template <typename Body>
void parallel_for(std::size_t begin, std::size_t end, Body&& body) {
  if (end <= begin) return;
  const std::size_t count = end - begin;
  const std::size_t workers = std::min<std::size_t>(num_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace porogan
