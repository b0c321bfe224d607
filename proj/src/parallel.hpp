#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace lmd::detail {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. fn must not
/// throw; each index is processed exactly once.
template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, Fn &&fn) {
  const auto threads = std::min<std::size_t>(std::max(workers, 1u), count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (auto i = next.fetch_add(1); i < count; i = next.fetch_add(1))
        fn(i);
    });
}

} // namespace lmd::detail
