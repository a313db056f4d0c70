#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace kicklab {

/// Number of items grouped into one reduction block. Fixed so that the block
/// partition, and therefore every floating-point reduction order, does not
/// depend on the worker count.
inline constexpr std::size_t kReductionBlock = 256;

/// Runs body(i) for i in [0, n) on `workers` threads using a static
/// interleaved partition. The body must only write to slots owned by i.
/// The first exception thrown by any worker (lowest index wins) is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
  const std::size_t w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::mutex mutex;
  std::exception_ptr first_error;
  std::size_t first_index = n;
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += w) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mutex);
          if (i < first_index) {
            first_index = i;
            first_error = std::current_exception();
          }
          return;
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Number of fixed-size reduction blocks covering n items.
inline std::size_t block_count(std::size_t n) { return (n + kReductionBlock - 1) / kReductionBlock; }

/// Runs block_body(b, begin, end) over fixed blocks in parallel. Callers keep
/// one partial result per block and combine them in block order afterwards.
inline void parallel_blocks(std::size_t n, int workers,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& block_body) {
  parallel_for(block_count(n), workers, [&](std::size_t b) {
    const std::size_t begin = b * kReductionBlock;
    const std::size_t end = std::min(n, begin + kReductionBlock);
    block_body(b, begin, end);
  });
}

}  // namespace kicklab
