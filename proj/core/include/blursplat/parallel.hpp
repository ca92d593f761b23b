// Block-based parallel loops. Work is cut into fixed-size blocks independent
// of the thread count, so any reduction that merges per-block partials in
// block order produces the same bits no matter how many threads ran.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace blursplat {

inline int default_thread_count() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Invokes fn(block_index, begin, end) for every block of at most block_size
// items. Blocks are claimed dynamically; fn must not touch shared state
// except per-block slots.
inline void parallel_for_blocks(
    std::size_t count, std::size_t block_size, int threads,
    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  if (block_size == 0) block_size = 1;
  const std::size_t num_blocks = (count + block_size - 1) / block_size;

  if (threads <= 1 || num_blocks == 1) {
    for (std::size_t b = 0; b < num_blocks; ++b) {
      const std::size_t begin = b * block_size;
      fn(b, begin, std::min(begin + block_size, count));
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= num_blocks) return;
      const std::size_t begin = b * block_size;
      fn(b, begin, std::min(begin + block_size, count));
    }
  };

  const int n = std::min<std::size_t>(threads, num_blocks);
  std::vector<std::thread> pool;
  pool.reserve(n - 1);
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

inline std::size_t num_blocks_for(std::size_t count, std::size_t block_size) {
  if (count == 0) return 0;
  if (block_size == 0) block_size = 1;
  return (count + block_size - 1) / block_size;
}

}  // namespace blursplat
