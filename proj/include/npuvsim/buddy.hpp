#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "npuvsim/types.hpp"

namespace npuvsim {

// Power-of-two buddy allocator over the NPU's global memory. Offsets are
// byte offsets from the HBM base; freeing merges buddies eagerly.
class BuddyAllocator {
 public:
  BuddyAllocator(std::uint64_t total_bytes, std::uint64_t min_block_bytes)
      : total_(total_bytes), min_block_(min_block_bytes) {
    if (total_bytes == 0 || (total_bytes & (total_bytes - 1)) != 0 ||
        (min_block_bytes & (min_block_bytes - 1)) != 0 ||
        min_block_bytes > total_bytes) {
      raise(ErrorCode::ConfigError, "buddy pool sizes must be powers of two");
    }
    free_[total_bytes].insert(0);
  }

  static std::uint64_t round_up_pow2(std::uint64_t v) {
    std::uint64_t p = 1;
    while (p < v) p <<= 1;
    return p;
  }

  // Allocates one block of exactly `size` bytes (must be a power of two,
  // >= min block). Returns the byte offset.
  std::uint64_t allocate(std::uint64_t size) {
    if (size < min_block_) size = min_block_;
    if ((size & (size - 1)) != 0) {
      raise(ErrorCode::ConfigError, "buddy allocation size must be a power of two");
    }
    std::uint64_t order = size;
    while (order <= total_ && (free_.find(order) == free_.end() || free_[order].empty())) {
      order <<= 1;
    }
    if (order > total_) {
      raise(ErrorCode::OutOfMemory,
            "no free block of " + std::to_string(size) + " bytes");
    }
    std::uint64_t off = *free_[order].begin();
    free_[order].erase(off);
    while (order > size) {
      order >>= 1;
      free_[order].insert(off + order);  // upper buddy stays free
    }
    live_[off] = size;
    return off;
  }

  void release(std::uint64_t off) {
    auto it = live_.find(off);
    if (it == live_.end()) {
      raise(ErrorCode::ConfigError, "release of unallocated offset " + std::to_string(off));
    }
    std::uint64_t size = it->second;
    live_.erase(it);
    while (size < total_) {
      std::uint64_t buddy = off ^ size;
      auto& level = free_[size];
      auto bit = level.find(buddy);
      if (bit == level.end()) break;
      level.erase(bit);
      off = off < buddy ? off : buddy;
      size <<= 1;
    }
    free_[size].insert(off);
  }

  std::uint64_t total_bytes() const { return total_; }
  std::uint64_t min_block_bytes() const { return min_block_; }

  std::uint64_t live_bytes() const {
    std::uint64_t s = 0;
    for (const auto& [off, size] : live_) s += size;
    return s;
  }

  std::uint64_t free_bytes() const {
    std::uint64_t s = 0;
    for (const auto& [order, offs] : free_) s += order * offs.size();
    return s;
  }

  std::size_t live_blocks() const { return live_.size(); }

  // Free + live bytes always cover the pool; blocks never overlap.
  bool invariant_holds() const {
    if (live_bytes() + free_bytes() != total_) return false;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    for (const auto& [off, size] : live_) spans.push_back({off, size});
    for (const auto& [order, offs] : free_) {
      for (auto off : offs) spans.push_back({off, order});
    }
    std::sort(spans.begin(), spans.end());
    std::uint64_t cursor = 0;
    for (const auto& [off, size] : spans) {
      if (off != cursor) return false;
      cursor = off + size;
    }
    return cursor == total_;
  }

 private:
  std::uint64_t total_;
  std::uint64_t min_block_;
  std::map<std::uint64_t, std::set<std::uint64_t>> free_;  // size -> offsets
  std::map<std::uint64_t, std::uint64_t> live_;            // offset -> size
};

}  // namespace npuvsim
