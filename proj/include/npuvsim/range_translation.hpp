#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "npuvsim/types.hpp"

namespace npuvsim {

using Addr = std::uint64_t;

constexpr Addr kAddrBits = 48;
constexpr Addr kAddrLimit = Addr{1} << kAddrBits;

struct Perms {
  bool read = true;
  bool write = true;
};

// One variable-size virtual->physical range. last_v records the index of
// the next entry accessed in the previous iteration (loop-reset hint).
struct RttEntry {
  Addr vaddr = 0;
  Addr paddr = 0;
  std::uint32_t size = 0;
  Perms perms;
  std::optional<std::size_t> last_v;

  bool covers(Addr va) const { return va >= vaddr && va < vaddr + size; }
};

struct MemBlock {
  Addr vaddr = 0;
  Addr paddr = 0;
  std::uint32_t size = 0;
  Perms perms;
};

// Sorted, disjoint list of ranges plus the current-entry cursor (RTT_CUR,
// wrapping from RTT_END back to RTT_BASE during scans).
struct RangeTranslationTable {
  std::vector<RttEntry> entries;
  std::size_t rtt_cur = 0;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

inline RangeTranslationTable build_rtt(const std::vector<MemBlock>& blocks) {
  RangeTranslationTable t;
  for (const MemBlock& b : blocks) {
    if (b.size == 0 || b.vaddr + b.size > kAddrLimit || b.paddr + b.size > kAddrLimit) {
      raise(ErrorCode::OverlappingRanges, "range size invalid or wraps 48 bits");
    }
    RttEntry e;
    e.vaddr = b.vaddr;
    e.paddr = b.paddr;
    e.size = b.size;
    e.perms = b.perms;
    t.entries.push_back(e);
  }
  std::sort(t.entries.begin(), t.entries.end(),
            [](const RttEntry& a, const RttEntry& b) { return a.vaddr < b.vaddr; });
  for (std::size_t i = 1; i < t.entries.size(); ++i) {
    if (t.entries[i].vaddr < t.entries[i - 1].vaddr + t.entries[i - 1].size) {
      raise(ErrorCode::OverlappingRanges,
            "ranges overlap at vaddr " + std::to_string(t.entries[i].vaddr));
    }
  }
  t.rtt_cur = 0;
  return t;
}

struct RttLookup {
  std::size_t index = 0;
  Addr paddr = 0;
  std::size_t scan_steps = 0;  // entry fetches beyond the current entry
};

// Cursor-scan lookup: current entry first, then the last_v hint (one step),
// then a circular forward scan. On a hit the previous entry's last_v is
// rewritten and RTT_CUR moves to the hit.
inline RttLookup rtt_lookup(RangeTranslationTable& table, Addr vaddr) {
  if (table.empty()) raise(ErrorCode::TranslationFault, "empty translation table");
  const std::size_t n = table.size();
  const std::size_t prev = table.rtt_cur;

  auto hit = [&](std::size_t idx, std::size_t steps) {
    if (idx != prev) {
      table.entries[prev].last_v = idx;
      table.rtt_cur = idx;
    }
    return RttLookup{idx, table.entries[idx].paddr + (vaddr - table.entries[idx].vaddr),
                     steps};
  };

  if (table.entries[prev].covers(vaddr)) return hit(prev, 0);

  std::size_t steps = 0;
  if (table.entries[prev].last_v) {
    ++steps;
    std::size_t h = *table.entries[prev].last_v;
    if (h < n && table.entries[h].covers(vaddr)) return hit(h, steps);
  }
  for (std::size_t off = 1; off < n; ++off) {
    std::size_t idx = (prev + off) % n;
    ++steps;
    if (table.entries[idx].covers(vaddr)) return hit(idx, steps);
  }
  raise(ErrorCode::TranslationFault, "vaddr " + std::to_string(vaddr) + " in no range");
}

struct TranslationCosts {
  Cycle range_miss_penalty = 20;   // base cost of a range-TLB miss
  Cycle entry_fetch_cost = 20;     // per RTT entry fetched during the scan
  Cycle page_walk_cost = 100;      // full multi-level walk on a page-TLB miss
  std::uint32_t page_size = 4096;
};

// Small fully-associative LRU cache of RTT entry indices (4 entries of 144
// bits each in the reference hardware).
class RangeTlb {
 public:
  explicit RangeTlb(std::size_t capacity = 4) : capacity_(capacity) {}

  static constexpr int kEntryBits = 144;

  std::size_t capacity() const { return capacity_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t hits() const { return hits_; }

  std::optional<std::size_t> find(const RangeTranslationTable& table, Addr vaddr) {
    for (auto it = lru_.begin(); it != lru_.end(); ++it) {
      if (*it < table.size() && table.entries[*it].covers(vaddr)) {
        std::size_t idx = *it;
        lru_.erase(it);
        lru_.push_front(idx);
        return idx;
      }
    }
    return std::nullopt;
  }

  void insert(std::size_t idx) {
    for (auto it = lru_.begin(); it != lru_.end(); ++it) {
      if (*it == idx) {
        lru_.erase(it);
        break;
      }
    }
    lru_.push_front(idx);
    while (lru_.size() > capacity_) lru_.pop_back();
  }

  void count_hit() { ++hits_; }
  void count_miss() { ++misses_; }

  void flush() { lru_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<std::size_t> lru_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

struct AccessResult {
  Addr paddr = 0;
  Cycle stall_cycles = 0;
};

inline AccessResult range_tlb_access(RangeTlb& tlb, RangeTranslationTable& table,
                                     Addr vaddr, const TranslationCosts& costs) {
  if (auto idx = tlb.find(table, vaddr)) {
    tlb.count_hit();
    const RttEntry& e = table.entries[*idx];
    return {e.paddr + (vaddr - e.vaddr), 0};
  }
  tlb.count_miss();
  RttLookup l = rtt_lookup(table, vaddr);
  tlb.insert(l.index);
  return {l.paddr, costs.range_miss_penalty + l.scan_steps * costs.entry_fetch_cost};
}

// Fixed-size-page baseline built over the same blocks as the RTT.
class PageTlb {
 public:
  explicit PageTlb(std::size_t capacity = 4) : capacity_(capacity) {}

  std::uint64_t misses() const { return misses_; }
  std::uint64_t hits() const { return hits_; }

  bool access(Addr vpn) {
    for (auto it = lru_.begin(); it != lru_.end(); ++it) {
      if (*it == vpn) {
        lru_.erase(it);
        lru_.push_front(vpn);
        ++hits_;
        return true;
      }
    }
    ++misses_;
    lru_.push_front(vpn);
    while (lru_.size() > capacity_) lru_.pop_back();
    return false;
  }

  void flush() { lru_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<Addr> lru_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

inline AccessResult page_tlb_access(PageTlb& tlb, const RangeTranslationTable& table,
                                    Addr vaddr, const TranslationCosts& costs) {
  // The page table mirrors the RTT blocks; binary search is the oracle-side
  // lookup and is exact here since entries are sorted and disjoint.
  auto it = std::upper_bound(table.entries.begin(), table.entries.end(), vaddr,
                             [](Addr va, const RttEntry& e) { return va < e.vaddr; });
  if (it == table.entries.begin() || !std::prev(it)->covers(vaddr)) {
    raise(ErrorCode::TranslationFault, "vaddr " + std::to_string(vaddr) + " unmapped");
  }
  const RttEntry& e = *std::prev(it);
  Addr vpn = vaddr / costs.page_size;
  bool hit = tlb.access(vpn);
  return {e.paddr + (vaddr - e.vaddr), hit ? 0 : costs.page_walk_cost};
}

struct DmaSegment {
  Addr paddr = 0;
  std::uint64_t len = 0;
};

struct DmaTranslation {
  std::vector<DmaSegment> segments;  // ordered by vaddr
  Cycle stall_cycles = 0;
};

// Splits [vaddr, vaddr+len) at range boundaries and translates each segment
// through the range TLB.
inline DmaTranslation translate_dma(RangeTranslationTable& table, RangeTlb& tlb,
                                    Addr vaddr, std::uint64_t len, bool write,
                                    const TranslationCosts& costs) {
  DmaTranslation out;
  Addr cur = vaddr;
  const Addr end = vaddr + len;
  while (cur < end) {
    AccessResult a = range_tlb_access(tlb, table, cur, costs);
    // Identify the covering entry to find the segment boundary and perms.
    std::size_t idx = 0;
    for (; idx < table.size(); ++idx) {
      if (table.entries[idx].covers(cur)) break;
    }
    const RttEntry& e = table.entries[idx];
    if (write && !e.perms.write) {
      raise(ErrorCode::PermissionDenied,
            "write to read-only range at vaddr " + std::to_string(cur));
    }
    if (!write && !e.perms.read) {
      raise(ErrorCode::PermissionDenied,
            "read from unreadable range at vaddr " + std::to_string(cur));
    }
    Addr seg_end = std::min<Addr>(end, e.vaddr + e.size);
    out.segments.push_back({a.paddr, seg_end - cur});
    out.stall_cycles += a.stall_cycles;
    cur = seg_end;
  }
  return out;
}

// Per-VM memory bandwidth accounting over a monitored time window.
class AccessCounter {
 public:
  AccessCounter() = default;
  AccessCounter(Cycle window_cycles, std::optional<std::uint64_t> cap)
      : window_cycles_(window_cycles), cap_(cap) {}

  struct Decision {
    bool admitted = true;
    Cycle delayed_until = 0;  // first cycle of the next window when delayed
  };

  Decision record_and_throttle(std::uint64_t bytes, Cycle now) {
    roll(now);
    if (!cap_ || bytes_in_window_ + bytes <= *cap_) {
      bytes_in_window_ += bytes;
      total_bytes_ += bytes;
      return {true, 0};
    }
    return {false, (window_index_ + 1) * window_cycles_};
  }

  // Largest request admissible right now (for callers that split).
  std::uint64_t available(Cycle now) {
    roll(now);
    if (!cap_) return UINT64_MAX;
    return *cap_ > bytes_in_window_ ? *cap_ - bytes_in_window_ : 0;
  }

  std::uint64_t total_bytes() const { return total_bytes_; }
  Cycle window_cycles() const { return window_cycles_; }
  std::optional<std::uint64_t> cap() const { return cap_; }

 private:
  void roll(Cycle now) {
    Cycle idx = now / window_cycles_;
    if (idx != window_index_) {
      window_index_ = idx;
      bytes_in_window_ = 0;
    }
  }

  Cycle window_cycles_ = 10000;
  std::optional<std::uint64_t> cap_;
  Cycle window_index_ = 0;
  std::uint64_t bytes_in_window_ = 0;
  std::uint64_t total_bytes_ = 0;
};

}  // namespace npuvsim
