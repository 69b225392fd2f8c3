#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "npuvsim/range_translation.hpp"
#include "npuvsim/routing.hpp"
#include "npuvsim/types.hpp"

namespace npuvsim {

struct ChipConfig {
  int mesh_width = 6;
  int mesh_height = 6;
  std::uint64_t sram_per_core = 30ull << 20;  // 30 MB scratchpad per tile
  std::uint64_t meta_zone = 64ull << 10;      // hypervisor-writable SRAM region
  std::uint32_t flit_bytes = 16;
  Cycle link_cycles_per_flit = 1;
  Cycle hop_latency = 1;
  int hbm_channels = 8;
  std::uint64_t hbm_bytes_per_cycle_per_channel = 90;  // 360 GB/s at 500 MHz
  std::uint64_t macs_per_cycle = 16384;                // 128x128 systolic array
  std::uint64_t sram_bandwidth_bytes_per_cycle = 128;
  std::string frequency = "500MHz";
  std::uint32_t routing_packet_bytes = 2048;
  Cycle vrouter_lookup_cost = 10;          // one-time routing-table lookup
  Cycle per_packet_translation_cost = 2;   // vRouter cost per NoC packet
  Cycle dispatch_base_cost = 2;
  Cycle handshake_flits = 1;               // NoC sync control packet size
  Cycle memory_sync_overhead = 5000;       // per participant of a memory sync
  Cycle bandwidth_window_cycles = 10000;
  TranslationCosts translation;

  MeshDims mesh() const { return {mesh_width, mesh_height}; }
  int cores() const { return mesh_width * mesh_height; }
  std::uint64_t weight_zone() const { return sram_per_core - meta_zone; }
  std::uint64_t hbm_total_rate() const {
    return static_cast<std::uint64_t>(hbm_channels) * hbm_bytes_per_cycle_per_channel;
  }
  // Memory interfaces sit on the west and east mesh edges, one per edge row.
  int total_memory_interfaces() const { return 2 * mesh_height; }
};

struct KernelOp {
  enum class Kind { Matmul, Conv, Copy };
  Kind kind = Kind::Matmul;
  std::uint64_t m = 1, k = 1, n = 1;  // matmul / conv dimension product
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
};

inline Cycle compute_cycles(const KernelOp& op, const ChipConfig& cfg) {
  switch (op.kind) {
    case KernelOp::Kind::Matmul:
    case KernelOp::Kind::Conv: {
      std::uint64_t macs = op.m * op.k * op.n;
      return (macs + cfg.macs_per_cycle - 1) / cfg.macs_per_cycle;
    }
    case KernelOp::Kind::Copy:
      if (op.bytes_in == 0) return 0;
      return (op.bytes_in + cfg.sram_bandwidth_bytes_per_cycle - 1) /
             cfg.sram_bandwidth_bytes_per_cycle;
  }
  return 0;
}

// Pending events ordered by (cycle, insertion sequence); equal-cycle events
// pop in insertion order so the drain is fully deterministic.
class EventQueue {
 public:
  struct Event {
    Cycle cycle;
    std::uint64_t seq;
    int payload;
  };

  void push(Cycle cycle, int payload) { heap_.push({cycle, seq_++, payload}); }

  bool empty() const { return heap_.empty(); }

  Event pop() {
    Event e = heap_.top();
    heap_.pop();
    return e;
  }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.cycle != b.cycle ? a.cycle > b.cycle : a.seq > b.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t seq_ = 0;
};

enum class BroadcastMode { NocVRouter, MemorySync };
enum class VmMode { VNpu, Mig, Uvm, BareMetal };

struct VmMetrics {
  Cycle total_cycles = 0;
  Cycle compute_cycles = 0;
  Cycle noc_busy_cycles = 0;
  Cycle translation_stall_cycles = 0;
  std::uint64_t tlb_misses = 0;
  std::uint64_t hbm_bytes = 0;
  Cycle warmup_cycles = 0;
  std::uint64_t iterations = 0;
  int cores_used = 0;
  double mapping_distance = 0.0;
  bool ged_exact_path = true;
  double fps_equiv() const {
    return total_cycles ? static_cast<double>(iterations) / total_cycles : 0.0;
  }
};

struct Metrics {
  std::map<VmId, VmMetrics> per_vm;
  Cycle chip_cycles = 0;
  Cycle busy_core_cycles = 0;
  int chip_cores = 0;
  std::uint64_t meta_zone_write_violations = 0;
  double utilization() const {
    return chip_cycles && chip_cores
               ? static_cast<double>(busy_core_cycles) / (static_cast<double>(chip_cores) * chip_cycles)
               : 0.0;
  }
};

struct SimTask {
  enum class Kind { DmaLoad, Kernel, Transfer, Broadcast };
  int id = 0;
  Kind kind = Kind::Kernel;
  VmId vm = 0;
  CoreId vcore = 0;            // executing / source virtual core
  CoreId dst_vcore = 0;        // transfers
  std::vector<CoreId> dst_set; // broadcast
  KernelOp op;
  Addr vaddr = 0;
  std::uint64_t bytes = 0;
  BroadcastMode mode = BroadcastMode::NocVRouter;
  std::vector<int> deps;
  std::uint64_t iteration = 0;
  bool warmup = false;
};

// Deterministic cycle-level model of the physical chip: mesh NoC with
// per-link FIFO occupancy, per-core engines, a shared HBM pipe and per-VM
// bandwidth accounting. Virtual NPUs are deployed by the hypervisor; the
// task graph is generated by the workloads module.
class ChipSim {
 public:
  explicit ChipSim(const ChipConfig& cfg) : cfg_(cfg), mesh_(cfg.mesh()) {
    core_rtts_.resize(cfg.cores());
  }

  const ChipConfig& config() const { return cfg_; }
  const MeshDims& mesh() const { return mesh_; }

  struct VmDeployment {
    std::map<CoreId, CoreId> mapping;  // virtual -> physical (may share under TDM)
    std::optional<RoutingTable> table; // present when the mapping is injective
    VmMode mode = VmMode::VNpu;
    std::optional<std::uint64_t> bandwidth_cap_per_window;
    double mapping_distance = 0.0;
    bool ged_exact_path = true;
    bool bypass_translation = false;   // bare-metal parity runs
  };

  // Hyper-mode deployment of meta tables. Checks the meta-zone capacity of
  // every physical core that receives tables.
  void deploy_vm(VmId vm, const VmDeployment& dep,
                 const std::map<CoreId, RangeTranslationTable>& rtts,
                 std::size_t range_tlb_entries = 4) {
    std::uint64_t table_bytes = routing_table_bytes(dep);
    for (const auto& [pcore, rtt] : rtts) {
      std::uint64_t meta = table_bytes + rtt.size() * 18;  // 144-bit entries
      if (meta > cfg_.meta_zone) {
        raise(ErrorCode::MetaZoneOverflow,
              "meta tables need " + std::to_string(meta) + " bytes, meta-zone is " +
                  std::to_string(cfg_.meta_zone));
      }
    }
    vms_[vm] = dep;
    for (const auto& [pcore, rtt] : rtts) {
      core_rtts_[pcore] = rtt;
      core_tlbs_[pcore] = RangeTlb(range_tlb_entries);
    }
    std::optional<std::uint64_t> cap = dep.bandwidth_cap_per_window;
    if (!cap) {
      cap = default_bandwidth_cap(dep);
    }
    counters_[vm] = AccessCounter(cfg_.bandwidth_window_cycles, cap);
  }

  void remove_vm(VmId vm) {
    auto it = vms_.find(vm);
    if (it == vms_.end()) raise(ErrorCode::UnknownVm, "vm " + std::to_string(vm));
    for (const auto& [v, p] : it->second.mapping) {
      core_rtts_[p] = RangeTranslationTable{};
      core_tlbs_.erase(p);
    }
    vms_.erase(it);
    counters_.erase(vm);
  }

  bool has_vm(VmId vm) const { return vms_.count(vm) > 0; }

  const VmDeployment& deployment(VmId vm) const {
    auto it = vms_.find(vm);
    if (it == vms_.end()) raise(ErrorCode::UnknownVm, "vm " + std::to_string(vm));
    return it->second;
  }

  // Guest-visible SRAM write; the meta-zone is hyper-mode only and guest
  // writes into it are rejected and logged.
  bool guest_write_sram(CoreId pcore, std::uint64_t offset, std::uint64_t len) {
    (void)pcore;
    if (offset < cfg_.meta_zone) {
      ++meta_zone_violations_;
      return false;
    }
    (void)len;
    return true;
  }

  CoreId translate(VmId vm, CoreId vcore) const {
    const VmDeployment& d = deployment(vm);
    auto it = d.mapping.find(vcore);
    if (it == d.mapping.end()) {
      raise(ErrorCode::UnmappedVirtualCore,
            "virtual core " + std::to_string(vcore) + " of VM " + std::to_string(vm));
    }
    return it->second;
  }

  std::set<CoreId> vm_physical_cores(VmId vm) const {
    std::set<CoreId> s;
    for (const auto& [v, p] : deployment(vm).mapping) s.insert(p);
    return s;
  }

  // --- task graph construction -------------------------------------------

  int add_dma_load(VmId vm, CoreId vcore, Addr vaddr, std::uint64_t bytes,
                   std::vector<int> deps, std::uint64_t iteration, bool warmup) {
    SimTask t;
    t.kind = SimTask::Kind::DmaLoad;
    t.vm = vm;
    t.vcore = vcore;
    t.vaddr = vaddr;
    t.bytes = bytes;
    t.deps = std::move(deps);
    t.iteration = iteration;
    t.warmup = warmup;
    return push_task(std::move(t));
  }

  int add_kernel(VmId vm, CoreId vcore, const KernelOp& op, std::vector<int> deps,
                 std::uint64_t iteration) {
    SimTask t;
    t.kind = SimTask::Kind::Kernel;
    t.vm = vm;
    t.vcore = vcore;
    t.op = op;
    t.deps = std::move(deps);
    t.iteration = iteration;
    return push_task(std::move(t));
  }

  int add_transfer(VmId vm, CoreId src_vcore, CoreId dst_vcore, std::uint64_t bytes,
                   std::vector<int> deps, std::uint64_t iteration) {
    SimTask t;
    t.kind = SimTask::Kind::Transfer;
    t.vm = vm;
    t.vcore = src_vcore;
    t.dst_vcore = dst_vcore;
    t.bytes = bytes;
    t.deps = std::move(deps);
    t.iteration = iteration;
    return push_task(std::move(t));
  }

  int add_broadcast(VmId vm, CoreId src_vcore, std::vector<CoreId> dst_set,
                    std::uint64_t bytes, BroadcastMode mode, std::vector<int> deps,
                    std::uint64_t iteration) {
    if (dst_set.empty()) raise(ErrorCode::ConfigError, "broadcast needs destinations");
    SimTask t;
    t.kind = SimTask::Kind::Broadcast;
    t.vm = vm;
    t.vcore = src_vcore;
    t.dst_set = std::move(dst_set);
    t.bytes = bytes;
    t.mode = mode;
    t.deps = std::move(deps);
    t.iteration = iteration;
    return push_task(std::move(t));
  }

  void clear_tasks() {
    tasks_.clear();
    reset_runtime();
  }

  // --- simulation ---------------------------------------------------------

  Metrics run() {
    reset_runtime();
    Metrics m;
    m.chip_cores = cfg_.cores();

    std::vector<int> outstanding(tasks_.size(), 0);
    std::vector<std::vector<int>> dependents(tasks_.size());
    std::vector<Cycle> ready_at(tasks_.size(), 0);
    std::vector<char> scheduled(tasks_.size(), 0);
    for (const SimTask& t : tasks_) {
      outstanding[t.id] = static_cast<int>(t.deps.size());
      for (int d : t.deps) dependents[d].push_back(t.id);
    }

    EventQueue q;
    auto schedule = [&](int id, Cycle ready) {
      scheduled[id] = 1;
      Cycle end = execute(tasks_[id], ready, m);
      task_end_[id] = end;
      q.push(end, id);
    };
    for (const SimTask& t : tasks_) {
      if (outstanding[t.id] == 0) schedule(t.id, 0);
    }
    std::size_t completed = 0;
    while (!q.empty()) {
      auto ev = q.pop();
      ++completed;
      for (int dep : dependents[ev.payload]) {
        ready_at[dep] = std::max(ready_at[dep], ev.cycle);
        if (--outstanding[dep] == 0) schedule(dep, ready_at[dep]);
      }
    }
    if (completed != tasks_.size()) {
      raise(ErrorCode::DeadlockDetected,
            std::to_string(tasks_.size() - completed) + " tasks never became ready");
    }

    finalize_metrics(m);
    return m;
  }

 private:
  int push_task(SimTask t) {
    t.id = static_cast<int>(tasks_.size());
    tasks_.push_back(std::move(t));
    return tasks_.back().id;
  }

  std::uint64_t routing_table_bytes(const VmDeployment& dep) const {
    if (!dep.table) return dep.mapping.size() * 4;
    if (dep.table->form == RoutingTable::Form::Compact) return 12;
    return dep.table->entries.size() * 4 + dep.table->directions.size() * 5;
  }

  std::uint64_t default_bandwidth_cap(const VmDeployment& dep) const {
    // Proportional to the memory interfaces adjacent to the VM's cores
    // (west/east edge columns), with a floor of one interface.
    int ifaces = 0;
    for (const auto& [v, p] : dep.mapping) {
      int x = mesh_.x_of(p);
      if (x == 0 || x == mesh_.width - 1) ++ifaces;
    }
    ifaces = std::max(1, std::min(ifaces, cfg_.total_memory_interfaces()));
    std::uint64_t rate = cfg_.hbm_total_rate() * ifaces / cfg_.total_memory_interfaces();
    return rate * cfg_.bandwidth_window_cycles;
  }

  std::uint64_t vm_rate(VmId vm) const {
    auto it = counters_.find(vm);
    if (it == counters_.end() || !it->second.cap()) return cfg_.hbm_total_rate();
    std::uint64_t rate = *it->second.cap() / cfg_.bandwidth_window_cycles;
    return std::max<std::uint64_t>(1, std::min(rate, cfg_.hbm_total_rate()));
  }

  void reset_runtime() {
    core_free_.assign(cfg_.cores(), 0);
    core_last_vcore_.assign(cfg_.cores(), -1);
    core_weight_bytes_.assign(cfg_.cores(), 0);
    link_free_.clear();
    hbm_free_ = 0;
    task_end_.assign(tasks_.size(), 0);
    last_dispatch_ = {-1, -1};
    meta_zone_violations_ = 0;
    vm_stats_.clear();
    for (auto& [vm, c] : counters_) {
      c = AccessCounter(c.window_cycles(), c.cap());
    }
    for (auto& [p, tlb] : core_tlbs_) tlb = RangeTlb(tlb.capacity());
    for (auto& rtt : core_rtts_) {
      rtt.rtt_cur = 0;
      for (auto& e : rtt.entries) e.last_v.reset();
    }
  }

  struct VmRunStats {
    Cycle first_cycle = UINT64_MAX;
    Cycle last_cycle = 0;
    Cycle first_dma_start = UINT64_MAX;
    Cycle weights_resident = 0;
    Cycle compute = 0;
    Cycle noc_busy = 0;
    Cycle stalls = 0;
    std::uint64_t tlb_misses = 0;
    std::uint64_t max_iteration = 0;
    bool any_task = false;
  };

  VmRunStats& stats(VmId vm) { return vm_stats_[vm]; }

  void note_span(VmRunStats& s, Cycle start, Cycle end, std::uint64_t iter) {
    s.any_task = true;
    s.first_cycle = std::min(s.first_cycle, start);
    s.last_cycle = std::max(s.last_cycle, end);
    s.max_iteration = std::max(s.max_iteration, iter);
  }

  // TDM context switch: reloading the incoming virtual core's working set.
  Cycle tdm_switch_cost(VmId vm, CoreId pcore) const {
    std::uint64_t ws = core_weight_shares_.count(pcore)
                           ? core_weight_shares_.at(pcore)
                           : cfg_.weight_zone();
    return ws / vm_rate(vm);
  }

  Cycle execute(const SimTask& t, Cycle ready, Metrics& m) {
    switch (t.kind) {
      case SimTask::Kind::DmaLoad: return exec_dma(t, ready);
      case SimTask::Kind::Kernel: return exec_kernel(t, ready, m);
      case SimTask::Kind::Transfer: return exec_transfer(t, ready);
      case SimTask::Kind::Broadcast: return exec_broadcast(t, ready);
    }
    return ready;
  }

  Cycle occupy_hbm(VmId vm, std::uint64_t bytes, Cycle start, Cycle* out_start,
                   VmRunStats& s, std::uint64_t rate_cap = 0) {
    // Per-VM window throttling: requests past the cap wait for the next
    // window. The chip-level pipe serializes at the aggregate HBM rate.
    AccessCounter& ctr = counters_.at(vm);
    Cycle t = std::max(start, hbm_free_);
    std::uint64_t remaining = bytes;
    std::uint64_t rate = vm_rate(vm);
    if (rate_cap) rate = std::min(rate, rate_cap);
    Cycle first_start = 0;
    bool started = false;
    while (remaining > 0) {
      std::uint64_t avail = ctr.available(t);
      if (avail == 0) {
        auto d = ctr.record_and_throttle(remaining, t);
        t = std::max(t, d.delayed_until);
        continue;
      }
      std::uint64_t chunk = std::min<std::uint64_t>(remaining, avail);
      ctr.record_and_throttle(chunk, t);
      if (!started) {
        first_start = t;
        started = true;
      }
      t += std::max<Cycle>(1, chunk / rate);
      remaining -= chunk;
    }
    hbm_free_ = std::max(hbm_free_, first_start + bytes / cfg_.hbm_total_rate());
    if (out_start) *out_start = first_start;
    (void)s;
    return t;
  }

  Cycle exec_dma(const SimTask& t, Cycle ready) {
    VmRunStats& s = stats(t.vm);
    const VmDeployment& dep = deployment(t.vm);
    CoreId p = translate(t.vm, t.vcore);
    Cycle start = std::max(ready, core_free_[p]);

    if (core_weight_bytes_[p] + t.bytes > cfg_.weight_zone() &&
        deployment(t.vm).mode != VmMode::Mig) {
      raise(ErrorCode::SramOverflow,
            "core " + std::to_string(p) + " weight zone exceeded");
    }

    Cycle stall = 0;
    if (!dep.bypass_translation) {
      RangeTlb& tlb = core_tlbs_.at(p);
      std::uint64_t before = tlb.misses();
      DmaTranslation tr = translate_dma(core_rtts_[p], tlb, t.vaddr, t.bytes,
                                        /*write=*/false, cfg_.translation);
      stall = tr.stall_cycles;
      s.tlb_misses += tlb.misses() - before;
    }
    s.stalls += stall;
    Cycle xfer_start = 0;
    Cycle end = occupy_hbm(t.vm, t.bytes, start + stall, &xfer_start, s);
    core_weight_bytes_[p] = std::min<std::uint64_t>(cfg_.weight_zone(),
                                                    core_weight_bytes_[p] + t.bytes);
    core_free_[p] = end;
    s.first_dma_start = std::min(s.first_dma_start, start);
    if (t.warmup) s.weights_resident = std::max(s.weights_resident, end);
    note_span(s, start, end, t.iteration);
    return end;
  }

  Cycle exec_kernel(const SimTask& t, Cycle ready, Metrics& m) {
    VmRunStats& s = stats(t.vm);
    const VmDeployment& dep = deployment(t.vm);
    CoreId p = translate(t.vm, t.vcore);

    // Instruction dispatch through the controller's vRouter: repeated
    // dispatches to the same virtual core skip the table lookup.
    Cycle dispatch = 0;
    std::pair<int, int> key{t.vm, t.vcore};
    if (!dep.bypass_translation && last_dispatch_ != key) {
      dispatch += cfg_.dispatch_base_cost + cfg_.vrouter_lookup_cost;
    }
    last_dispatch_ = key;
    dispatch += (1 + mesh_.x_of(p) + mesh_.y_of(p)) * cfg_.hop_latency;

    Cycle start = std::max(ready + dispatch, core_free_[p]);
    // Time-division multiplexing when several virtual cores share a core.
    if (core_last_vcore_[p] != -1 && core_last_vcore_[p] != t.vcore) {
      start += tdm_switch_cost(t.vm, p);
    }
    core_last_vcore_[p] = t.vcore;

    Cycle dur = compute_cycles(t.op, cfg_);
    Cycle end = start + dur;
    core_free_[p] = end;
    s.compute += dur;
    m.busy_core_cycles += dur;
    note_span(s, start, end, t.iteration);
    return end;
  }

  std::vector<CoreId> route_for(VmId vm, CoreId src_p, CoreId dst_p) {
    const VmDeployment& dep = deployment(vm);
    if (dep.table && dep.table->has_directions() &&
        dep.table->directions.count({src_p, dst_p})) {
      return constrained_route(src_p, dst_p, *dep.table, mesh_);
    }
    return dor_route(src_p, dst_p, mesh_);
  }

  // One NoC packet along a path with per-link FIFO occupancy.
  Cycle send_packet(const std::vector<CoreId>& path, std::uint64_t bytes, Cycle start,
                    VmRunStats& s) {
    Cycle ser = ((bytes + cfg_.flit_bytes - 1) / cfg_.flit_bytes) *
                cfg_.link_cycles_per_flit;
    Cycle t = start;
    if (path.size() == 1) {  // local copy, serialization only
      s.noc_busy += ser;
      return t + ser;
    }
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      auto link = std::make_pair(path[i], path[i + 1]);
      Cycle& free = link_free_[link];
      t = std::max(t, free);
      free = t + ser;
      s.noc_busy += ser;
      t += ser + cfg_.hop_latency;
    }
    return t;
  }

  Cycle noc_transfer(VmId vm, CoreId src_p, CoreId dst_p, std::uint64_t bytes,
                     Cycle start, VmRunStats& s) {
    const VmDeployment& dep = deployment(vm);
    std::vector<CoreId> path = route_for(vm, src_p, dst_p);
    Cycle t = start;
    if (!dep.bypass_translation) t += cfg_.vrouter_lookup_cost;  // once per transfer
    std::uint64_t remaining = std::max<std::uint64_t>(bytes, 1);
    while (remaining > 0) {
      std::uint64_t pkt = std::min<std::uint64_t>(remaining, cfg_.routing_packet_bytes);
      if (!dep.bypass_translation) t += cfg_.per_packet_translation_cost;
      t = send_packet(path, pkt, t, s);
      remaining -= pkt;
    }
    return t;
  }

  Cycle handshake(CoreId src_p, CoreId dst_p, VmRunStats& s) {
    // One round trip of a control packet.
    std::size_t hops = dor_route(src_p, dst_p, mesh_).size() - 1;
    (void)s;
    return 2 * (hops * cfg_.hop_latency +
                cfg_.handshake_flits * cfg_.link_cycles_per_flit);
  }

  Cycle memory_sync(VmId vm, CoreId src_p, const std::vector<CoreId>& dst_p,
                    std::uint64_t bytes, Cycle start, VmRunStats& s) {
    // Source writes the payload to HBM, then every destination polls the
    // sync flag and reads it back. The sync buffer lives on one channel,
    // so both legs are capped at single-channel bandwidth and the reads
    // serialize on that channel.
    std::uint64_t chan = cfg_.hbm_bytes_per_cycle_per_channel;
    Cycle t = start + cfg_.memory_sync_overhead;
    t = occupy_hbm(vm, bytes, t, nullptr, s, chan);
    Cycle done = t;
    for (CoreId d : dst_p) {
      (void)d;
      done = occupy_hbm(vm, bytes, done + cfg_.memory_sync_overhead, nullptr, s, chan);
    }
    return done;
  }

  Cycle exec_transfer(const SimTask& t, Cycle ready) {
    VmRunStats& s = stats(t.vm);
    const VmDeployment& dep = deployment(t.vm);
    CoreId src_p = translate(t.vm, t.vcore);
    CoreId dst_p = translate(t.vm, t.dst_vcore);
    Cycle start = std::max(ready, core_free_[src_p]);
    Cycle end;
    if (dep.mode == VmMode::Uvm && src_p != dst_p) {
      end = memory_sync(t.vm, src_p, {dst_p}, t.bytes, start, s);
    } else {
      end = noc_transfer(t.vm, src_p, dst_p, t.bytes, start, s);
    }
    note_span(s, start, end, t.iteration);
    return end;
  }

  Cycle exec_broadcast(const SimTask& t, Cycle ready) {
    VmRunStats& s = stats(t.vm);
    CoreId src_p = translate(t.vm, t.vcore);
    Cycle start = std::max(ready, core_free_[src_p]);
    Cycle end = start;
    if (t.mode == BroadcastMode::MemorySync || deployment(t.vm).mode == VmMode::Uvm) {
      std::vector<CoreId> dsts;
      for (CoreId v : t.dst_set) dsts.push_back(translate(t.vm, v));
      end = memory_sync(t.vm, src_p, dsts, t.bytes, start, s);
    } else {
      // Unicast fan-out with a NoC handshake per destination.
      Cycle tcur = start;
      for (CoreId v : t.dst_set) {
        CoreId dst_p = translate(t.vm, v);
        Cycle arr = t.bytes ? noc_transfer(t.vm, src_p, dst_p, t.bytes, tcur, s) : tcur;
        arr += handshake(src_p, dst_p, s);
        tcur = arr;  // source send engine serializes the fan-out
        end = std::max(end, arr);
      }
    }
    note_span(s, start, end, t.iteration);
    return end;
  }

  void finalize_metrics(Metrics& m) {
    for (const auto& [vm, s] : vm_stats_) {
      VmMetrics vmm;
      if (s.any_task) {
        vmm.total_cycles = s.last_cycle - std::min(s.first_cycle, s.last_cycle);
        vmm.iterations = s.max_iteration + 1;
      }
      vmm.compute_cycles = s.compute;
      vmm.noc_busy_cycles = s.noc_busy;
      vmm.translation_stall_cycles = s.stalls;
      vmm.tlb_misses = s.tlb_misses;
      auto cit = counters_.find(vm);
      vmm.hbm_bytes = cit != counters_.end() ? cit->second.total_bytes() : 0;
      if (s.first_dma_start != UINT64_MAX && s.weights_resident > s.first_dma_start) {
        vmm.warmup_cycles = s.weights_resident - s.first_dma_start;
      }
      vmm.cores_used = static_cast<int>(vm_physical_cores(vm).size());
      vmm.mapping_distance = deployment(vm).mapping_distance;
      vmm.ged_exact_path = deployment(vm).ged_exact_path;
      m.per_vm[vm] = vmm;
      m.chip_cycles = std::max(m.chip_cycles, s.last_cycle);
    }
    m.meta_zone_write_violations = meta_zone_violations_;
  }

 public:
  // Approximate per-core working set, used for the TDM reload cost.
  void set_core_weight_share(CoreId pcore, std::uint64_t bytes) {
    core_weight_shares_[pcore] = bytes;
  }

 private:
  ChipConfig cfg_;
  MeshDims mesh_;
  std::map<VmId, VmDeployment> vms_;
  std::map<VmId, AccessCounter> counters_;
  std::vector<RangeTranslationTable> core_rtts_;
  std::map<CoreId, RangeTlb> core_tlbs_;
  std::map<CoreId, std::uint64_t> core_weight_shares_;
  std::vector<SimTask> tasks_;

  // runtime state
  std::vector<Cycle> core_free_;
  std::vector<CoreId> core_last_vcore_;
  std::vector<std::uint64_t> core_weight_bytes_;
  std::map<std::pair<CoreId, CoreId>, Cycle> link_free_;
  Cycle hbm_free_ = 0;
  std::vector<Cycle> task_end_;
  std::pair<int, int> last_dispatch_{-1, -1};
  std::uint64_t meta_zone_violations_ = 0;
  std::map<VmId, VmRunStats> vm_stats_;
};

}  // namespace npuvsim
