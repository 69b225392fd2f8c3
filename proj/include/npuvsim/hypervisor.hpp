#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "npuvsim/buddy.hpp"
#include "npuvsim/chip.hpp"
#include "npuvsim/edit_distance.hpp"
#include "npuvsim/range_translation.hpp"
#include "npuvsim/routing.hpp"
#include "npuvsim/topology.hpp"
#include "npuvsim/types.hpp"

namespace npuvsim {

struct HypervisorConfig {
  std::uint64_t hbm_bytes = 16ull << 30;
  std::uint64_t min_block_bytes = 1ull << 20;
  std::size_t max_rtt_entries_per_core = 64;
  std::size_t range_tlb_entries = 4;
  EditCostModel cost_model;
  MinTedOptions ted;
};

struct VNpuSpec {
  Topology requested;
  AllocStrategy strategy = AllocStrategy::SimilarTopology;
  VmMode mode = VmMode::VNpu;
  // Per-core HBM regions, bytes each; every virtual core gets the same
  // layout. One region per weight shard keeps RTTs short.
  std::vector<std::uint64_t> per_core_regions{5ull << 20};
  std::optional<std::uint64_t> bandwidth_cap_per_window;
};

struct VNpuInfo {
  VmId vm = 0;
  std::set<CoreId> cores;                 // physical
  std::map<CoreId, CoreId> mapping;       // virtual -> physical
  double mapping_distance = 0.0;
  bool ged_exact_path = true;
  bool truncated_search = false;
  std::uint64_t allocated_bytes = 0;      // after power-of-two rounding
  std::uint64_t requested_bytes = 0;
  VmMode mode = VmMode::VNpu;
};

// Owns the physical resources (cores, HBM pool) and installs per-VM meta
// state into the chip in hyper mode. create/destroy are atomic: any failure
// rolls back every prior step of the same call.
class Hypervisor {
 public:
  Hypervisor(ChipSim& chip, const HypervisorConfig& cfg = {})
      : chip_(chip),
        cfg_(cfg),
        buddy_(cfg.hbm_bytes, cfg.min_block_bytes),
        topology_(physical_topology(chip.config())) {}

  static Topology physical_topology(const ChipConfig& cfg) {
    Topology t = Topology::mesh(cfg.mesh_width, cfg.mesh_height);
    for (CoreId c : t.nodes) {
      int x = c % cfg.mesh_width;
      t.attr(c).mem_dist = std::min(x, cfg.mesh_width - 1 - x);
    }
    return t;
  }

  const Topology& topology() const { return topology_; }
  const std::set<CoreId>& allocated_cores() const { return allocated_; }
  const BuddyAllocator& memory() const { return buddy_; }

  std::size_t free_cores() const { return topology_.nodes.size() - allocated_.size(); }

  const VNpuInfo& info(VmId vm) const {
    auto it = vms_.find(vm);
    if (it == vms_.end()) raise(ErrorCode::UnknownVm, "vm " + std::to_string(vm));
    return it->second.info;
  }

  std::vector<VmId> vm_ids() const {
    std::vector<VmId> ids;
    for (const auto& [vm, st] : vms_) ids.push_back(vm);
    return ids;
  }

  // Pins cores as unavailable without a backing VM (faulted tiles, pinned
  // system services, fragmentation studies).
  void reserve_cores(const std::set<CoreId>& cores) {
    for (CoreId c : cores) {
      if (!topology_.has_node(c)) {
        raise(ErrorCode::OutOfBounds, "core " + std::to_string(c) + " not on chip");
      }
      if (allocated_.count(c)) {
        raise(ErrorCode::InsufficientCores,
              "core " + std::to_string(c) + " already allocated");
      }
    }
    allocated_.insert(cores.begin(), cores.end());
  }

  VNpuInfo create_vnpu(VmId vm, const VNpuSpec& spec) {
    if (vms_.count(vm)) {
      raise(ErrorCode::ConfigError, "vm " + std::to_string(vm) + " already exists");
    }
    AllocationRequest req;
    req.vmid = vm;
    req.requested_topology = spec.requested;
    req.strategy = spec.strategy;
    SelectionResult sel =
        allocate_cores(topology_, allocated_, req, cfg_.cost_model, cfg_.ted);

    VmState st;
    st.info.vm = vm;
    st.info.mapping = sel.mapping;
    st.info.cores = std::set<CoreId>(sel.cores.begin(), sel.cores.end());
    st.info.mapping_distance = sel.distance;
    st.info.ged_exact_path = sel.exact_path;
    st.info.truncated_search = sel.truncated;
    st.info.mode = spec.mode;

    try {
      install(vm, st, spec);
    } catch (...) {
      rollback(st);
      throw;
    }
    allocated_.insert(st.info.cores.begin(), st.info.cores.end());
    vms_[vm] = std::move(st);
    return vms_[vm].info;
  }

  // Time-division deployment: the virtual topology keeps its full core
  // count but several virtual cores share each physical core of `pcores`.
  VNpuInfo create_vnpu_tdm(VmId vm, const VNpuSpec& spec,
                           const std::vector<CoreId>& pcores) {
    if (vms_.count(vm)) {
      raise(ErrorCode::ConfigError, "vm " + std::to_string(vm) + " already exists");
    }
    if (pcores.empty()) raise(ErrorCode::InsufficientCores, "empty TDM core set");
    for (CoreId p : pcores) {
      if (!topology_.has_node(p) || allocated_.count(p)) {
        raise(ErrorCode::InsufficientCores,
              "core " + std::to_string(p) + " unavailable for TDM deployment");
      }
    }
    VmState st;
    st.info.vm = vm;
    st.info.cores = std::set<CoreId>(pcores.begin(), pcores.end());
    st.info.mode = spec.mode;
    std::size_t i = 0;
    for (CoreId v : spec.requested.nodes) {
      st.info.mapping[v] = pcores[i++ % pcores.size()];
    }
    try {
      install(vm, st, spec);
    } catch (...) {
      rollback(st);
      throw;
    }
    allocated_.insert(st.info.cores.begin(), st.info.cores.end());
    vms_[vm] = std::move(st);
    return vms_[vm].info;
  }

  void destroy_vnpu(VmId vm) {
    auto it = vms_.find(vm);
    if (it == vms_.end()) raise(ErrorCode::UnknownVm, "vm " + std::to_string(vm));
    chip_.remove_vm(vm);
    rollback(it->second);
    for (CoreId c : it->second.info.cores) allocated_.erase(c);
    vms_.erase(it);
  }

  // Fixed MIG-style partition grids for a 36-core chip. Returns the core
  // sets; callers deploy VMs onto a partition via create_vnpu_tdm when the
  // request exceeds the partition, or ZigZag inside it otherwise.
  static std::vector<std::vector<CoreId>> mig_partitions(const ChipConfig& cfg,
                                                         const std::string& scheme) {
    const int w = cfg.mesh_width, h = cfg.mesh_height;
    auto block = [&](int x0, int y0, int bw, int bh) {
      std::vector<CoreId> c;
      for (int y = y0; y < y0 + bh; ++y) {
        for (int x = x0; x < x0 + bw; ++x) c.push_back(y * w + x);
      }
      return c;
    };
    if (scheme == "half") {  // two slices of w x h/2
      return {block(0, 0, w, h / 2), block(0, h / 2, w, h - h / 2)};
    }
    if (scheme == "thirds") {  // one w x h/3 slice and one w x 2h/3 slice
      return {block(0, 0, w, h / 3), block(0, h / 3, w, h - h / 3)};
    }
    raise(ErrorCode::ConfigError, "unknown partition scheme " + scheme);
  }

 private:
  struct VmState {
    VNpuInfo info;
    std::vector<std::uint64_t> block_offsets;  // buddy offsets, release order
  };

  void install(VmId vm, VmState& st, const VNpuSpec& spec) {
    // Memory first: one buddy block per (core, region), eagerly.
    std::map<CoreId, RangeTranslationTable> rtts;
    std::set<CoreId> pcores;
    for (const auto& [v, p] : st.info.mapping) pcores.insert(p);
    if (spec.per_core_regions.size() > cfg_.max_rtt_entries_per_core) {
      raise(ErrorCode::CapacityExceeded,
            "RTT would need " + std::to_string(spec.per_core_regions.size()) +
                " entries per core, limit is " +
                std::to_string(cfg_.max_rtt_entries_per_core));
    }
    std::uint64_t per_core_total = 0;
    for (CoreId p : pcores) {
      std::vector<MemBlock> blocks;
      Addr va = 0;
      per_core_total = 0;
      for (std::uint64_t bytes : spec.per_core_regions) {
        std::uint64_t rounded =
            std::max(cfg_.min_block_bytes, BuddyAllocator::round_up_pow2(bytes));
        std::uint64_t off = buddy_.allocate(rounded);
        st.block_offsets.push_back(off);
        st.info.allocated_bytes += rounded;
        st.info.requested_bytes += bytes;
        per_core_total += bytes;
        MemBlock b;
        b.vaddr = va;
        b.paddr = off;
        b.size = static_cast<std::uint32_t>(bytes);
        blocks.push_back(b);
        va += bytes;
      }
      rtts[p] = build_rtt(blocks);
    }

    ChipSim::VmDeployment dep;
    dep.mapping = st.info.mapping;
    dep.mode = spec.mode;
    dep.bandwidth_cap_per_window = spec.bandwidth_cap_per_window;
    dep.mapping_distance = st.info.mapping_distance;
    dep.ged_exact_path = st.info.ged_exact_path;

    // TDM mappings share physical cores and have no injective table.
    bool injective = pcores.size() == st.info.mapping.size();
    if (injective) {
      RoutingTable table = build_routing_table(vm, st.info.mapping);
      generate_directions(table, pcores, chip_.mesh());
      DeadlockReport rep = validate_directions(table, chip_.mesh());
      if (!rep.ok) {
        raise(ErrorCode::DeadlockDetected,
              "generated direction table has a channel-dependency cycle");
      }
      dep.table = table;
    }
    chip_.deploy_vm(vm, dep, rtts, cfg_.range_tlb_entries);
    for (CoreId p : pcores) chip_.set_core_weight_share(p, per_core_total);
  }

  void rollback(VmState& st) {
    for (auto it = st.block_offsets.rbegin(); it != st.block_offsets.rend(); ++it) {
      buddy_.release(*it);
    }
    st.block_offsets.clear();
  }

  ChipSim& chip_;
  HypervisorConfig cfg_;
  BuddyAllocator buddy_;
  Topology topology_;
  std::set<CoreId> allocated_;
  std::map<VmId, VmState> vms_;
};

}  // namespace npuvsim
