#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "npuvsim/chip.hpp"
#include "npuvsim/topology.hpp"
#include "npuvsim/types.hpp"

namespace npuvsim {

struct Layer {
  int id = 0;
  KernelOp op;
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes = 0;
  std::vector<int> inputs;  // producing layer ids
};

struct LayerGraph {
  std::string name;
  std::vector<Layer> layers;
};

// Decoder stack: n identical matmul-dominated layers in a chain. hidden is
// sized so one layer's weights are about 5 MiB at fp16.
inline LayerGraph build_gpt_like(int n_layers, std::uint64_t hidden = 1600,
                                 std::uint64_t seq = 32) {
  LayerGraph g;
  g.name = "gpt" + std::to_string(n_layers);
  for (int i = 0; i < n_layers; ++i) {
    Layer l;
    l.id = i;
    l.op.kind = KernelOp::Kind::Matmul;
    l.op.m = seq;
    l.op.k = hidden;
    l.op.n = hidden;
    l.weight_bytes = hidden * hidden * 2;
    l.activation_bytes = seq * hidden * 2;
    if (i > 0) l.inputs.push_back(i - 1);
    g.layers.push_back(l);
  }
  return g;
}

inline LayerGraph gpt_preset(const std::string& size) {
  if (size == "small") return build_gpt_like(12);
  if (size == "middle") return build_gpt_like(24);
  if (size == "large") return build_gpt_like(36);
  raise(ErrorCode::ConfigError, "unknown gpt preset " + size);
}

// Residual-style chain: every second layer also consumes the output from
// two layers back, so activations skip one block.
inline LayerGraph build_resnet_like(int n_layers, std::uint64_t channels = 512,
                                    std::uint64_t spatial = 49) {
  LayerGraph g;
  g.name = "resnet" + std::to_string(n_layers);
  for (int i = 0; i < n_layers; ++i) {
    Layer l;
    l.id = i;
    l.op.kind = KernelOp::Kind::Conv;
    l.op.m = spatial;
    l.op.k = channels * 9;  // 3x3 kernels
    l.op.n = channels;
    l.weight_bytes = channels * channels * 9 * 2;
    l.activation_bytes = spatial * channels * 2;
    if (i > 0) l.inputs.push_back(i - 1);
    if (i >= 2 && i % 2 == 0) l.inputs.push_back(i - 2);
    g.layers.push_back(l);
  }
  return g;
}

// Contiguous balanced split of the layer chain over the virtual cores, in
// ascending virtual core ID order.
inline std::map<int, CoreId> map_layers(const LayerGraph& graph,
                                        const std::vector<CoreId>& vcores,
                                        std::uint64_t max_weight_bytes_per_core) {
  if (vcores.empty()) raise(ErrorCode::InsufficientCores, "no virtual cores");
  const std::size_t n = graph.layers.size();
  const std::size_t c = vcores.size();
  std::map<int, CoreId> placement;
  std::map<CoreId, std::uint64_t> load;
  for (std::size_t i = 0; i < n; ++i) {
    // layer i goes to core floor(i * c / n): contiguous, sizes differ by <= 1
    CoreId v = vcores[i * c / n];
    placement[graph.layers[i].id] = v;
    load[v] += graph.layers[i].weight_bytes;
  }
  for (const auto& [v, bytes] : load) {
    if (bytes > max_weight_bytes_per_core) {
      raise(ErrorCode::CapacityExceeded,
            "core " + std::to_string(v) + " would hold " + std::to_string(bytes) +
                " weight bytes, limit " + std::to_string(max_weight_bytes_per_core));
    }
  }
  return placement;
}

inline std::map<CoreId, std::uint64_t> per_core_weights(
    const LayerGraph& graph, const std::map<int, CoreId>& placement) {
  std::map<CoreId, std::uint64_t> w;
  for (const Layer& l : graph.layers) w[placement.at(l.id)] += l.weight_bytes;
  return w;
}

struct EmitOptions {
  std::uint64_t iterations = 1;
  // DMA loads stay within the per-core mapped region.
  std::uint64_t per_core_region_bytes = 5ull << 20;
  bool warmup_loads = true;
};

// Lowers the layer graph to chip tasks: warm-up weight loads, then per
// iteration one kernel per layer with inter-core activation transfers.
inline std::vector<int> emit_events(ChipSim& chip, VmId vm, const LayerGraph& graph,
                                    const std::map<int, CoreId>& placement,
                                    const EmitOptions& opt = {}) {
  std::vector<int> tails;
  std::map<CoreId, int> warm;  // vcore -> warm-up dma task
  if (opt.warmup_loads) {
    for (const auto& [v, bytes] : per_core_weights(graph, placement)) {
      std::uint64_t len = std::min<std::uint64_t>(bytes, opt.per_core_region_bytes);
      warm[v] = chip.add_dma_load(vm, v, 0, len, {}, 0, /*warmup=*/true);
    }
  }

  std::map<int, int> produced;  // layer id -> kernel task of last iteration
  int prev_tail = -1;           // final kernel of the previous iteration
  for (std::uint64_t it = 0; it < opt.iterations; ++it) {
    std::map<int, int> cur;
    for (const Layer& l : graph.layers) {
      CoreId v = placement.at(l.id);
      std::vector<int> deps;
      if (auto w = warm.find(v); w != warm.end()) deps.push_back(w->second);
      for (int in : l.inputs) {
        int src_task = cur.count(in) ? cur[in] : produced.at(in);
        CoreId src_v = placement.at(in);
        if (src_v != v) {
          int xfer = chip.add_transfer(vm, src_v, v, graph.layers[in].activation_bytes,
                                       {src_task}, it);
          deps.push_back(xfer);
        } else {
          deps.push_back(src_task);
        }
      }
      // Serialize iterations of the head layer so the pipeline has a
      // well-defined issue order.
      if (l.inputs.empty() && prev_tail >= 0) deps.push_back(prev_tail);
      cur[l.id] = chip.add_kernel(vm, v, l.op, deps, it);
    }
    produced = cur;
    if (!graph.layers.empty()) {
      prev_tail = cur[graph.layers.back().id];
      tails.push_back(prev_tail);
    }
  }
  return tails;
}

// Repeated one-to-many sync from src to dsts, back to back.
inline std::vector<int> microbench_broadcast(ChipSim& chip, VmId vm, CoreId src_vcore,
                                             const std::vector<CoreId>& dsts,
                                             std::uint64_t bytes, BroadcastMode mode,
                                             std::uint64_t repeats = 1) {
  std::vector<int> ids;
  std::vector<int> deps;
  for (std::uint64_t i = 0; i < repeats; ++i) {
    int id = chip.add_broadcast(vm, src_vcore, dsts, bytes, mode, deps, i);
    deps = {id};
    ids.push_back(id);
  }
  return ids;
}

// Repeated point-to-point sends of `packets` NoC packets each.
inline std::vector<int> microbench_send(ChipSim& chip, VmId vm, CoreId src_vcore,
                                        CoreId dst_vcore, std::uint64_t packets,
                                        std::uint64_t repeats = 1) {
  std::uint64_t bytes = packets * chip.config().routing_packet_bytes;
  std::vector<int> ids;
  std::vector<int> deps;
  for (std::uint64_t i = 0; i < repeats; ++i) {
    int id = chip.add_transfer(vm, src_vcore, dst_vcore, bytes, deps, i);
    deps = {id};
    ids.push_back(id);
  }
  return ids;
}

}  // namespace npuvsim
