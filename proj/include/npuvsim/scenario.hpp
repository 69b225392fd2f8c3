#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "npuvsim/chip.hpp"
#include "npuvsim/edit_distance.hpp"
#include "npuvsim/hypervisor.hpp"
#include "npuvsim/topology.hpp"
#include "npuvsim/types.hpp"
#include "npuvsim/workloads.hpp"

namespace npuvsim {

constexpr int kMetricsVersion = 1;

using Json = nlohmann::json;

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::ConfigError, "cannot open " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    raise(ErrorCode::ConfigError, std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return j;
}

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) raise(ErrorCode::ConfigError, msg);
}

template <typename T>
T get_or(const Json& j, const std::string& key, T def) {
  auto it = j.find(key);
  return it == j.end() ? def : it->template get<T>();
}

}  // namespace detail

// Structural validation of a scenario document. Returns the list of
// problems; an empty list means the scenario is well formed.
inline std::vector<std::string> validate_scenario(const Json& sc) {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& m) {
    if (!ok) errs.push_back(m);
  };
  need(sc.is_object(), "scenario must be a JSON object");
  if (!sc.is_object()) return errs;
  need(sc.contains("name") && sc["name"].is_string(), "missing string field 'name'");
  need(sc.contains("seed") && sc["seed"].is_number_unsigned(),
       "missing unsigned field 'seed'");
  need(sc.contains("vms") && sc["vms"].is_array() && !sc["vms"].empty(),
       "missing non-empty array 'vms'");
  if (sc.contains("chip")) need(sc["chip"].is_object(), "'chip' must be an object");
  if (sc.contains("mode")) {
    std::string m = sc["mode"].is_string() ? sc["mode"].get<std::string>() : "";
    need(m == "vnpu" || m == "baremetal" || m == "mig" || m == "uvm",
         "'mode' must be one of vnpu, baremetal, mig, uvm");
  }
  if (!sc.contains("vms") || !sc["vms"].is_array()) return errs;
  std::set<int> ids;
  for (const Json& vm : sc["vms"]) {
    if (!vm.is_object()) {
      errs.push_back("every entry of 'vms' must be an object");
      continue;
    }
    need(vm.contains("id") && vm["id"].is_number_integer(), "vm missing integer 'id'");
    if (vm.contains("id") && vm["id"].is_number_integer()) {
      need(ids.insert(vm["id"].get<int>()).second, "duplicate vm id");
    }
    need(vm.contains("workload") && vm["workload"].is_object(),
         "vm missing object 'workload'");
    if (vm.contains("workload") && vm["workload"].is_object()) {
      const Json& w = vm["workload"];
      std::string k = w.value("kind", "");
      need(k == "gpt" || k == "resnet" || k == "send" || k == "broadcast" || k == "dma",
           "workload.kind must be gpt, resnet, send, broadcast or dma");
    }
    if (vm.contains("strategy")) {
      std::string s = vm["strategy"].is_string() ? vm["strategy"].get<std::string>() : "";
      need(s == "exact" || s == "zigzag" || s == "similar" || s == "fragmented",
           "strategy must be exact, zigzag, similar or fragmented");
    }
    if (vm.contains("topology")) {
      need(vm["topology"].is_object(), "vm 'topology' must be an object");
    }
  }
  return errs;
}

inline ChipConfig parse_chip_config(const Json& sc) {
  ChipConfig cfg;
  if (!sc.contains("chip")) return cfg;
  const Json& c = sc["chip"];
  cfg.mesh_width = detail::get_or(c, "mesh_width", cfg.mesh_width);
  cfg.mesh_height = detail::get_or(c, "mesh_height", cfg.mesh_height);
  cfg.sram_per_core = detail::get_or(c, "sram_per_core", cfg.sram_per_core);
  cfg.meta_zone = detail::get_or(c, "meta_zone", cfg.meta_zone);
  cfg.flit_bytes = detail::get_or(c, "flit_bytes", cfg.flit_bytes);
  cfg.hop_latency = detail::get_or(c, "hop_latency", cfg.hop_latency);
  cfg.hbm_channels = detail::get_or(c, "hbm_channels", cfg.hbm_channels);
  cfg.hbm_bytes_per_cycle_per_channel =
      detail::get_or(c, "hbm_bytes_per_cycle_per_channel",
                     cfg.hbm_bytes_per_cycle_per_channel);
  cfg.macs_per_cycle = detail::get_or(c, "macs_per_cycle", cfg.macs_per_cycle);
  cfg.routing_packet_bytes =
      detail::get_or(c, "routing_packet_bytes", cfg.routing_packet_bytes);
  cfg.vrouter_lookup_cost =
      detail::get_or(c, "vrouter_lookup_cost", cfg.vrouter_lookup_cost);
  cfg.per_packet_translation_cost =
      detail::get_or(c, "per_packet_translation_cost", cfg.per_packet_translation_cost);
  cfg.memory_sync_overhead =
      detail::get_or(c, "memory_sync_overhead", cfg.memory_sync_overhead);
  cfg.bandwidth_window_cycles =
      detail::get_or(c, "bandwidth_window_cycles", cfg.bandwidth_window_cycles);
  for (const auto& [key, val] : c.items()) {
    static const std::set<std::string> known{
        "mesh_width", "mesh_height", "sram_per_core", "meta_zone", "flit_bytes",
        "hop_latency", "hbm_channels", "hbm_bytes_per_cycle_per_channel",
        "macs_per_cycle", "routing_packet_bytes", "vrouter_lookup_cost",
        "per_packet_translation_cost", "memory_sync_overhead",
        "bandwidth_window_cycles"};
    if (!known.count(key)) {
      raise(ErrorCode::UnknownParameter, "unknown chip parameter '" + key + "'");
    }
    (void)val;
  }
  return cfg;
}

inline Topology parse_topology(const Json& t) {
  std::string kind = t.value("kind", "mesh");
  if (kind == "mesh") {
    return Topology::mesh(t.value("width", 2), t.value("height", 2));
  }
  if (kind == "chain") {
    int n = t.value("length", 2);
    Topology g;
    g.shape = MeshShape::Irregular;
    for (int i = 0; i < n; ++i) g.add_node(i);
    for (int i = 0; i + 1 < n; ++i) g.add_edge(i, i + 1);
    return g;
  }
  if (kind == "custom") {
    Topology g;
    g.shape = MeshShape::Irregular;
    for (const Json& n : t.at("nodes")) g.add_node(n.get<int>());
    for (const Json& e : t.at("edges")) g.add_edge(e.at(0).get<int>(), e.at(1).get<int>());
    return g;
  }
  raise(ErrorCode::ConfigError, "unknown topology kind " + kind);
}

inline AllocStrategy parse_strategy(const std::string& s) {
  if (s == "exact") return AllocStrategy::Exact;
  if (s == "zigzag") return AllocStrategy::ZigZag;
  if (s == "similar") return AllocStrategy::SimilarTopology;
  if (s == "fragmented") return AllocStrategy::Fragmented;
  raise(ErrorCode::ConfigError, "unknown strategy " + s);
}

struct ScenarioResult {
  Json metrics;
  std::string csv;
};

namespace detail {

struct VmPlan {
  VmId id = 0;
  Json workload;
  Topology requested;
  AllocStrategy strategy = AllocStrategy::SimilarTopology;
  std::uint64_t iterations = 1;
  std::uint64_t region_bytes = 5ull << 20;
  VmMode mode = VmMode::VNpu;
};

inline int topology_cores_for_workload(const Json& w) {
  std::string kind = w.value("kind", "");
  if (kind == "gpt") {
    if (w.contains("preset")) {
      return static_cast<int>(gpt_preset(w["preset"].get<std::string>()).layers.size());
    }
    return w.value("layers", 12);
  }
  if (kind == "resnet") return w.value("layers", 18) / 2;
  if (kind == "send") return 2;
  if (kind == "broadcast") return w.value("dsts", 3) + 1;
  if (kind == "dma") return 1;
  raise(ErrorCode::ConfigError, "unknown workload kind " + kind);
}

inline void emit_workload(ChipSim& chip, const VmPlan& plan,
                          const std::vector<CoreId>& vcores,
                          std::uint64_t weight_zone) {
  const Json& w = plan.workload;
  std::string kind = w.value("kind", "");
  if (kind == "gpt" || kind == "resnet") {
    LayerGraph g;
    if (kind == "gpt") {
      g = w.contains("preset") ? gpt_preset(w["preset"].get<std::string>())
                               : build_gpt_like(w.value("layers", 12));
    } else {
      g = build_resnet_like(w.value("layers", 18));
    }
    auto placement = map_layers(g, vcores, weight_zone);
    EmitOptions opt;
    opt.iterations = plan.iterations;
    opt.per_core_region_bytes = plan.region_bytes;
    emit_events(chip, plan.id, g, placement, opt);
    return;
  }
  if (kind == "send") {
    if (vcores.size() < 2) raise(ErrorCode::InsufficientCores, "send needs two cores");
    microbench_send(chip, plan.id, vcores.front(), vcores[1],
                    w.value("packets", std::uint64_t{2}), plan.iterations);
    return;
  }
  if (kind == "broadcast") {
    int n = w.value("dsts", 3);
    if (static_cast<int>(vcores.size()) < n + 1) {
      raise(ErrorCode::InsufficientCores, "broadcast needs dsts+1 cores");
    }
    std::vector<CoreId> dsts(vcores.begin() + 1, vcores.begin() + 1 + n);
    BroadcastMode mode = w.value("sync", std::string("noc")) == "memsync"
                             ? BroadcastMode::MemorySync
                             : BroadcastMode::NocVRouter;
    microbench_broadcast(chip, plan.id, vcores.front(), dsts,
                         w.value("bytes", std::uint64_t{4096}), mode, plan.iterations);
    return;
  }
  if (kind == "dma") {
    std::uint64_t bytes = w.value("bytes", std::uint64_t{1} << 16);
    std::uint64_t stride = w.value("stride", bytes);
    std::uint64_t accesses = w.value("accesses", std::uint64_t{16});
    std::vector<int> deps;
    for (std::uint64_t i = 0; i < plan.iterations; ++i) {
      for (std::uint64_t a = 0; a < accesses; ++a) {
        Addr va = (a * stride) % (plan.region_bytes - bytes + 1);
        int id = chip.add_dma_load(plan.id, vcores.front(), va, bytes, deps, i,
                                   /*warmup=*/i == 0);
        deps = {id};
      }
    }
    return;
  }
  raise(ErrorCode::ConfigError, "unknown workload kind " + kind);
}

}  // namespace detail

// Builds the chip, deploys every VM of the scenario under `mode`, runs the
// task graph and renders metrics. Pure function of (scenario, mode, seed).
inline ScenarioResult run_scenario(const Json& sc,
                                   std::optional<std::string> mode_override = {},
                                   std::optional<std::uint64_t> seed_override = {}) {
  auto errs = validate_scenario(sc);
  if (!errs.empty()) raise(ErrorCode::ConfigError, "invalid scenario: " + errs.front());

  const std::string mode =
      mode_override.value_or(sc.value("mode", std::string("vnpu")));
  const std::uint64_t seed = seed_override.value_or(sc["seed"].get<std::uint64_t>());
  std::mt19937_64 rng(seed);

  ChipConfig ccfg = parse_chip_config(sc);
  ChipSim chip(ccfg);
  HypervisorConfig hcfg;
  hcfg.hbm_bytes = detail::get_or(sc, "hbm_bytes", hcfg.hbm_bytes);
  hcfg.range_tlb_entries =
      detail::get_or(sc, "range_tlb_entries", hcfg.range_tlb_entries);
  // Desk-scale default; the library default of 100000 is available on request.
  hcfg.ted.cap = detail::get_or(sc, "candidate_cap", std::size_t{5000});
  Hypervisor hv(chip, hcfg);

  // Obstacles: either an explicit core list or a count drawn from the seed.
  if (sc.contains("obstacles")) {
    std::set<CoreId> obs;
    if (sc["obstacles"].is_array()) {
      for (const Json& c : sc["obstacles"]) obs.insert(c.get<int>());
    } else {
      int count = sc["obstacles"].value("random", 0);
      std::uniform_int_distribution<int> pick(0, ccfg.cores() - 1);
      while (static_cast<int>(obs.size()) < count) obs.insert(pick(rng));
    }
    hv.reserve_cores(obs);
  }

  std::vector<detail::VmPlan> plans;
  for (const Json& vmj : sc["vms"]) {
    detail::VmPlan p;
    p.id = vmj["id"].get<int>();
    p.workload = vmj["workload"];
    p.iterations = detail::get_or(vmj, "iterations", std::uint64_t{1});
    p.region_bytes = detail::get_or(vmj, "region_mib", std::uint64_t{5}) << 20;
    if (vmj.contains("topology")) {
      p.requested = parse_topology(vmj["topology"]);
    } else {
      int n = detail::topology_cores_for_workload(p.workload);
      int w = std::min<int>(n, ccfg.mesh_width);
      int h = (n + w - 1) / w;
      if (w * h == n) {
        p.requested = Topology::mesh(w, h);
      } else {
        p.requested = parse_topology(Json{{"kind", "chain"}, {"length", n}});
      }
    }
    p.strategy = parse_strategy(vmj.value("strategy", std::string("similar")));
    if (mode == "baremetal" || mode == "mig") p.strategy = AllocStrategy::ZigZag;
    p.mode = mode == "uvm" ? VmMode::Uvm
             : mode == "mig" ? VmMode::Mig
                             : VmMode::VNpu;
    plans.push_back(std::move(p));
  }

  // MIG: fixed partitions, one VM per partition, TDM when oversubscribed.
  std::vector<std::vector<CoreId>> partitions;
  if (mode == "mig") {
    partitions = Hypervisor::mig_partitions(
        ccfg, sc.value("mig_scheme", std::string("half")));
    if (plans.size() > partitions.size()) {
      raise(ErrorCode::InsufficientCores, "more VMs than MIG partitions");
    }
  }

  std::size_t pi = 0;
  for (detail::VmPlan& p : plans) {
    // Elastic adaptation: shrink the requested topology to the free cores
    // and let the layer mapper stack layers per core.
    if (mode != "mig" && p.requested.nodes.size() > hv.free_cores()) {
      int n = static_cast<int>(hv.free_cores());
      int w = std::min<int>(n, ccfg.mesh_width);
      p.requested = (n % w == 0) ? Topology::mesh(w, n / w)
                                 : parse_topology(Json{{"kind", "chain"}, {"length", n}});
    }
    VNpuSpec spec;
    spec.requested = p.requested;
    spec.strategy = p.strategy;
    spec.mode = p.mode;
    spec.per_core_regions = {p.region_bytes};
    VNpuInfo info;
    if (mode == "mig") {
      // Smallest partition that fits; TDM fallback onto the largest.
      std::vector<CoreId> part = partitions[pi++];
      if (p.requested.nodes.size() <= part.size()) {
        part.resize(p.requested.nodes.size());
      }
      info = hv.create_vnpu_tdm(p.id, spec, part);
    } else {
      info = hv.create_vnpu(p.id, spec);
    }
    if (mode == "baremetal") {
      // Parity runs skip the virtualization layer entirely.
      auto dep = chip.deployment(p.id);
      dep.bypass_translation = true;
      chip.deploy_vm(p.id, dep, {}, hcfg.range_tlb_entries);
    }
    std::vector<CoreId> vcores = p.requested.nodes;
    detail::emit_workload(chip, p, vcores, ccfg.weight_zone());
  }

  Metrics m = chip.run();

  Json out;
  out["metrics_version"] = kMetricsVersion;
  out["scenario"] = sc["name"].get<std::string>();
  out["mode"] = mode;
  out["seed"] = seed;
  out["chip"] = {{"cycles", m.chip_cycles},
                 {"cores", m.chip_cores},
                 {"busy_core_cycles", m.busy_core_cycles},
                 {"utilization", m.utilization()},
                 {"meta_zone_write_violations", m.meta_zone_write_violations}};
  Json vms = Json::object();
  for (const auto& [vm, vmm] : m.per_vm) {
    vms[std::to_string(vm)] = {{"total_cycles", vmm.total_cycles},
                               {"compute_cycles", vmm.compute_cycles},
                               {"noc_busy_cycles", vmm.noc_busy_cycles},
                               {"translation_stall_cycles", vmm.translation_stall_cycles},
                               {"tlb_misses", vmm.tlb_misses},
                               {"hbm_bytes", vmm.hbm_bytes},
                               {"warmup_cycles", vmm.warmup_cycles},
                               {"iterations", vmm.iterations},
                               {"fps_equiv", vmm.fps_equiv()},
                               {"cores_used", vmm.cores_used},
                               {"mapping_distance", vmm.mapping_distance},
                               {"ged_exact_path", vmm.ged_exact_path}};
  }
  out["vms"] = vms;

  ScenarioResult res;
  res.metrics = out;
  std::ostringstream csv;
  csv << "scenario,vm,metric,value\n";
  const std::string name = sc["name"].get<std::string>();
  auto row = [&](const std::string& vm, const std::string& metric, const Json& v) {
    csv << name << ',' << vm << ',' << metric << ',' << v.dump() << '\n';
  };
  for (const auto& [k, v] : out["chip"].items()) row("chip", k, v);
  for (const auto& [vm, obj] : out["vms"].items()) {
    for (const auto& [k, v] : obj.items()) row(vm, k, v);
  }
  res.csv = csv.str();
  return res;
}

// Runs the scenario under every requested mode and reports per-VM cycle
// ratios normalized to the first mode.
inline Json compare_modes(const Json& sc, const std::vector<std::string>& modes,
                          std::optional<std::uint64_t> seed_override = {}) {
  if (modes.size() < 2) raise(ErrorCode::ConfigError, "compare needs at least two modes");
  Json out;
  out["metrics_version"] = kMetricsVersion;
  out["scenario"] = sc.value("name", std::string());
  out["modes"] = modes;
  Json runs = Json::object();
  std::map<std::string, Json> results;
  for (const std::string& m : modes) {
    results[m] = run_scenario(sc, m, seed_override).metrics;
    runs[m] = results[m];
  }
  out["runs"] = runs;
  Json ratios = Json::object();
  const Json& base = results.at(modes.front());
  for (std::size_t i = 1; i < modes.size(); ++i) {
    const Json& cur = results.at(modes[i]);
    Json per_vm = Json::object();
    for (const auto& [vm, obj] : cur["vms"].items()) {
      double b = base["vms"][vm]["total_cycles"].get<double>();
      double c = obj["total_cycles"].get<double>();
      per_vm[vm] = b > 0 ? c / b : 0.0;
    }
    ratios[modes[i] + "_vs_" + modes.front()] = per_vm;
  }
  out["cycle_ratios"] = ratios;
  return out;
}

// One-dimensional parameter sweep. Supported knobs patch the scenario
// document before each run.
inline Json sweep_scenario(const Json& sc, const std::string& knob,
                           const std::vector<Json>& values,
                           std::optional<std::string> mode_override = {},
                           std::optional<std::uint64_t> seed_override = {}) {
  Json out;
  out["metrics_version"] = kMetricsVersion;
  out["scenario"] = sc.value("name", std::string());
  out["knob"] = knob;
  Json points = Json::array();
  for (const Json& v : values) {
    Json patched = sc;
    if (knob == "packets" || knob == "bytes" || knob == "dsts" || knob == "accesses") {
      for (Json& vm : patched["vms"]) vm["workload"][knob] = v;
    } else if (knob == "cores") {
      for (Json& vm : patched["vms"]) {
        vm["topology"] = {{"kind", "chain"}, {"length", v}};
      }
    } else if (knob == "iterations") {
      for (Json& vm : patched["vms"]) vm["iterations"] = v;
    } else if (knob == "tlb_entries") {
      patched["range_tlb_entries"] = v;
    } else if (knob == "strategy") {
      for (Json& vm : patched["vms"]) vm["strategy"] = v;
    } else {
      raise(ErrorCode::UnknownParameter, "unknown sweep knob '" + knob + "'");
    }
    Json point;
    point["value"] = v;
    point["metrics"] = run_scenario(patched, mode_override, seed_override).metrics;
    points.push_back(point);
  }
  out["points"] = points;
  return out;
}

}  // namespace npuvsim
