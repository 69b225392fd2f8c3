#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "npuvsim/topology.hpp"
#include "npuvsim/types.hpp"

namespace npuvsim {

enum class Port { North, South, East, West, Local };

inline char port_char(Port p) {
  switch (p) {
    case Port::North: return 'N';
    case Port::South: return 'S';
    case Port::East: return 'E';
    case Port::West: return 'W';
    case Port::Local: return 'L';
  }
  return '?';
}

struct MeshDims {
  int width = 0;
  int height = 0;

  int cores() const { return width * height; }
  int x_of(CoreId c) const { return c % width; }
  int y_of(CoreId c) const { return c / width; }
  CoreId id_of(int x, int y) const { return y * width + x; }
  bool contains(CoreId c) const { return c >= 0 && c < cores(); }

  // North decreases y, South increases y (row-major ids grow southward).
  std::optional<CoreId> step(CoreId c, Port p) const {
    int x = x_of(c), y = y_of(c);
    switch (p) {
      case Port::North: --y; break;
      case Port::South: ++y; break;
      case Port::East: ++x; break;
      case Port::West: --x; break;
      case Port::Local: return c;
    }
    if (x < 0 || x >= width || y < 0 || y >= height) return std::nullopt;
    return id_of(x, y);
  }

  Port port_toward(CoreId from, CoreId to) const {
    if (to == from + 1) return Port::East;
    if (to == from - 1) return Port::West;
    if (to == from + width) return Port::South;
    if (to == from - width) return Port::North;
    return Port::Local;
  }
};

// Per-VM translation from virtual core IDs to physical core IDs. Standard
// form stores every mapping; compact form records only the base IDs and the
// rectangular shape of the virtual topology.
struct RoutingTable {
  enum class Form { Standard, Compact };

  VmId vmid = 0;
  Form form = Form::Standard;
  std::map<CoreId, CoreId> entries;  // standard form
  CoreId v_base = 0;                 // compact form
  CoreId p_base = 0;
  int shape_w = 0;
  int shape_h = 0;
  int mesh_width = 0;  // physical mesh width, needed for compact lookups
  std::size_t size = 0;
  // Optional per-(relay, destination) outgoing ports, physical IDs.
  std::map<std::pair<CoreId, CoreId>, Port> directions;

  bool has_directions() const { return !directions.empty(); }
};

inline RoutingTable build_routing_table(VmId vmid, const std::map<CoreId, CoreId>& mapping) {
  RoutingTable t;
  t.vmid = vmid;
  t.form = RoutingTable::Form::Standard;
  t.entries = mapping;
  t.size = mapping.size();
  std::set<CoreId> phys;
  for (const auto& [v, p] : mapping) {
    if (!phys.insert(p).second) {
      raise(ErrorCode::DuplicatePhysicalCore,
            "physical core " + std::to_string(p) + " mapped twice in VM " +
                std::to_string(vmid));
    }
  }
  return t;
}

inline RoutingTable build_routing_table_compact(VmId vmid, CoreId v_base, CoreId p_base,
                                                int shape_w, int shape_h,
                                                const MeshDims& mesh) {
  int px = mesh.x_of(p_base), py = mesh.y_of(p_base);
  if (px + shape_w > mesh.width || py + shape_h > mesh.height || !mesh.contains(p_base)) {
    raise(ErrorCode::OutOfBounds, "compact block exceeds the physical mesh");
  }
  RoutingTable t;
  t.vmid = vmid;
  t.form = RoutingTable::Form::Compact;
  t.v_base = v_base;
  t.p_base = p_base;
  t.shape_w = shape_w;
  t.shape_h = shape_h;
  t.mesh_width = mesh.width;
  t.size = static_cast<std::size_t>(shape_w) * shape_h;
  return t;
}

inline CoreId translate_core(const RoutingTable& table, CoreId v_core) {
  if (table.form == RoutingTable::Form::Standard) {
    auto it = table.entries.find(v_core);
    if (it == table.entries.end()) {
      raise(ErrorCode::UnmappedVirtualCore,
            "virtual core " + std::to_string(v_core) + " in VM " +
                std::to_string(table.vmid));
    }
    return it->second;
  }
  CoreId off = v_core - table.v_base;
  if (off < 0 || off >= static_cast<CoreId>(table.size)) {
    raise(ErrorCode::UnmappedVirtualCore,
          "virtual core " + std::to_string(v_core) + " in VM " +
              std::to_string(table.vmid));
  }
  int vx = off % table.shape_w;
  int vy = off / table.shape_w;
  return table.p_base + vy * table.mesh_width + vx;
}

inline std::set<CoreId> physical_cores(const RoutingTable& table) {
  std::set<CoreId> out;
  if (table.form == RoutingTable::Form::Standard) {
    for (const auto& [v, p] : table.entries) out.insert(p);
  } else {
    for (std::size_t i = 0; i < table.size; ++i) {
      out.insert(translate_core(table, table.v_base + static_cast<CoreId>(i)));
    }
  }
  return out;
}

// Dimension-order route: along X to the destination column, then along Y.
inline std::vector<CoreId> dor_route(CoreId src_p, CoreId dst_p, const MeshDims& mesh) {
  std::vector<CoreId> path{src_p};
  int x = mesh.x_of(src_p), y = mesh.y_of(src_p);
  int dx = mesh.x_of(dst_p), dy = mesh.y_of(dst_p);
  while (x != dx) {
    x += (dx > x) ? 1 : -1;
    path.push_back(mesh.id_of(x, y));
  }
  while (y != dy) {
    y += (dy > y) ? 1 : -1;
    path.push_back(mesh.id_of(x, y));
  }
  return path;
}

// Follows the table's predefined per-relay directions until the destination.
inline std::vector<CoreId> constrained_route(CoreId src_p, CoreId dst_p,
                                             const RoutingTable& table,
                                             const MeshDims& mesh) {
  std::vector<CoreId> path{src_p};
  CoreId cur = src_p;
  while (cur != dst_p) {
    auto it = table.directions.find({cur, dst_p});
    if (it == table.directions.end()) {
      raise(ErrorCode::MissingDirection,
            "no direction at core " + std::to_string(cur) + " for destination " +
                std::to_string(dst_p));
    }
    auto next = mesh.step(cur, it->second);
    if (!next || *next == cur) {
      raise(ErrorCode::MissingDirection,
            "direction at core " + std::to_string(cur) + " leaves the mesh");
    }
    cur = *next;
    path.push_back(cur);
    if (path.size() > static_cast<std::size_t>(mesh.cores()) + 1) {
      raise(ErrorCode::DirectionLoop, "route exceeds node count, malformed table");
    }
  }
  return path;
}

// NoC interference: true iff any intermediate node of the path lies outside
// the VM's physical cores.
inline bool detect_interference(const std::vector<CoreId>& path,
                                const std::set<CoreId>& vm_cores) {
  for (std::size_t i = 1; i + 1 < path.size(); ++i) {
    if (!vm_cores.count(path[i])) return true;
  }
  return false;
}

struct DeadlockReport {
  bool ok = true;
  // One cycle of directed links (from, to) when not ok.
  std::vector<std::pair<CoreId, CoreId>> cycle;
};

// Builds the channel-dependency graph induced by all (relay, dst) entries
// and checks it for cycles.
inline DeadlockReport validate_directions(const RoutingTable& table, const MeshDims& mesh) {
  using Link = std::pair<CoreId, CoreId>;
  std::map<Link, std::set<Link>> deps;

  // Group entries by destination: within one destination, the next-hop
  // function chains links together.
  std::map<CoreId, std::map<CoreId, CoreId>> next_by_dst;  // dst -> relay -> next
  for (const auto& [key, port] : table.directions) {
    auto [relay, dst] = key;
    auto next = mesh.step(relay, port);
    if (!next || *next == relay) continue;
    next_by_dst[dst][relay] = *next;
  }
  for (const auto& [dst, next] : next_by_dst) {
    for (const auto& [relay, out] : next) {
      Link l2{relay, out};
      deps[l2];
      for (const auto& [prev, prev_out] : next) {
        if (prev_out == relay) deps[Link{prev, relay}].insert(l2);
      }
    }
  }

  // Iterative DFS cycle detection with parent tracking.
  std::map<Link, int> color;  // 0 white, 1 gray, 2 black
  std::map<Link, Link> parent;
  for (const auto& [start, unused] : deps) {
    if (color[start]) continue;
    std::vector<std::pair<Link, bool>> stack{{start, false}};
    while (!stack.empty()) {
      auto [l, done] = stack.back();
      stack.pop_back();
      if (done) {
        color[l] = 2;
        continue;
      }
      if (color[l] == 2) continue;
      color[l] = 1;
      stack.push_back({l, true});
      for (const Link& m : deps[l]) {
        if (color[m] == 1) {
          DeadlockReport r;
          r.ok = false;
          r.cycle.push_back(m);
          Link cur = l;
          while (cur != m) {
            r.cycle.push_back(cur);
            cur = parent[cur];
          }
          std::reverse(r.cycle.begin(), r.cycle.end());
          return r;
        }
        if (color[m] == 0) {
          parent[m] = l;
          stack.push_back({m, false});
        }
      }
    }
  }
  return {};
}

namespace detail {

inline bool is_rectangular_block(const std::set<CoreId>& cores, const MeshDims& mesh) {
  if (cores.empty()) return false;
  int minx = mesh.width, maxx = -1, miny = mesh.height, maxy = -1;
  for (CoreId c : cores) {
    minx = std::min(minx, mesh.x_of(c));
    maxx = std::max(maxx, mesh.x_of(c));
    miny = std::min(miny, mesh.y_of(c));
    maxy = std::max(maxy, mesh.y_of(c));
  }
  return static_cast<int>(cores.size()) == (maxx - minx + 1) * (maxy - miny + 1);
}

}  // namespace detail

// Confinement generator used by the hypervisor: fills table.directions so
// that every (relay, dst) pair within the VM's cores is covered and the
// resulting channel-dependency graph is acyclic.
//
// Rectangular blocks get plain XY routing. Irregular shapes fall back to
// routing along a BFS spanning tree of the induced subgraph; tree paths are
// up*/down* and therefore deadlock-free, at the price of longer routes.
inline void generate_directions(RoutingTable& table, const std::set<CoreId>& vm_cores,
                                const MeshDims& mesh) {
  table.directions.clear();
  if (vm_cores.size() < 2) return;

  if (detail::is_rectangular_block(vm_cores, mesh)) {
    for (CoreId dst : vm_cores) {
      for (CoreId relay : vm_cores) {
        if (relay == dst) continue;
        Port p;
        if (mesh.x_of(relay) != mesh.x_of(dst)) {
          p = mesh.x_of(dst) > mesh.x_of(relay) ? Port::East : Port::West;
        } else {
          p = mesh.y_of(dst) > mesh.y_of(relay) ? Port::South : Port::North;
        }
        table.directions[{relay, dst}] = p;
      }
    }
    return;
  }

  // BFS spanning tree rooted at the lowest core ID, neighbors visited in
  // ascending ID order.
  std::map<CoreId, CoreId> up;  // child -> parent
  std::map<CoreId, std::vector<CoreId>> children;
  CoreId root = *vm_cores.begin();
  std::set<CoreId> seen{root};
  std::vector<CoreId> frontier{root};
  while (!frontier.empty()) {
    std::vector<CoreId> next;
    for (CoreId n : frontier) {
      for (Port p : {Port::North, Port::West, Port::East, Port::South}) {
        auto m = mesh.step(n, p);
        if (!m || !vm_cores.count(*m) || seen.count(*m)) continue;
        seen.insert(*m);
        up[*m] = n;
        children[n].push_back(*m);
        next.push_back(*m);
      }
    }
    std::sort(next.begin(), next.end());
    frontier = std::move(next);
  }
  if (seen.size() != vm_cores.size()) {
    raise(ErrorCode::ConfigError, "direction generation requires a connected core set");
  }

  auto path_to_root = [&](CoreId c) {
    std::vector<CoreId> p{c};
    while (p.back() != root) p.push_back(up.at(p.back()));
    return p;
  };
  for (CoreId dst : vm_cores) {
    auto dst_up = path_to_root(dst);
    std::map<CoreId, std::size_t> on_dst_path;
    for (std::size_t i = 0; i < dst_up.size(); ++i) on_dst_path[dst_up[i]] = i;
    for (CoreId relay : vm_cores) {
      if (relay == dst) continue;
      // Tree path: climb until the first node shared with dst's root path,
      // then descend.
      CoreId next;
      if (on_dst_path.count(relay)) {
        std::size_t i = on_dst_path[relay];
        next = dst_up[i - 1];  // i > 0 because relay != dst
      } else {
        next = up.at(relay);
      }
      table.directions[{relay, dst}] = mesh.port_toward(relay, next);
    }
  }
}

}  // namespace npuvsim
