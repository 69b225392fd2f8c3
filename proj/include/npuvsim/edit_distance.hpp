#pragma once

#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "npuvsim/topology.hpp"
#include "npuvsim/types.hpp"

namespace npuvsim {

// Cost model for topology edit operations. Zero cost iff node attributes
// match exactly (node match) or both edges are present (edge match).
struct EditCostModel {
  Cost node_substitution_cost = 1.0;
  Cost edge_insert_cost = 1.0;
  Cost edge_delete_cost = 1.0;
  // Extra cost when a critical requested edge is absent in the mapping.
  std::map<Edge, Cost> critical_edge_penalty;
  // Penalty per hop of |d_req - d_mapped| memory-interface distance.
  Cost memory_distance_weight = 1.0;

  Cost critical_penalty(const Edge& e) const {
    auto it = critical_edge_penalty.find(e);
    return it == critical_edge_penalty.end() ? 0.0 : it->second;
  }
};

inline Cost node_match(const NodeAttr& n1, const NodeAttr& n2, const EditCostModel& cm) {
  Cost c = 0.0;
  if (n1.abbr != n2.abbr) c += cm.node_substitution_cost;
  // Memory-distance mismatch only counts when both sides state a distance.
  if (n1.mem_dist && n2.mem_dist) {
    c += cm.memory_distance_weight * std::abs(*n1.mem_dist - *n2.mem_dist);
  }
  return c;
}

// e1 is an edge of the requested topology (carries criticality), e2 the
// corresponding edge in the mapped topology. At least one must be present.
inline Cost edge_match(const std::optional<Edge>& e1, const std::optional<Edge>& e2,
                       const EditCostModel& cm) {
  if (e1 && e2) return 0.0;
  if (e1) return cm.edge_delete_cost + cm.critical_penalty(*e1);
  return cm.edge_insert_cost;
}

struct GedResult {
  Cost distance = 0.0;
  std::map<CoreId, CoreId> mapping;  // requested node -> candidate node
  bool exact = true;                 // which GED path produced the result
};

namespace detail {

constexpr Cost kCostEps = 1e-9;

// Total edit cost of a fixed bijection, per the node/edge match rules.
inline Cost bijection_cost(const Topology& req, const Topology& cand,
                           const std::map<CoreId, CoreId>& mapping,
                           const EditCostModel& cm) {
  Cost c = 0.0;
  for (const auto& [u, v] : mapping) c += node_match(req.attr(u), cand.attr(v), cm);
  std::size_t matched = 0;
  for (const Edge& e : req.edges) {
    Edge m = make_edge(mapping.at(e.first), mapping.at(e.second));
    if (cand.edges.count(m)) {
      ++matched;
    } else {
      c += edge_match(e, std::nullopt, cm);
    }
  }
  c += static_cast<Cost>(cand.edges.size() - matched) * cm.edge_insert_cost;
  return c;
}

// O(n^3) Hungarian algorithm (potentials form); returns the column assigned
// to each row of a square cost matrix.
inline std::vector<int> hungarian(const std::vector<std::vector<Cost>>& a) {
  const int n = static_cast<int>(a.size());
  const Cost INF = std::numeric_limits<Cost>::infinity();
  std::vector<Cost> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<Cost> minv(n + 1, INF);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      Cost delta = INF;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        Cost cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

// Approximate GED: bipartite assignment on node-level costs with a degree
// term, then the true cost of the induced bijection.
inline GedResult approx_ged(const Topology& req, const Topology& cand,
                            const EditCostModel& cm) {
  const int n = static_cast<int>(req.nodes.size());
  auto adj_r = req.adjacency();
  auto adj_c = cand.adjacency();
  Cost edge_unit = std::min(cm.edge_delete_cost, cm.edge_insert_cost);
  std::vector<std::vector<Cost>> a(n, std::vector<Cost>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      CoreId u = req.nodes[i], v = cand.nodes[j];
      Cost deg = std::abs(static_cast<int>(adj_r[u].size()) -
                          static_cast<int>(adj_c[v].size()));
      a[i][j] = node_match(req.attr(u), cand.attr(v), cm) + 0.5 * deg * edge_unit;
    }
  }
  auto assign = hungarian(a);
  GedResult r;
  r.exact = false;
  for (int i = 0; i < n; ++i) r.mapping[req.nodes[i]] = cand.nodes[assign[i]];
  r.distance = bijection_cost(req, cand, r.mapping, cm);
  return r;
}

// Exact GED via depth-first branch and bound over partial bijections. The
// admissible lower bound adds, per unassigned requested node, its cheapest
// node-match against any unused candidate node.
inline GedResult exact_ged(const Topology& req, const Topology& cand,
                           const EditCostModel& cm) {
  const int n = static_cast<int>(req.nodes.size());
  auto adj_r = req.adjacency();

  // Assignment order: connected-first over the requested graph so edge
  // costs accrue early.
  std::vector<CoreId> order;
  {
    std::set<CoreId> placed;
    while (static_cast<int>(order.size()) < n) {
      CoreId pick = -1;
      for (CoreId u : req.nodes) {
        if (placed.count(u)) continue;
        for (CoreId m : adj_r[u]) {
          if (placed.count(m)) { pick = u; break; }
        }
        if (pick >= 0) break;
      }
      if (pick < 0) {
        for (CoreId u : req.nodes) {
          if (!placed.count(u)) { pick = u; break; }
        }
      }
      placed.insert(pick);
      order.push_back(pick);
    }
  }

  std::map<CoreId, std::vector<Cost>> node_cost;  // req node -> per-cand cost
  for (CoreId u : req.nodes) {
    auto& row = node_cost[u];
    for (CoreId v : cand.nodes) row.push_back(node_match(req.attr(u), cand.attr(v), cm));
  }

  // Warm start keeps the search shallow.
  GedResult best = approx_ged(req, cand, cm);
  std::vector<CoreId> best_vec;  // candidate ids keyed by sorted req ids
  for (CoreId u : req.nodes) best_vec.push_back(best.mapping.at(u));

  std::map<CoreId, CoreId> fwd;
  std::set<CoreId> used;

  std::function<void(int, Cost)> rec = [&](int idx, Cost cost) {
    if (idx == n) {
      std::vector<CoreId> vec;
      for (CoreId u : req.nodes) vec.push_back(fwd.at(u));
      if (cost < best.distance - kCostEps ||
          (cost < best.distance + kCostEps && vec < best_vec)) {
        best.distance = cost;
        best.mapping = fwd;
        best.exact = true;
        best_vec = vec;
      }
      return;
    }
    CoreId u = order[idx];
    for (std::size_t j = 0; j < cand.nodes.size(); ++j) {
      CoreId v = cand.nodes[j];
      if (used.count(v)) continue;
      Cost add = node_cost[u][j];
      // Edge terms against already-assigned neighbors on both sides.
      for (CoreId um : adj_r[u]) {
        auto it = fwd.find(um);
        if (it == fwd.end()) continue;
        if (!cand.has_edge(v, it->second)) {
          add += cm.edge_delete_cost + cm.critical_penalty(make_edge(u, um));
        }
      }
      for (CoreId vm : cand.neighbors(v)) {
        if (!used.count(vm)) continue;
        CoreId pre = -1;
        for (const auto& [ru, rv] : fwd) {
          if (rv == vm) { pre = ru; break; }
        }
        if (pre >= 0 && !req.has_edge(u, pre)) add += cm.edge_insert_cost;
      }
      Cost next = cost + add;
      // Lower bound for the remaining nodes.
      Cost lb = next;
      for (int r = idx + 1; r < n; ++r) {
        CoreId ru = order[r];
        Cost mn = std::numeric_limits<Cost>::infinity();
        for (std::size_t cj = 0; cj < cand.nodes.size(); ++cj) {
          if (used.count(cand.nodes[cj]) || cand.nodes[cj] == v) continue;
          mn = std::min(mn, node_cost[ru][cj]);
        }
        if (std::isfinite(mn)) lb += mn;
      }
      if (lb > best.distance + kCostEps) continue;
      fwd[u] = v;
      used.insert(v);
      rec(idx + 1, next);
      fwd.erase(u);
      used.erase(v);
    }
  };
  rec(0, 0.0);
  // The search confirms the warm start even when it never improves on it.
  best.exact = true;
  return best;
}

}  // namespace detail

struct GedOptions {
  std::size_t exact_max_nodes = 12;  // larger graphs use the approximate path
};

// Minimum edit cost over node bijections between two equal-size graphs,
// with a deterministic tie-break (smallest virtual->physical pairs first).
inline GedResult topo_edit_distance(const Topology& t_req, const Topology& candidate,
                                    const EditCostModel& cm, GedOptions opts = {}) {
  if (t_req.nodes.size() != candidate.nodes.size()) {
    raise(ErrorCode::SizeMismatch,
          "requested " + std::to_string(t_req.nodes.size()) + " nodes vs candidate " +
              std::to_string(candidate.nodes.size()));
  }
  if (t_req.nodes.size() <= opts.exact_max_nodes) {
    return detail::exact_ged(t_req, candidate, cm);
  }
  return detail::approx_ged(t_req, candidate, cm);
}

struct MinTedOptions {
  bool require_connected = true;
  bool dedup = true;
  std::size_t cap = 100000;
  GedOptions ged;
};

struct SelectionResult {
  std::vector<CoreId> cores;  // sorted ascending
  std::map<CoreId, CoreId> mapping;
  Cost distance = 0.0;
  bool exact_path = true;  // exact or approximate GED used for the winner
  bool truncated = false;
};

namespace detail {

// Direct sliding-window placement for rectangular mesh requests on a mesh
// chip: first free block in row-major base order, both orientations. A
// block is isomorphic to the requested grid by construction, so this skips
// the subgraph enumeration entirely.
inline std::optional<SelectionResult> block_placement(const Topology& t,
                                                      const std::set<CoreId>& allocated,
                                                      const Topology& req) {
  if (t.shape != MeshShape::Mesh2D || req.shape != MeshShape::Mesh2D) return std::nullopt;
  const int rw = req.width, rh = req.height;
  if (rw <= 0 || rh <= 0 ||
      req.nodes.size() != static_cast<std::size_t>(rw) * rh ||
      req.nodes.front() != 0 || req.nodes.back() != rw * rh - 1) {
    return std::nullopt;
  }
  auto scan = [&](int bw, int bh, bool transposed) -> std::optional<SelectionResult> {
    for (int by = 0; by + bh <= t.height; ++by) {
      for (int bx = 0; bx + bw <= t.width; ++bx) {
        SelectionResult r;
        bool ok = true;
        for (int y = 0; y < bh && ok; ++y) {
          for (int x = 0; x < bw; ++x) {
            CoreId p = (by + y) * t.width + (bx + x);
            CoreId v = transposed ? x * rw + y : y * rw + x;
            if (allocated.count(p) || !(req.attr(v) == t.attr(p))) {
              ok = false;
              break;
            }
            r.mapping[v] = p;
          }
        }
        if (!ok) continue;
        for (const auto& [v, p] : r.mapping) r.cores.push_back(p);
        std::sort(r.cores.begin(), r.cores.end());
        return r;
      }
    }
    return std::nullopt;
  };
  if (auto r = scan(rw, rh, false)) return r;
  if (rw != rh) return scan(rh, rw, true);
  return std::nullopt;
}

}  // namespace detail

// Algorithm: enumerate candidate subtopologies over the free cores,
// short-circuit on an isomorphic (zero-cost) candidate, otherwise take the
// argmin of topo_edit_distance with a deterministic tie-break on the sorted
// physical core-ID list.
inline SelectionResult min_topology_edit_distance(const Topology& t,
                                                  const std::set<CoreId>& allocated,
                                                  const Topology& t_req,
                                                  const EditCostModel& cm,
                                                  MinTedOptions opts = {}) {
  const std::size_t k = t_req.nodes.size();
  if (auto blk = detail::block_placement(t, allocated, t_req)) return *blk;
  std::vector<std::vector<CoreId>> candidates;
  IsoDedup classes(t);
  std::optional<SelectionResult> shortcut;

  bool truncated = for_each_candidate(
      t, allocated, k, opts.require_connected, opts.cap,
      [&](const std::vector<CoreId>& s) {
        Topology sub = t.induced(s);
        if (sub.edges.size() == t_req.edges.size()) {
          if (auto iso = find_isomorphism(t_req, sub)) {
            // Zero attribute cost only when memory penalties vanish too;
            // attr equality inside the isomorphism covers that.
            SelectionResult r;
            r.cores = s;
            r.mapping = *iso;
            r.distance = 0.0;
            shortcut = std::move(r);
            return false;  // exact-match short circuit
          }
        }
        if (opts.dedup) {
          classes.insert(s, candidates);
        } else {
          candidates.push_back(s);
        }
        return true;
      });
  if (shortcut) return *shortcut;

  if (candidates.empty()) {
    raise(ErrorCode::NoCandidate,
          opts.require_connected ? "no connected candidate subtopology"
                                 : "no candidate subtopology");
  }

  // Candidate evaluations are independent and could run concurrently; the
  // reduction below is order-independent because of the explicit tie-break.
  std::optional<SelectionResult> best;
  for (const auto& s : candidates) {
    Topology sub = t.induced(s);
    GedResult g = topo_edit_distance(t_req, sub, cm, opts.ged);
    if (!best || g.distance < best->distance - detail::kCostEps ||
        (g.distance < best->distance + detail::kCostEps && s < best->cores)) {
      SelectionResult r;
      r.cores = s;
      r.mapping = g.mapping;
      r.distance = g.distance;
      r.exact_path = g.exact;
      best = std::move(r);
    }
  }
  best->truncated = truncated;
  return *best;
}

namespace detail {

// Edit-cost-preserving mapping polish: among bijections of equal (or lower)
// edit cost, prefer the one with the smallest total physical hop distance
// over the requested edges. Pairwise swaps, deterministic order, bounded
// passes. Needs physical coordinates; no-op without them.
inline void refine_mapping_locality(const Topology& phys, const Topology& req,
                                    SelectionResult& r, const EditCostModel& cm) {
  if (req.edges.empty() || r.mapping.empty()) return;
  for (CoreId c : r.cores) {
    if (!phys.coords.count(c)) return;
  }
  Topology sub = phys.induced(r.cores);
  auto dist = [&](CoreId a, CoreId b) {
    const auto& pa = phys.coords.at(a);
    const auto& pb = phys.coords.at(b);
    return std::abs(pa.first - pb.first) + std::abs(pa.second - pb.second);
  };
  auto total_hops = [&](const std::map<CoreId, CoreId>& m) {
    long t = 0;
    for (const Edge& e : req.edges) t += dist(m.at(e.first), m.at(e.second));
    return t;
  };
  Cost base = bijection_cost(req, sub, r.mapping, cm);
  long cur = total_hops(r.mapping);
  const std::vector<CoreId>& vs = req.nodes;
  bool improved = true;
  for (int pass = 0; improved && pass < 8; ++pass) {
    improved = false;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      for (std::size_t j = i + 1; j < vs.size(); ++j) {
        std::swap(r.mapping[vs[i]], r.mapping[vs[j]]);
        long hops = total_hops(r.mapping);
        if (hops < cur) {
          Cost c = bijection_cost(req, sub, r.mapping, cm);
          if (c <= base + kCostEps) {
            base = std::min(base, c);
            cur = hops;
            improved = true;
            continue;
          }
        }
        std::swap(r.mapping[vs[i]], r.mapping[vs[j]]);
      }
    }
  }
  r.distance = bijection_cost(req, sub, r.mapping, cm);
}

}  // namespace detail

enum class AllocStrategy { Exact, ZigZag, SimilarTopology, Fragmented };

struct AllocationRequest {
  VmId vmid = 0;
  Topology requested_topology;
  AllocStrategy strategy = AllocStrategy::SimilarTopology;
  bool require_connected = true;
  bool require_noninterference = false;
};

// Strategy dispatch for vNPU core allocation. Exact succeeds only on a
// zero-distance isomorphic subtopology and raises TopologyLockIn when enough
// free cores exist but no placement matches.
inline SelectionResult allocate_cores(const Topology& t, const std::set<CoreId>& allocated,
                                      const AllocationRequest& request,
                                      const EditCostModel& cm, MinTedOptions opts = {}) {
  const Topology& req = request.requested_topology;
  const std::size_t k = req.nodes.size();
  std::size_t free_count = 0;
  for (CoreId n : t.nodes) {
    if (!allocated.count(n)) ++free_count;
  }
  if (k == 0 || k > free_count) {
    raise(ErrorCode::InsufficientCores,
          "need " + std::to_string(k) + " cores, " + std::to_string(free_count) +
              " free");
  }

  switch (request.strategy) {
    case AllocStrategy::ZigZag: {
      // Row-major free-core order; virtual IDs map in row-major order too.
      SelectionResult r;
      for (CoreId n : t.nodes) {
        if (!allocated.count(n)) {
          r.cores.push_back(n);
          if (r.cores.size() == k) break;
        }
      }
      std::size_t i = 0;
      for (CoreId v : req.nodes) r.mapping[v] = r.cores[i++];
      Topology sub = t.induced(r.cores);
      r.distance = detail::bijection_cost(req, sub, r.mapping, cm);
      return r;
    }
    case AllocStrategy::Exact: {
      std::optional<SelectionResult> found = detail::block_placement(t, allocated, req);
      if (found) return *found;
      for_each_candidate(t, allocated, k, request.require_connected, opts.cap,
                         [&](const std::vector<CoreId>& s) {
                           Topology sub = t.induced(s);
                           if (sub.edges.size() != req.edges.size()) return true;
                           if (auto iso = find_isomorphism(req, sub)) {
                             SelectionResult r;
                             r.cores = s;
                             r.mapping = *iso;
                             found = std::move(r);
                             return false;
                           }
                           return true;
                         });
      if (!found) {
        raise(ErrorCode::TopologyLockIn,
              "no isomorphic placement for " + std::to_string(k) +
                  " cores despite " + std::to_string(free_count) + " free");
      }
      return *found;
    }
    case AllocStrategy::SimilarTopology: {
      MinTedOptions o = opts;
      o.require_connected = request.require_connected;
      SelectionResult r = min_topology_edit_distance(t, allocated, req, cm, o);
      detail::refine_mapping_locality(t, req, r, cm);
      return r;
    }
    case AllocStrategy::Fragmented: {
      MinTedOptions o = opts;
      o.require_connected = false;
      SelectionResult r = min_topology_edit_distance(t, allocated, req, cm, o);
      detail::refine_mapping_locality(t, req, r, cm);
      return r;
    }
  }
  raise(ErrorCode::ConfigError, "unknown allocation strategy");
}

}  // namespace npuvsim
