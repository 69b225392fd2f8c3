#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "npuvsim/types.hpp"

namespace npuvsim {

struct NodeAttr {
  std::string abbr = "C";           // heterogeneity tag, e.g. "SA" / "VU"
  std::optional<int> mem_dist;      // hops to the nearest memory interface;
                                    // unset means "don't care" (wildcard)

  // Wildcard-aware match: an unset mem_dist is compatible with anything.
  bool operator==(const NodeAttr& o) const {
    if (abbr != o.abbr) return false;
    if (!mem_dist || !o.mem_dist) return true;
    return *mem_dist == *o.mem_dist;
  }
};

using Edge = std::pair<CoreId, CoreId>;

inline Edge make_edge(CoreId a, CoreId b) {
  return a < b ? Edge{a, b} : Edge{b, a};
}

enum class MeshShape { Mesh2D, Irregular };

// Undirected labeled graph of NPU cores. For Mesh2D the edges are exactly
// the 4-neighbor links and coords are row-major (id = y * width + x).
class Topology {
 public:
  MeshShape shape = MeshShape::Irregular;
  int width = 0;
  int height = 0;
  std::vector<CoreId> nodes;  // sorted ascending
  std::set<Edge> edges;
  std::map<CoreId, std::pair<int, int>> coords;
  std::map<CoreId, NodeAttr> attrs;

  static Topology mesh(int w, int h) {
    Topology t;
    t.shape = MeshShape::Mesh2D;
    t.width = w;
    t.height = h;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        CoreId id = y * w + x;
        t.nodes.push_back(id);
        t.coords[id] = {x, y};
        t.attrs[id] = NodeAttr{};
        if (x + 1 < w) t.edges.insert(make_edge(id, id + 1));
        if (y + 1 < h) t.edges.insert(make_edge(id, id + w));
      }
    }
    return t;
  }

  std::size_t node_count() const { return nodes.size(); }

  bool has_node(CoreId n) const {
    return std::binary_search(nodes.begin(), nodes.end(), n);
  }

  bool has_edge(CoreId a, CoreId b) const { return edges.count(make_edge(a, b)) > 0; }

  void add_node(CoreId n, NodeAttr a = {}) {
    if (!has_node(n)) {
      nodes.insert(std::lower_bound(nodes.begin(), nodes.end(), n), n);
    }
    attrs[n] = a;
  }

  void add_edge(CoreId a, CoreId b) {
    add_node_if_missing(a);
    add_node_if_missing(b);
    edges.insert(make_edge(a, b));
  }

  const NodeAttr& attr(CoreId n) const {
    auto it = attrs.find(n);
    static const NodeAttr kDefault{};
    return it == attrs.end() ? kDefault : it->second;
  }

  NodeAttr& attr(CoreId n) { return attrs[n]; }

  // Sorted neighbor list.
  std::vector<CoreId> neighbors(CoreId n) const {
    std::vector<CoreId> out;
    for (const auto& e : edges) {
      if (e.first == n) out.push_back(e.second);
      if (e.second == n) out.push_back(e.first);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // Adjacency map (sorted neighbors), built once for hot loops.
  std::map<CoreId, std::vector<CoreId>> adjacency() const {
    std::map<CoreId, std::vector<CoreId>> adj;
    for (CoreId n : nodes) adj[n];
    for (const auto& e : edges) {
      adj[e.first].push_back(e.second);
      adj[e.second].push_back(e.first);
    }
    for (auto& [n, v] : adj) std::sort(v.begin(), v.end());
    return adj;
  }

  Topology induced(const std::vector<CoreId>& subset) const {
    Topology t;
    t.shape = MeshShape::Irregular;
    t.nodes = subset;
    std::sort(t.nodes.begin(), t.nodes.end());
    for (CoreId n : t.nodes) {
      auto cit = coords.find(n);
      if (cit != coords.end()) t.coords[n] = cit->second;
      t.attrs[n] = attr(n);
    }
    for (const auto& e : edges) {
      if (t.has_node(e.first) && t.has_node(e.second)) t.edges.insert(e);
    }
    return t;
  }

 private:
  void add_node_if_missing(CoreId n) {
    if (!has_node(n)) {
      nodes.insert(std::lower_bound(nodes.begin(), nodes.end(), n), n);
      attrs.emplace(n, NodeAttr{});
    }
  }
};

// True iff the graph has a single connected component. Empty graph counts
// as connected.
inline bool is_connected(const Topology& t) {
  if (t.nodes.empty()) return true;
  auto adj = t.adjacency();
  std::set<CoreId> seen;
  std::vector<CoreId> stack{t.nodes.front()};
  seen.insert(t.nodes.front());
  while (!stack.empty()) {
    CoreId n = stack.back();
    stack.pop_back();
    for (CoreId m : adj[n]) {
      if (seen.insert(m).second) stack.push_back(m);
    }
  }
  return seen.size() == t.nodes.size();
}

inline bool is_connected_subset(const Topology& t, const std::vector<CoreId>& subset) {
  if (subset.empty()) return true;
  std::set<CoreId> members(subset.begin(), subset.end());
  std::set<CoreId> seen;
  std::vector<CoreId> stack{subset.front()};
  seen.insert(subset.front());
  while (!stack.empty()) {
    CoreId n = stack.back();
    stack.pop_back();
    for (CoreId m : t.neighbors(n)) {
      if (members.count(m) && seen.insert(m).second) stack.push_back(m);
    }
  }
  return seen.size() == members.size();
}

namespace detail {

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// Attribute-aware canonical signature: degree sequence plus iterative
// neighborhood hashing. Equal graphs map to equal keys; collisions are
// resolved by an exact isomorphism check at the call site.
inline std::uint64_t canonical_key(const Topology& t) {
  auto adj = t.adjacency();
  std::map<CoreId, std::uint64_t> h;
  for (CoreId n : t.nodes) {
    const NodeAttr& a = t.attr(n);
    h[n] = detail::mix(detail::hash_string(a.abbr),
                       detail::mix(static_cast<std::uint64_t>(a.mem_dist.value_or(-1)),
                                   adj[n].size()));
  }
  for (int round = 0; round < 3; ++round) {
    std::map<CoreId, std::uint64_t> next;
    for (CoreId n : t.nodes) {
      std::vector<std::uint64_t> nh;
      for (CoreId m : adj[n]) nh.push_back(h[m]);
      std::sort(nh.begin(), nh.end());
      std::uint64_t v = h[n];
      for (auto x : nh) v = detail::mix(v, x);
      next[n] = v;
    }
    h = next;
  }
  std::vector<std::uint64_t> all;
  for (CoreId n : t.nodes) all.push_back(h[n]);
  std::sort(all.begin(), all.end());
  std::uint64_t key = detail::mix(t.nodes.size(), t.edges.size());
  for (auto x : all) key = detail::mix(key, x);
  return key;
}

// Exact attribute-preserving isomorphism search (backtracking). Returns a
// node mapping a→b when one exists.
inline std::optional<std::map<CoreId, CoreId>> find_isomorphism(const Topology& a,
                                                                const Topology& b) {
  if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size()) {
    return std::nullopt;
  }
  auto adj_a = a.adjacency();
  auto adj_b = b.adjacency();
  const std::size_t n = a.nodes.size();
  std::map<CoreId, CoreId> fwd, rev;

  // Order a-nodes so each (after the first in its component) touches an
  // already-assigned node; cuts the branching sharply.
  std::vector<CoreId> order;
  {
    std::set<CoreId> placed;
    while (order.size() < n) {
      CoreId pick = -1;
      for (CoreId cand : a.nodes) {
        if (placed.count(cand)) continue;
        bool touches = false;
        for (CoreId m : adj_a[cand]) {
          if (placed.count(m)) { touches = true; break; }
        }
        if (touches) { pick = cand; break; }
      }
      if (pick < 0) {
        for (CoreId cand : a.nodes) {
          if (!placed.count(cand)) { pick = cand; break; }
        }
      }
      placed.insert(pick);
      order.push_back(pick);
    }
  }

  std::function<bool(std::size_t)> rec = [&](std::size_t idx) -> bool {
    if (idx == n) return true;
    CoreId u = order[idx];
    for (CoreId v : b.nodes) {
      if (rev.count(v)) continue;
      if (!(a.attr(u) == b.attr(v))) continue;
      if (adj_a[u].size() != adj_b[v].size()) continue;
      bool ok = true;
      for (CoreId um : adj_a[u]) {
        auto it = fwd.find(um);
        if (it != fwd.end() && !b.has_edge(v, it->second)) { ok = false; break; }
      }
      if (ok) {
        for (CoreId vm : adj_b[v]) {
          auto it = rev.find(vm);
          if (it != rev.end() && !a.has_edge(u, it->second)) { ok = false; break; }
        }
      }
      if (!ok) continue;
      fwd[u] = v;
      rev[v] = u;
      if (rec(idx + 1)) return true;
      fwd.erase(u);
      rev.erase(v);
    }
    return false;
  };
  if (rec(0)) return fwd;
  return std::nullopt;
}

inline bool is_isomorphic(const Topology& a, const Topology& b) {
  return find_isomorphism(a, b).has_value();
}

struct CandidateList {
  std::vector<std::vector<CoreId>> sets;  // each sorted ascending
  bool truncated = false;
};

// Streams k-subsets of the free cores in a deterministic order. With
// require_connected the enumeration walks connected induced subgraphs by
// seeded expansion (each set emitted exactly once, at its minimum seed);
// otherwise it is plain lexicographic combinations. The callback returns
// false to stop early. Returns true if enumeration was cut short by cap.
inline bool for_each_candidate(const Topology& t,
                               const std::set<CoreId>& allocated,
                               std::size_t k,
                               bool require_connected,
                               std::size_t cap,
                               const std::function<bool(const std::vector<CoreId>&)>& fn) {
  std::vector<CoreId> free_nodes;
  for (CoreId n : t.nodes) {
    if (!allocated.count(n)) free_nodes.push_back(n);
  }
  if (k > free_nodes.size()) {
    raise(ErrorCode::InsufficientCores,
          "need " + std::to_string(k) + " cores, " +
              std::to_string(free_nodes.size()) + " free");
  }
  if (k == 0) return false;

  std::size_t emitted = 0;
  bool truncated = false;
  bool stop = false;
  auto emit = [&](std::vector<CoreId> s) {
    if (emitted >= cap) {
      truncated = true;
      stop = true;
      return;
    }
    ++emitted;
    std::sort(s.begin(), s.end());
    if (!fn(s)) stop = true;
  };

  if (!require_connected) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    while (!stop) {
      std::vector<CoreId> s;
      for (auto i : idx) s.push_back(free_nodes[i]);
      emit(std::move(s));
      if (stop) break;
      std::size_t i = k;
      while (i > 0 && idx[i - 1] == free_nodes.size() - k + i - 1) --i;
      if (i == 0) break;
      ++idx[i - 1];
      for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
    return truncated;
  }

  auto adj = t.adjacency();
  std::set<CoreId> free_set(free_nodes.begin(), free_nodes.end());

  // Seeded expansion: for each seed v (ascending), enumerate connected sets
  // whose minimum member is v, restricting extension to ids > v.
  std::vector<CoreId> sub;
  std::set<CoreId> in_sub;
  for (CoreId seed : free_nodes) {
    if (stop) break;
    sub = {seed};
    in_sub = {seed};
    std::vector<CoreId> ext;
    for (CoreId m : adj[seed]) {
      if (m > seed && free_set.count(m)) ext.push_back(m);
    }
    std::function<void(std::vector<CoreId>&)> extend =
        [&](std::vector<CoreId>& extension) {
          if (stop) return;
          if (sub.size() == k) {
            emit(sub);
            return;
          }
          std::vector<CoreId> local = extension;
          while (!local.empty() && !stop) {
            CoreId w = local.front();
            local.erase(local.begin());
            // Exclusive extension: new neighbors of w, beyond the seed,
            // free, and not already adjacent to the current set.
            std::vector<CoreId> next = local;
            for (CoreId m : adj[w]) {
              if (m <= seed || !free_set.count(m) || in_sub.count(m)) continue;
              bool adjacent_before = false;
              for (CoreId s : sub) {
                if (t.has_edge(s, m)) { adjacent_before = true; break; }
              }
              if (!adjacent_before) next.push_back(m);
            }
            sub.push_back(w);
            in_sub.insert(w);
            extend(next);
            sub.pop_back();
            in_sub.erase(w);
          }
        };
    if (k == 1) {
      emit(sub);
    } else {
      extend(ext);
    }
  }
  return truncated;
}

// Keeps one representative per isomorphism class of the induced subgraph.
// Among duplicates the lexicographically smallest sorted core-ID list wins.
class IsoDedup {
 public:
  explicit IsoDedup(const Topology& t) : t_(t) {}

  // Returns the index the set was stored at, or -1 if it was a duplicate
  // that did not replace its representative.
  int insert(const std::vector<CoreId>& s, std::vector<std::vector<CoreId>>& out) {
    Topology sub = t_.induced(s);
    std::uint64_t key = canonical_key(sub);
    auto& bucket = buckets_[key];
    for (auto& [seen, idx] : bucket) {
      if (is_isomorphic(sub, seen)) {
        if (s < out[idx]) {
          out[idx] = s;
          return static_cast<int>(idx);
        }
        return -1;
      }
    }
    out.push_back(s);
    bucket.emplace_back(std::move(sub), out.size() - 1);
    return static_cast<int>(out.size() - 1);
  }

 private:
  const Topology& t_;
  std::map<std::uint64_t, std::vector<std::pair<Topology, std::size_t>>> buckets_;
};

inline CandidateList enumerate_candidates(const Topology& t,
                                          const std::set<CoreId>& allocated,
                                          std::size_t k,
                                          bool require_connected,
                                          bool dedup,
                                          std::size_t cap = 100000) {
  CandidateList out;
  IsoDedup classes(t);
  out.truncated = for_each_candidate(
      t, allocated, k, require_connected, cap, [&](const std::vector<CoreId>& s) {
        if (dedup) {
          classes.insert(s, out.sets);
        } else {
          out.sets.push_back(s);
        }
        return true;
      });
  return out;
}

}  // namespace npuvsim
