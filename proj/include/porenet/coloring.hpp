#pragma once

// Parameter-sharing pattern: node and typed-edge colourings that are orbit
// labels of a permutation group. Two nodes (edges) share a colour exactly
// when some group element maps one onto the other.

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "porenet/crystal.hpp"
#include "porenet/error.hpp"

namespace porenet {

enum class NodeKind : unsigned char { Atom, Pore };

// h: atom -> atom, k: pore -> atom, l: atom -> pore.
enum class EdgeKind : unsigned char { AtomAtom = 0, PoreAtom = 1, AtomPore = 2 };
inline constexpr std::array<EdgeKind, 3> kEdgeKinds{EdgeKind::AtomAtom, EdgeKind::PoreAtom, EdgeKind::AtomPore};

inline const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::AtomAtom: return "h";
    case EdgeKind::PoreAtom: return "k";
    case EdgeKind::AtomPore: return "l";
  }
  return "?";
}

/// Directed edge. Indices are local to the node kind at each end.
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::size_t> parent_;
};

struct NodeColoring {
  std::vector<std::size_t> colors;
  std::size_t num_colors = 0;
  std::vector<NodeKind> kind;
};

/// Orbit labels of the group generated by `perms` on {0..n-1}. The orbit of
/// the smallest not-yet-coloured index gets the next colour.
inline NodeColoring node_coloring(std::span<const Permutation> perms, std::size_t n) {
  UnionFind uf(n);
  for (const auto& p : perms) {
    if (p.size() != n)
      throw ValidationError("permutation of length " + std::to_string(p.size()) + " acting on " +
                            std::to_string(n) + " nodes");
    for (std::size_t i = 0; i < n; ++i) uf.unite(i, p[i]);
  }
  NodeColoring out;
  out.colors.assign(n, 0);
  out.kind.assign(n, NodeKind::Atom);
  std::vector<std::size_t> root_color(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = uf.find(i);
    if (root_color[r] == SIZE_MAX) root_color[r] = out.num_colors++;
    out.colors[i] = root_color[r];
  }
  return out;
}

/// Colouring of one edge kind. Edges are kept sorted lexicographically, so
/// colour 0 is the orbit of the smallest edge, and so on.
struct KindColoring {
  std::vector<Edge> edges;
  std::vector<std::size_t> colors;
  std::size_t num_colors = 0;

  std::size_t index_of(const Edge& e) const {
    auto it = std::lower_bound(edges.begin(), edges.end(), e);
    if (it == edges.end() || *it != e) return SIZE_MAX;
    return static_cast<std::size_t>(it - edges.begin());
  }
  std::size_t color_of(const Edge& e) const {
    std::size_t i = index_of(e);
    if (i == SIZE_MAX)
      throw ValidationError("edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) + ") is not in the pattern");
    return colors[i];
  }
};

/// Orbits of G acting on ordered pairs via (i, j) -> (src_perms[g](i), dst_perms[g](j)).
/// Throws ValidationError naming the first (g, edge) whose image is missing.
inline KindColoring edge_coloring(std::span<const Permutation> src_perms, std::span<const Permutation> dst_perms,
                                  std::span<const Edge> edges, const char* kind_name = "") {
  if (src_perms.size() != dst_perms.size()) throw ValidationError("source and target permutation lists differ in length");
  KindColoring out;
  out.edges.assign(edges.begin(), edges.end());
  std::sort(out.edges.begin(), out.edges.end());
  if (std::adjacent_find(out.edges.begin(), out.edges.end()) != out.edges.end())
    throw ValidationError(std::string("duplicate ") + kind_name + " edge");
  UnionFind uf(out.edges.size());
  for (std::size_t g = 0; g < src_perms.size(); ++g) {
    for (std::size_t e = 0; e < out.edges.size(); ++e) {
      const Edge& ed = out.edges[e];
      if (ed.src >= src_perms[g].size() || ed.dst >= dst_perms[g].size())
        throw ValidationError(std::string(kind_name) + " edge (" + std::to_string(ed.src) + "," +
                              std::to_string(ed.dst) + ") references a node outside the permutation domain");
      Edge img{src_perms[g][ed.src], dst_perms[g][ed.dst]};
      std::size_t k = out.index_of(img);
      if (k == SIZE_MAX)
        throw ValidationError(std::string(kind_name) + " edge set is not closed under the group: element " +
                              std::to_string(g) + " maps (" + std::to_string(ed.src) + "," + std::to_string(ed.dst) +
                              ") to missing (" + std::to_string(img.src) + "," + std::to_string(img.dst) + ")");
      uf.unite(e, k);
    }
  }
  out.colors.assign(out.edges.size(), 0);
  std::vector<std::size_t> root_color(out.edges.size(), SIZE_MAX);
  for (std::size_t e = 0; e < out.edges.size(); ++e) {
    std::size_t r = uf.find(e);
    if (root_color[r] == SIZE_MAX) root_color[r] = out.num_colors++;
    out.colors[e] = root_color[r];
  }
  return out;
}

/// Per-kind edge colourings. Colour c of kind q has global index offset(q) + c,
/// so the three namespaces never overlap.
struct EdgeColoring {
  std::array<KindColoring, 3> kinds;

  const KindColoring& operator[](EdgeKind k) const { return kinds[static_cast<int>(k)]; }
  KindColoring& operator[](EdgeKind k) { return kinds[static_cast<int>(k)]; }

  std::size_t offset(EdgeKind k) const {
    std::size_t off = 0;
    for (int q = 0; q < static_cast<int>(k); ++q) off += kinds[q].num_colors;
    return off;
  }
  std::size_t total_colors() const {
    return kinds[0].num_colors + kinds[1].num_colors + kinds[2].num_colors;
  }
};

/// Colored bipartite graph plus the permutations it was derived from.
/// Nodes are indexed atoms first, then pores.
struct SharingPattern {
  std::size_t n_atoms = 0;
  std::size_t n_pores = 0;
  NodeColoring nodes;
  EdgeColoring edges;
  std::vector<Permutation> atom_perms;  // one per group element
  std::vector<Permutation> pore_perms;

  std::size_t group_order() const { return atom_perms.size(); }

  std::size_t atom_color(std::size_t i) const { return nodes.colors[i]; }
  std::size_t pore_color(std::size_t p) const { return nodes.colors[n_atoms + p]; }

  // Atom and pore colours partition [0, C_h); atoms come first because
  // colours are assigned by smallest member index.
  std::size_t num_atom_colors() const {
    std::vector<std::size_t> c(nodes.colors.begin(), nodes.colors.begin() + n_atoms);
    std::sort(c.begin(), c.end());
    return static_cast<std::size_t>(std::unique(c.begin(), c.end()) - c.begin());
  }
  std::size_t num_pore_colors() const { return nodes.num_colors - num_atom_colors(); }
};

/// Permutations on the combined node set (atoms, then pores).
inline std::vector<Permutation> combined_node_perms(std::span<const Permutation> atom_perms,
                                                    std::span<const Permutation> pore_perms) {
  if (atom_perms.size() != pore_perms.size()) throw ValidationError("atom and pore permutation lists differ in length");
  std::vector<Permutation> out;
  out.reserve(atom_perms.size());
  for (std::size_t g = 0; g < atom_perms.size(); ++g) {
    std::size_t na = atom_perms[g].size();
    std::vector<std::size_t> m(na + pore_perms[g].size());
    for (std::size_t i = 0; i < na; ++i) m[i] = atom_perms[g][i];
    for (std::size_t p = 0; p < pore_perms[g].size(); ++p) m[na + p] = na + pore_perms[g][p];
    out.emplace_back(std::move(m));
  }
  return out;
}

inline SharingPattern make_sharing_pattern(std::vector<Permutation> atom_perms, std::vector<Permutation> pore_perms,
                                           std::span<const Edge> h_edges, std::span<const Edge> k_edges,
                                           std::span<const Edge> l_edges) {
  if (atom_perms.empty()) throw ValidationError("a sharing pattern needs at least the identity element");
  SharingPattern p;
  p.n_atoms = atom_perms.front().size();
  p.n_pores = pore_perms.empty() ? 0 : pore_perms.front().size();
  if (pore_perms.empty()) pore_perms.assign(atom_perms.size(), Permutation::identity(0));
  auto combined = combined_node_perms(atom_perms, pore_perms);
  p.nodes = node_coloring(combined, p.n_atoms + p.n_pores);
  for (std::size_t i = 0; i < p.n_pores; ++i) p.nodes.kind[p.n_atoms + i] = NodeKind::Pore;
  p.edges[EdgeKind::AtomAtom] = edge_coloring(atom_perms, atom_perms, h_edges, "h");
  p.edges[EdgeKind::PoreAtom] = edge_coloring(pore_perms, atom_perms, k_edges, "k");
  p.edges[EdgeKind::AtomPore] = edge_coloring(atom_perms, pore_perms, l_edges, "l");
  p.atom_perms = std::move(atom_perms);
  p.pore_perms = std::move(pore_perms);
  return p;
}

// ---------------------------------------------------------------------------
// Validation

struct PatternViolation {
  std::string kind;          // "node", "h", "k" or "l"
  std::size_t element = 0;   // node index, or edge index within its kind
  std::size_t orbit = 0;     // smallest member index of the element's true orbit
  std::string message;
};

namespace detail {

// Checks one coloured set acted on by `act(g, x)`; elements are 0..n-1.
template <class Act>
void validate_colored_set(const std::string& kind, std::size_t n, std::size_t group_order,
                          const std::vector<std::size_t>& colors, Act act, std::vector<PatternViolation>& out) {
  auto orbit_min = [&](std::size_t x) {
    std::size_t m = x;
    for (std::size_t g = 0; g < group_order; ++g) m = std::min(m, act(g, x));
    return m;
  };
  std::vector<char> flagged(n, 0);
  auto flag = [&](std::size_t x, std::string msg) {
    if (flagged[x]) return;
    flagged[x] = 1;
    out.push_back({kind, x, orbit_min(x), std::move(msg)});
  };
  // (a) colours are constant along every group action.
  for (std::size_t g = 0; g < group_order; ++g)
    for (std::size_t x = 0; x < n; ++x) {
      std::size_t y = act(g, x);
      if (colors[y] != colors[x])
        flag(x, "element " + std::to_string(g) + " maps it to " + std::to_string(y) + " of a different colour");
    }
  // (b) each colour class lies inside one orbit: every member is reached from
  // the class representative by an explicit group element.
  std::size_t ncol = 0;
  for (std::size_t c : colors) ncol = std::max(ncol, c + 1);
  std::vector<std::size_t> rep(ncol, SIZE_MAX);
  for (std::size_t x = 0; x < n; ++x)
    if (rep[colors[x]] == SIZE_MAX) rep[colors[x]] = x;
  for (std::size_t x = 0; x < n; ++x) {
    std::size_t r = rep[colors[x]];
    bool reached = false;
    for (std::size_t g = 0; g < group_order && !reached; ++g) reached = act(g, r) == x;
    if (!reached) flag(x, "shares colour " + std::to_string(colors[x]) + " with " + std::to_string(r) + " but lies on another orbit");
  }
}

}  // namespace detail

/// Empty result means the pattern is consistent with its permutations in
/// both directions, for nodes and for every edge kind.
inline std::vector<PatternViolation> validate_pattern(const SharingPattern& p) {
  std::vector<PatternViolation> out;
  const std::size_t order = p.group_order();
  if (p.pore_perms.size() != order) {
    out.push_back({"node", 0, 0, "pore permutation list has the wrong length"});
    return out;
  }
  for (std::size_t g = 0; g < order; ++g)
    if (p.atom_perms[g].size() != p.n_atoms || p.pore_perms[g].size() != p.n_pores) {
      out.push_back({"node", 0, 0, "permutation " + std::to_string(g) + " has the wrong length"});
      return out;
    }
  auto node_act = [&](std::size_t g, std::size_t x) {
    return x < p.n_atoms ? p.atom_perms[g][x] : p.n_atoms + p.pore_perms[g][x - p.n_atoms];
  };
  detail::validate_colored_set("node", p.n_atoms + p.n_pores, order, p.nodes.colors, node_act, out);
  // Atom and pore colours must be disjoint.
  for (std::size_t i = 0; i < p.n_atoms; ++i)
    for (std::size_t q = 0; q < p.n_pores; ++q)
      if (p.nodes.colors[i] == p.nodes.colors[p.n_atoms + q]) {
        out.push_back({"node", i, i, "atom shares a colour with pore " + std::to_string(q)});
        q = p.n_pores;
      }
  for (EdgeKind kind : kEdgeKinds) {
    const KindColoring& kc = p.edges[kind];
    const auto& src = kind == EdgeKind::PoreAtom ? p.pore_perms : p.atom_perms;
    const auto& dst = kind == EdgeKind::AtomPore ? p.pore_perms : p.atom_perms;
    bool closed = true;
    auto edge_act = [&](std::size_t g, std::size_t e) {
      Edge img{src[g][kc.edges[e].src], dst[g][kc.edges[e].dst]};
      std::size_t k = kc.index_of(img);
      if (k == SIZE_MAX) {
        closed = false;
        return e;
      }
      return k;
    };
    detail::validate_colored_set(edge_kind_name(kind), kc.edges.size(), order, kc.colors, edge_act, out);
    if (!closed) out.push_back({edge_kind_name(kind), 0, 0, "edge set is not closed under the group"});
  }
  return out;
}

/// Distinct true orbits (by smallest member) that contain a violation of the
/// given kind.
inline std::vector<std::size_t> violating_orbits(const std::vector<PatternViolation>& v, const std::string& kind) {
  std::vector<std::size_t> out;
  for (const auto& x : v)
    if (x.kind == kind) out.push_back(x.orbit);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace porenet
