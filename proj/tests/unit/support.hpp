#pragma once

// Shared fixtures and independent oracles for the unit tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "porenet/porenet.hpp"

namespace testing_support {

using namespace porenet;

inline std::string data_path(const std::string& rel) { return std::string(PORENET_DATA_DIR) + "/" + rel; }
inline std::string mor_path() { return data_path("frameworks/MOR.fw"); }
inline std::string mfi_path() { return data_path("frameworks/MFI.fw"); }

inline const Framework& mor() {
  static const Framework f = load_framework(mor_path());
  return f;
}
inline const Framework& mfi() {
  static const Framework f = load_framework(mfi_path());
  return f;
}

/// Four sites on a square in the xy plane with the 4-fold rotation about z,
/// nearest-neighbour bonds and one pore in the middle.
inline Framework square_toy(bool with_group = true) {
  std::vector<FracCoord> sites{FracCoord::wrap({0.25, 0.0, 0.0}), FracCoord::wrap({0.0, 0.25, 0.0}),
                               FracCoord::wrap({-0.25, 0.0, 0.0}), FracCoord::wrap({0.0, -0.25, 0.0})};
  std::vector<SymOp> ops;
  if (with_group) ops.push_back(SymOp::parse_triplet("-y,x,z"));
  std::vector<Bond> bonds{{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  std::vector<Pore> pores{{FracCoord::wrap({0.0, 0.0, 0.0}), 12.0, {0, 1, 2, 3}}};
  return Framework::create("square", Lattice::orthorhombic(10, 10, 10), sites, ops, bonds, pores);
}

// ---------------------------------------------------------------------------
// Brute-force orbit oracle: label propagation over an explicit action table,
// written without the library's union-find.

inline std::vector<std::size_t> orbit_labels(std::size_t n, const std::vector<std::vector<std::size_t>>& table) {
  std::vector<std::size_t> label(n, SIZE_MAX);
  std::size_t next = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] != SIZE_MAX) continue;
    std::vector<std::size_t> stack{s};
    label[s] = next;
    while (!stack.empty()) {
      std::size_t x = stack.back();
      stack.pop_back();
      for (const auto& g : table) {
        if (label[g[x]] == SIZE_MAX) {
          label[g[x]] = next;
          stack.push_back(g[x]);
        }
      }
    }
    ++next;
  }
  return label;
}

/// Edge orbits: every group element maps (s, d) to (src[g][s], dst[g][d]).
inline std::vector<std::size_t> edge_orbit_labels(const std::vector<Edge>& edges,
                                                  const std::vector<std::vector<std::size_t>>& src,
                                                  const std::vector<std::vector<std::size_t>>& dst) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  for (std::size_t e = 0; e < edges.size(); ++e) index[{edges[e].src, edges[e].dst}] = e;
  std::vector<std::vector<std::size_t>> table(src.size(), std::vector<std::size_t>(edges.size()));
  for (std::size_t g = 0; g < src.size(); ++g)
    for (std::size_t e = 0; e < edges.size(); ++e)
      table[g][e] = index.at({src[g][edges[e].src], dst[g][edges[e].dst]});
  return orbit_labels(edges.size(), table);
}

/// True when both labelings induce the same partition.
template <class A, class B>
bool same_partition(const A& a, const B& b) {
  if (a.size() != b.size()) return false;
  std::map<std::size_t, std::size_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

inline std::size_t distinct(const std::vector<std::size_t>& v) { return std::set<std::size_t>(v.begin(), v.end()).size(); }

/// Site permutation of every group element computed from the raw integer
/// operation and the stored coordinates, independently of the library's
/// matching code.
inline std::vector<std::vector<std::size_t>> point_action_table(const Framework& f, const std::vector<FracCoord>& pos,
                                                               double tol = 1e-3) {
  std::vector<std::vector<std::size_t>> table;
  for (const SymOp& op : f.group().ops()) {
    std::vector<std::size_t> img(pos.size(), SIZE_MAX);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      double y[3];
      for (int r = 0; r < 3; ++r) {
        y[r] = static_cast<double>(op.tran[r]) / 24.0;
        for (int c = 0; c < 3; ++c) y[r] += op.rot[r][c] * pos[i][c];
      }
      for (std::size_t j = 0; j < pos.size(); ++j) {
        double worst = 0.0;
        for (int r = 0; r < 3; ++r) {
          double d = y[r] - pos[j][r];
          d -= std::round(d);
          worst = std::max(worst, std::abs(d));
        }
        if (worst < tol) img[i] = j;
      }
    }
    table.push_back(img);
  }
  return table;
}

inline std::vector<std::vector<std::size_t>> site_action_table(const Framework& f) {
  return point_action_table(f, f.sites().positions());
}

inline std::vector<std::vector<std::size_t>> pore_action_table(const Framework& f) {
  std::vector<FracCoord> c;
  for (const Pore& p : f.pores()) c.push_back(p.center);
  return point_action_table(f, c);
}

inline std::vector<std::vector<std::size_t>> tables_of(const std::vector<Permutation>& ps) {
  std::vector<std::vector<std::size_t>> t;
  for (const auto& p : ps) t.push_back(p.mapping());
  return t;
}

inline Occupancy random_occupancy(std::size_t n, std::size_t n_al, Rng& rng) {
  std::vector<Species> t(n, Species::Si);
  auto idx = iota_indices(n);
  rng.shuffle(idx);
  for (std::size_t i = 0; i < n_al; ++i) t[idx[i]] = Species::Al;
  return Occupancy(std::move(t));
}

// ---------------------------------------------------------------------------
// Fuzzed small groups

inline std::vector<Permutation> perms_of(const std::vector<std::vector<std::size_t>>& t) {
  std::vector<Permutation> out;
  for (const auto& m : t) out.emplace_back(m);
  return out;
}

// Random finite group acting on at most 24 points with |G| <= 16. The abstract
// group is Z_a x Z_b or the dihedral group D_m; the point set is a disjoint
// union of coset spaces, shuffled. Returns the full action table (identity
// first).
struct FuzzGroup {
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> table;
};

inline FuzzGroup fuzz_group(std::uint64_t seed) {
  Rng rng(seed);
  // Elements as integer codes with an explicit multiplication.
  std::size_t order;
  std::function<std::size_t(std::size_t, std::size_t)> mul;
  if (rng.below(2) == 0) {
    const std::size_t a = 1 + rng.below(4), b = 1 + rng.below(4);  // order <= 16
    order = a * b;
    mul = [a, b](std::size_t x, std::size_t y) { return ((x / b + y / b) % a) * b + (x % b + y % b) % b; };
  } else {
    const std::size_t m = 2 + rng.below(7);  // D_m, order 2m <= 16
    order = 2 * m;
    // code = r * 2 + s for rot^r flip^s; flip rot = rot^-1 flip.
    mul = [m](std::size_t x, std::size_t y) {
      std::size_t r1 = x / 2, s1 = x % 2, r2 = y / 2, s2 = y % 2;
      std::size_t r = s1 ? (r1 + m - r2) % m : (r1 + r2) % m;
      return r * 2 + (s1 ^ s2);
    };
  }
  // Orbits: cosets of random cyclic subgroups <h>, G acting by left
  // multiplication on the coset space.
  std::vector<std::vector<std::vector<std::size_t>>> orbits;
  std::size_t n = 0;
  while (true) {
    const std::size_t h = rng.below(order);
    std::vector<std::size_t> sub{0};
    for (std::size_t x = h; x != 0; x = mul(x, h)) sub.push_back(x);
    // Left cosets gH.
    std::vector<std::vector<std::size_t>> cosets;
    std::vector<char> used(order, 0);
    for (std::size_t g = 0; g < order; ++g) {
      if (used[g]) continue;
      std::vector<std::size_t> c;
      for (std::size_t s : sub) {
        c.push_back(mul(g, s));
        used[mul(g, s)] = 1;
      }
      std::sort(c.begin(), c.end());
      cosets.push_back(c);
    }
    if (n + cosets.size() > 24) break;
    n += cosets.size();
    orbits.push_back(cosets);
    if (rng.below(4) == 0) break;
  }
  if (orbits.empty()) {
    std::vector<std::vector<std::size_t>> all{std::vector<std::size_t>(order)};
    std::iota(all[0].begin(), all[0].end(), std::size_t{0});
    orbits.push_back(all);
    n = 1;
  }
  std::vector<std::size_t> relabel = iota_indices(n);
  rng.shuffle(relabel);
  FuzzGroup out;
  out.n = n;
  for (std::size_t g = 0; g < order; ++g) {
    std::vector<std::size_t> img(n);
    std::size_t base = 0;
    for (const auto& cosets : orbits) {
      for (std::size_t c = 0; c < cosets.size(); ++c) {
        std::size_t moved = mul(g, cosets[c][0]);
        std::size_t target = 0;
        while (std::find(cosets[target].begin(), cosets[target].end(), moved) == cosets[target].end()) ++target;
        img[relabel[base + c]] = relabel[base + target];
      }
      base += cosets.size();
    }
    out.table.push_back(img);
  }
  return out;
}

// Union of orbits of a few random ordered pairs under the full table.
inline std::vector<Edge> closed_edge_set(const FuzzGroup& g, Rng& rng) {
  std::set<std::pair<std::size_t, std::size_t>> s;
  const std::size_t seeds = 1 + rng.below(4);
  for (std::size_t k = 0; k < seeds; ++k) {
    std::size_t a = rng.below(g.n), b = rng.below(g.n);
    if (a == b) continue;
    for (const auto& p : g.table) s.insert({p[a], p[b]});
  }
  std::vector<Edge> e;
  for (auto [a, b] : s) e.push_back({a, b});
  return e;
}

}  // namespace testing_support
