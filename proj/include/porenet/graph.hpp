#pragma once

// Porous framework description and per-configuration crystal graphs:
// T-atom nodes with one-hot Si/Al features, pore nodes with (area, boundary
// size) features, bonds as atom->atom edges and pore boundaries as
// pore->atom / atom->pore edges, all carrying Gaussian RBF distance features.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "porenet/coloring.hpp"
#include "porenet/crystal.hpp"
#include "porenet/error.hpp"

namespace porenet {

inline constexpr double kDefaultBondCutoff = 3.5;  // angstrom, T-T

struct Pore {
  FracCoord center;
  double area = 0.0;                   // angstrom^2
  std::vector<std::size_t> boundary;   // site indices
};

struct Bond {
  std::size_t a = 0;
  std::size_t b = 0;  // a < b
  friend auto operator<=>(const Bond&, const Bond&) = default;
};

struct BondResult {
  std::vector<Bond> bonds;
  std::vector<std::size_t> isolated_sites;  // sites without any neighbour
};

/// All unordered site pairs closer than `cutoff` under the minimum image
/// convention, sorted.
inline BondResult derive_bonds(const Lattice& lattice, const SiteSet& sites, double cutoff) {
  if (!(cutoff > 0.0)) throw ValidationError("bond cutoff must be positive");
  BondResult r;
  std::vector<std::size_t> degree(sites.size(), 0);
  for (std::size_t i = 0; i < sites.size(); ++i)
    for (std::size_t j = i + 1; j < sites.size(); ++j)
      if (min_image_distance(lattice, sites[i], sites[j]) < cutoff) {
        r.bonds.push_back({i, j});
        ++degree[i];
        ++degree[j];
      }
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (degree[i] == 0) r.isolated_sites.push_back(i);
  return r;
}

struct FrameworkOptions {
  double site_tol = kSiteTol;
  double bond_cutoff = kDefaultBondCutoff;
  std::size_t max_group_order = 192;
};

/// One crystal topology. Constructed only through Framework::create, which
/// validates that every group element permutes sites, bonds and pores.
class Framework {
 public:
  static Framework create(std::string name, Lattice lattice, std::vector<FracCoord> sites,
                          std::vector<SymOp> symops, std::optional<std::vector<Bond>> bonds,
                          std::vector<Pore> pores, const FrameworkOptions& opts = {});

  const std::string& name() const { return name_; }
  const Lattice& lattice() const { return lattice_; }
  const SiteSet& sites() const { return sites_; }
  std::size_t n_sites() const { return sites_.size(); }
  const SpaceGroup& group() const { return group_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  bool bonds_explicit() const { return bonds_explicit_; }
  const std::vector<Pore>& pores() const { return pores_; }
  const std::vector<Permutation>& atom_perms() const { return atom_perms_; }
  const std::vector<Permutation>& pore_perms() const { return pore_perms_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const FrameworkOptions& options() const { return opts_; }

  /// Same topology with the pores removed (the no-pores ablation input).
  Framework without_pores() const {
    Framework f = *this;
    f.pores_.clear();
    for (auto& p : f.pore_perms_) p = Permutation::identity(0);
    return f;
  }

 private:
  Framework(Lattice lattice) : lattice_(std::move(lattice)) {}

  std::string name_;
  Lattice lattice_;
  SiteSet sites_;
  SpaceGroup group_;
  std::vector<Bond> bonds_;
  bool bonds_explicit_ = false;
  std::vector<Pore> pores_;
  std::vector<Permutation> atom_perms_;
  std::vector<Permutation> pore_perms_;
  std::vector<std::string> warnings_;
  FrameworkOptions opts_;
};

inline Framework Framework::create(std::string name, Lattice lattice, std::vector<FracCoord> sites,
                                   std::vector<SymOp> symops, std::optional<std::vector<Bond>> bonds,
                                   std::vector<Pore> pores, const FrameworkOptions& opts) {
  Framework f(std::move(lattice));
  f.name_ = std::move(name);
  f.opts_ = opts;
  f.sites_ = SiteSet(std::move(sites), opts.site_tol);
  const std::size_t n = f.sites_.size();
  if (n == 0) throw ValidationError("framework has no sites");
  f.group_ = close_group(symops, opts.max_group_order);
  if (!f.lattice_.is_orthogonal())
    f.warnings_.push_back("lattice is not orthogonal; component-wise minimum image is approximate");

  // Every operation must be an isometry of the lattice metric.
  const Mat3& B = f.lattice_.basis();
  Mat3 metric{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) metric[i][j] = B[i][0] * B[j][0] + B[i][1] * B[j][1] + B[i][2] * B[j][2];
  for (const SymOp& op : f.group_.ops()) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double v = 0.0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) v += op.rot[a][i] * metric[a][b] * op.rot[b][j];
        if (std::abs(v - metric[i][j]) > 1e-6 * (1.0 + std::abs(metric[i][j])))
          throw ValidationError("operation " + op.triplet() + " is not an isometry of the lattice");
      }
  }

  for (const SymOp& op : f.group_.ops()) {
    try {
      f.atom_perms_.push_back(induced_site_permutation(op, f.sites_, opts.site_tol));
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("sites are not closed under the group: ") + e.what());
    }
  }

  // Bonds.
  if (bonds) {
    f.bonds_explicit_ = true;
    for (Bond b : *bonds) {
      if (b.a == b.b) throw ValidationError("bond " + std::to_string(b.a) + "-" + std::to_string(b.b) + " is a self-loop");
      if (b.a >= n || b.b >= n) throw ValidationError("bond references a site index out of range");
      if (b.a > b.b) std::swap(b.a, b.b);
      f.bonds_.push_back(b);
    }
    std::sort(f.bonds_.begin(), f.bonds_.end());
    if (std::adjacent_find(f.bonds_.begin(), f.bonds_.end()) != f.bonds_.end())
      throw ValidationError("duplicate bond in bond list");
  } else {
    BondResult r = derive_bonds(f.lattice_, f.sites_, opts.bond_cutoff);
    f.bonds_ = std::move(r.bonds);
    for (std::size_t s : r.isolated_sites)
      f.warnings_.push_back("site " + std::to_string(s) + " has no neighbour within the bond cutoff");
  }
  for (std::size_t g = 0; g < f.atom_perms_.size(); ++g)
    for (const Bond& b : f.bonds_) {
      Bond img{f.atom_perms_[g][b.a], f.atom_perms_[g][b.b]};
      if (img.a > img.b) std::swap(img.a, img.b);
      if (!std::binary_search(f.bonds_.begin(), f.bonds_.end(), img))
        throw ValidationError("bond list is not closed under the group: operation " + f.group_[g].triplet() +
                              " maps bond " + std::to_string(b.a) + "-" + std::to_string(b.b) + " to missing bond " +
                              std::to_string(img.a) + "-" + std::to_string(img.b));
    }

  // Pores.
  std::vector<FracCoord> centers;
  for (std::size_t p = 0; p < pores.size(); ++p) {
    Pore& pore = pores[p];
    if (pore.boundary.empty()) throw ValidationError("pore " + std::to_string(p) + " has an empty boundary");
    if (!(pore.area > 0.0)) throw ValidationError("pore " + std::to_string(p) + " has non-positive area");
    for (std::size_t s : pore.boundary)
      if (s >= n) throw ValidationError("pore " + std::to_string(p) + " boundary references a site out of range");
    std::sort(pore.boundary.begin(), pore.boundary.end());
    if (std::adjacent_find(pore.boundary.begin(), pore.boundary.end()) != pore.boundary.end())
      throw ValidationError("pore " + std::to_string(p) + " lists a boundary site twice");
    centers.push_back(pore.center);
  }
  for (std::size_t i = 0; i < centers.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (frac_separation(centers[i], centers[j]) < opts.site_tol)
        throw ValidationError("pores " + std::to_string(j) + " and " + std::to_string(i) + " share a centre");
  for (std::size_t g = 0; g < f.group_.order(); ++g) {
    const SymOp& op = f.group_[g];
    Permutation pp;
    try {
      pp = induced_site_permutation(op, std::span<const FracCoord>(centers), opts.site_tol);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("pores are not closed under the group: ") + e.what());
    }
    for (std::size_t p = 0; p < pores.size(); ++p) {
      const Pore& src = pores[p];
      const Pore& dst = pores[pp[p]];
      std::vector<std::size_t> mapped;
      for (std::size_t s : src.boundary) mapped.push_back(f.atom_perms_[g][s]);
      std::sort(mapped.begin(), mapped.end());
      if (mapped != dst.boundary)
        throw ValidationError("operation " + op.triplet() + " maps the boundary of pore " + std::to_string(p) +
                              " onto a set that is not the boundary of pore " + std::to_string(pp[p]));
      if (std::abs(src.area - dst.area) > 1e-9 * std::max(1.0, src.area))
        throw ValidationError("operation " + op.triplet() + " maps pore " + std::to_string(p) + " onto pore " +
                              std::to_string(pp[p]) + " of different area");
    }
    f.pore_perms_.push_back(std::move(pp));
  }
  f.pores_ = std::move(pores);
  return f;
}

// ---------------------------------------------------------------------------
// Occupancy

enum class Species : unsigned char { Si = 0, Al = 1 };

class Occupancy {
 public:
  Occupancy() = default;
  explicit Occupancy(std::vector<Species> types) : types_(std::move(types)) {}

  static Occupancy all_silicon(std::size_t n) { return Occupancy(std::vector<Species>(n, Species::Si)); }

  /// "S"/"A" string, one character per site in framework order.
  static Occupancy parse(std::string_view s) {
    std::vector<Species> t;
    t.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == 'S') t.push_back(Species::Si);
      else if (s[i] == 'A') t.push_back(Species::Al);
      else throw ValidationError("occupancy character '" + std::string(1, s[i]) + "' at position " + std::to_string(i) + " is not S or A");
    }
    return Occupancy(std::move(t));
  }

  std::string str() const {
    std::string s(types_.size(), 'S');
    for (std::size_t i = 0; i < types_.size(); ++i)
      if (types_[i] == Species::Al) s[i] = 'A';
    return s;
  }

  std::size_t size() const { return types_.size(); }
  Species operator[](std::size_t i) const { return types_[i]; }
  const std::vector<Species>& types() const { return types_; }

  std::size_t al_count() const { return static_cast<std::size_t>(std::count(types_.begin(), types_.end(), Species::Al)); }

  /// g.x: the species at site i moves to site perm[i].
  Occupancy permuted(const Permutation& perm) const {
    if (perm.size() != types_.size()) throw ValidationError("permutation length does not match occupancy length");
    std::vector<Species> out(types_.size());
    for (std::size_t i = 0; i < types_.size(); ++i) out[perm[i]] = types_[i];
    return Occupancy(std::move(out));
  }

  friend bool operator==(const Occupancy&, const Occupancy&) = default;

 private:
  std::vector<Species> types_;
};

// ---------------------------------------------------------------------------
// RBF features

class RbfConfig {
 public:
  RbfConfig(std::vector<double> centers, double gamma) : centers_(std::move(centers)), gamma_(gamma) {
    if (centers_.empty()) throw ValidationError("RBF needs at least one centre");
    if (!(gamma_ > 0.0)) throw ValidationError("RBF width must be positive");
    for (std::size_t k = 1; k < centers_.size(); ++k)
      if (!(centers_[k] > centers_[k - 1])) throw ValidationError("RBF centres must be strictly increasing");
  }

  /// 16 centres evenly spaced on [0, 8] angstrom, gamma = 10 / angstrom^2.
  static RbfConfig defaults() { return evenly_spaced(16, 0.0, 8.0, 10.0); }

  static RbfConfig evenly_spaced(std::size_t k, double lo, double hi, double gamma) {
    std::vector<double> c(k);
    for (std::size_t i = 0; i < k; ++i) c[i] = k == 1 ? lo : lo + (hi - lo) * double(i) / double(k - 1);
    return RbfConfig(std::move(c), gamma);
  }

  std::size_t size() const { return centers_.size(); }
  const std::vector<double>& centers() const { return centers_; }
  double gamma() const { return gamma_; }

 private:
  std::vector<double> centers_;
  double gamma_;
};

/// exp(-gamma (d - mu_k)^2) for every centre.
inline std::vector<double> rbf_embed(double d, const RbfConfig& cfg) {
  if (!(d >= 0.0)) throw ValidationError("distance must be non-negative");
  std::vector<double> out(cfg.size());
  for (std::size_t k = 0; k < cfg.size(); ++k) {
    double r = d - cfg.centers()[k];
    out[k] = std::exp(-cfg.gamma() * r * r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graphs

/// Everything about a graph that does not depend on the occupancy. Shared by
/// all configurations of one framework.
struct GraphTopology {
  std::size_t n_atoms = 0;
  std::size_t n_pores = 0;
  bool with_pores = true;
  std::size_t rbf_size = 0;
  std::array<std::vector<Edge>, 3> edges;            // per EdgeKind, sorted
  std::array<std::vector<double>, 3> edge_features;  // per EdgeKind, E x rbf_size row-major
  std::array<std::vector<double>, 3> distances;      // per EdgeKind
  std::vector<double> pore_features;                 // n_pores x 2: (area, boundary count)

  const std::vector<Edge>& edges_of(EdgeKind k) const { return edges[static_cast<int>(k)]; }
  const std::vector<double>& features_of(EdgeKind k) const { return edge_features[static_cast<int>(k)]; }
};

struct CrystalGraph {
  std::shared_ptr<const GraphTopology> topology;
  std::vector<double> atom_features;  // n_atoms x 2 one-hot (Si, Al)

  std::size_t n_atoms() const { return topology->n_atoms; }
  std::size_t n_pores() const { return topology->n_pores; }
};

/// Edge lists of the framework: bonds in both directions, pore->boundary
/// atom and the reverse. With with_pores = false the pore lists are empty.
inline std::array<std::vector<Edge>, 3> framework_edges(const Framework& f, bool with_pores) {
  std::array<std::vector<Edge>, 3> e;
  auto& h = e[0];
  for (const Bond& b : f.bonds()) {
    h.push_back({b.a, b.b});
    h.push_back({b.b, b.a});
  }
  std::sort(h.begin(), h.end());
  if (with_pores) {
    for (std::size_t p = 0; p < f.pores().size(); ++p)
      for (std::size_t s : f.pores()[p].boundary) {
        e[1].push_back({p, s});
        e[2].push_back({s, p});
      }
    std::sort(e[1].begin(), e[1].end());
    std::sort(e[2].begin(), e[2].end());
  }
  return e;
}

inline std::shared_ptr<const GraphTopology> build_topology(const Framework& f, const RbfConfig& cfg, bool with_pores) {
  auto t = std::make_shared<GraphTopology>();
  t->n_atoms = f.n_sites();
  t->n_pores = with_pores ? f.pores().size() : 0;
  t->with_pores = with_pores;
  t->rbf_size = cfg.size();
  t->edges = framework_edges(f, with_pores);
  auto position = [&](EdgeKind kind, bool src, std::size_t idx) -> const FracCoord& {
    bool pore = (kind == EdgeKind::PoreAtom && src) || (kind == EdgeKind::AtomPore && !src);
    return pore ? f.pores()[idx].center : f.sites()[idx];
  };
  for (EdgeKind kind : kEdgeKinds) {
    int q = static_cast<int>(kind);
    for (const Edge& e : t->edges[q]) {
      double d = min_image_distance(f.lattice(), position(kind, true, e.src), position(kind, false, e.dst));
      t->distances[q].push_back(d);
      auto feat = rbf_embed(d, cfg);
      t->edge_features[q].insert(t->edge_features[q].end(), feat.begin(), feat.end());
    }
  }
  for (std::size_t p = 0; p < t->n_pores; ++p) {
    t->pore_features.push_back(f.pores()[p].area);
    t->pore_features.push_back(double(f.pores()[p].boundary.size()));
  }
  return t;
}

inline CrystalGraph build_graph(std::shared_ptr<const GraphTopology> topology, const Occupancy& occ) {
  if (occ.size() != topology->n_atoms)
    throw ValidationError("occupancy has " + std::to_string(occ.size()) + " sites, framework has " +
                          std::to_string(topology->n_atoms));
  CrystalGraph g;
  g.topology = std::move(topology);
  g.atom_features.assign(2 * occ.size(), 0.0);
  for (std::size_t i = 0; i < occ.size(); ++i) g.atom_features[2 * i + static_cast<int>(occ[i])] = 1.0;
  return g;
}

inline CrystalGraph build_graph(const Framework& f, const Occupancy& occ, const RbfConfig& cfg, bool with_pores) {
  if (occ.size() != f.n_sites())
    throw ValidationError("occupancy has " + std::to_string(occ.size()) + " sites, framework has " +
                          std::to_string(f.n_sites()));
  return build_graph(build_topology(f, cfg, with_pores), occ);
}

/// Orbit colouring of the framework's nodes and edges under its group.
inline SharingPattern sharing_pattern(const Framework& f, bool with_pores = true) {
  auto edges = framework_edges(f, with_pores);
  std::vector<Permutation> pore_perms;
  if (with_pores) pore_perms = f.pore_perms();
  else pore_perms.assign(f.atom_perms().size(), Permutation::identity(0));
  return make_sharing_pattern(f.atom_perms(), std::move(pore_perms), edges[0], edges[1], edges[2]);
}

}  // namespace porenet
