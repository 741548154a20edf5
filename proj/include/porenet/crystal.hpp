#pragma once

// Lattice and space-group geometry for a single unit cell: fractional
// coordinates, symmetry operations with exact rational translations,
// group closure modulo lattice translations, minimum-image distances,
// orbits and the permutations a symmetry operation induces on a site set.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "porenet/error.hpp"

namespace porenet {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

// Wrapping and operation deduplication tolerance (fractional units).
inline constexpr double kSnapTol = 1e-9;
// Matching transformed sites onto listed sites (fractional units). Published
// coordinates are rounded, so this is much looser than kSnapTol.
inline constexpr double kSiteTol = 1e-3;

namespace detail {

inline double wrap_component(double v) {
  double r = v - std::floor(v);
  if (r >= 1.0 - kSnapTol || r < kSnapTol) r = 0.0;
  return r;
}

// Shift a fractional difference into [-0.5, 0.5).
inline double min_image_component(double d) { return d - std::floor(d + 0.5); }

inline double det3(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

}  // namespace detail

/// Point inside the unit cell, every component in [0, 1).
class FracCoord {
 public:
  FracCoord() = default;

  /// Wraps each component by subtracting its floor. Values within kSnapTol of
  /// a cell boundary snap to 0. Throws ValidationError on non-finite input.
  static FracCoord wrap(const Vec3& v) {
    FracCoord out;
    for (int k = 0; k < 3; ++k) {
      if (!std::isfinite(v[k])) throw ValidationError("non-finite fractional coordinate");
      out.x_[k] = detail::wrap_component(v[k]);
    }
    return out;
  }

  double operator[](int k) const { return x_[k]; }
  const Vec3& values() const { return x_; }

  friend bool operator==(const FracCoord&, const FracCoord&) = default;

 private:
  Vec3 x_{0.0, 0.0, 0.0};
};

inline FracCoord wrap_fractional(const Vec3& v) { return FracCoord::wrap(v); }

/// Largest component of the minimum-image fractional difference.
inline double frac_separation(const FracCoord& a, const FracCoord& b) {
  double m = 0.0;
  for (int k = 0; k < 3; ++k) m = std::max(m, std::abs(detail::min_image_component(a[k] - b[k])));
  return m;
}

/// Three basis vectors in angstrom, stored as rows.
class Lattice {
 public:
  explicit Lattice(const Mat3& basis) : basis_(basis) {
    for (const auto& row : basis_)
      for (double v : row)
        if (!std::isfinite(v)) throw ValidationError("lattice basis is not finite");
    if (std::abs(detail::det3(basis_)) <= 1e-9) throw ValidationError("lattice basis is singular");
  }

  static Lattice orthorhombic(double a, double b, double c) {
    return Lattice(Mat3{Vec3{a, 0, 0}, Vec3{0, b, 0}, Vec3{0, 0, c}});
  }

  const Mat3& basis() const { return basis_; }
  double volume() const { return std::abs(detail::det3(basis_)); }

  /// True when the basis vectors are mutually perpendicular. Component-wise
  /// minimum image is exact only in that case.
  bool is_orthogonal(double tol = 1e-9) const {
    auto dot = [&](int i, int j) {
      return basis_[i][0] * basis_[j][0] + basis_[i][1] * basis_[j][1] + basis_[i][2] * basis_[j][2];
    };
    return std::abs(dot(0, 1)) < tol && std::abs(dot(0, 2)) < tol && std::abs(dot(1, 2)) < tol;
  }

  Vec3 to_cartesian(const Vec3& frac) const {
    Vec3 r{0, 0, 0};
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) r[k] += frac[i] * basis_[i][k];
    return r;
  }

 private:
  Mat3 basis_;
};

/// Minimum-image distance in angstrom. Each fractional difference component
/// is shifted into [-0.5, 0.5) before conversion, which is exact for
/// orthogonal cells and approximate for strongly skewed ones.
inline double min_image_distance(const Lattice& lattice, const FracCoord& xi, const FracCoord& xj) {
  Vec3 d;
  for (int k = 0; k < 3; ++k) d[k] = detail::min_image_component(xi[k] - xj[k]);
  Vec3 r = lattice.to_cartesian(d);
  return std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
}

// ---------------------------------------------------------------------------
// Symmetry operations

/// (W, t) with integer W and t stored in units of 1/kDen. All group
/// arithmetic is exact; floating point only appears in apply().
struct SymOp {
  static constexpr int kDen = 24;
  using Rot = std::array<std::array<int, 3>, 3>;
  using Tran = std::array<int, 3>;

  Rot rot{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Tran tran{0, 0, 0};

  static SymOp identity() { return {}; }

  SymOp() = default;
  SymOp(const Rot& w, const Tran& t24) : rot(w), tran(t24) { wrap(); }

  int det() const {
    const auto& m = rot;
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }

  SymOp& wrap() {
    for (int& v : tran) v = ((v % kDen) + kDen) % kDen;
    return *this;
  }

  bool is_identity() const { return *this == SymOp::identity(); }

  Vec3 translation() const {
    return {double(tran[0]) / kDen, double(tran[1]) / kDen, double(tran[2]) / kDen};
  }

  /// Inverse modulo lattice translations. Requires det(W) = +-1.
  SymOp inverse() const {
    int d = det();
    if (d != 1 && d != -1) throw ValidationError("symmetry operation with det(W) != +-1 has no integer inverse");
    const auto& m = rot;
    Rot inv{};
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * d;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * d;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * d;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * d;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * d;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * d;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * d;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * d;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * d;
    Tran t{};
    for (int i = 0; i < 3; ++i)
      t[i] = -(inv[i][0] * tran[0] + inv[i][1] * tran[1] + inv[i][2] * tran[2]);
    return SymOp(inv, t);
  }

  /// "x,-y,z+1/2" style triplet.
  std::string triplet() const;
  static SymOp parse_triplet(std::string_view s);

  friend bool operator==(const SymOp&, const SymOp&) = default;
  friend auto operator<=>(const SymOp&, const SymOp&) = default;
};

/// (W1 W2, W1 t2 + t1) wrapped: apply(compose(a, b), x) == apply(a, apply(b, x)).
inline SymOp compose(const SymOp& a, const SymOp& b) {
  SymOp::Rot w{};
  SymOp::Tran t{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j)
      w[i][j] = a.rot[i][0] * b.rot[0][j] + a.rot[i][1] * b.rot[1][j] + a.rot[i][2] * b.rot[2][j];
    t[i] = a.rot[i][0] * b.tran[0] + a.rot[i][1] * b.tran[1] + a.rot[i][2] * b.tran[2] + a.tran[i];
  }
  return SymOp(w, t);
}

inline FracCoord apply_symmetry(const SymOp& op, const FracCoord& x) {
  Vec3 y;
  for (int i = 0; i < 3; ++i)
    y[i] = op.rot[i][0] * x[0] + op.rot[i][1] * x[1] + op.rot[i][2] * x[2] +
           double(op.tran[i]) / SymOp::kDen;
  return FracCoord::wrap(y);
}

/// Parses an integer, "p/q" or a decimal into units of 1/SymOp::kDen. The
/// value must be an exact multiple of 1/kDen.
inline int parse_rational24(std::string_view s) {
  auto bad = [&] { return ValidationError("not a rational with denominator dividing 24: '" + std::string(s) + "'"); };
  std::string str(s);
  if (str.empty()) throw bad();
  auto slash = str.find('/');
  if (slash != std::string::npos) {
    char* end = nullptr;
    long p = std::strtol(str.c_str(), &end, 10);
    if (end != str.c_str() + slash) throw bad();
    const char* qs = str.c_str() + slash + 1;
    long q = std::strtol(qs, &end, 10);
    if (*end != '\0' || end == qs || q <= 0 || SymOp::kDen % q != 0) throw bad();
    return static_cast<int>(p * (SymOp::kDen / q));
  }
  char* end = nullptr;
  double v = std::strtod(str.c_str(), &end);
  if (*end != '\0' || end == str.c_str() || !std::isfinite(v)) throw bad();
  double scaled = v * SymOp::kDen;
  double r = std::round(scaled);
  if (std::abs(scaled - r) > 1e-6) throw bad();
  return static_cast<int>(r);
}

inline std::string format_rational24(int v) {
  if (v == 0) return "0";
  int g = std::gcd(std::abs(v), SymOp::kDen);
  int p = v / g, q = SymOp::kDen / g;
  return q == 1 ? std::to_string(p) : std::to_string(p) + "/" + std::to_string(q);
}

inline std::string SymOp::triplet() const {
  std::string out;
  static constexpr char axes[3] = {'x', 'y', 'z'};
  for (int i = 0; i < 3; ++i) {
    std::string row;
    for (int j = 0; j < 3; ++j) {
      int w = rot[i][j];
      if (w == 0) continue;
      if (w < 0) row += '-';
      else if (!row.empty()) row += '+';
      if (std::abs(w) != 1) row += std::to_string(std::abs(w)) + "*";
      row += axes[j];
    }
    if (tran[i] != 0) {
      if (!row.empty() && tran[i] > 0) row += '+';
      row += format_rational24(tran[i]);
    }
    if (row.empty()) row = "0";
    if (i) out += ',';
    out += row;
  }
  return out;
}

inline SymOp SymOp::parse_triplet(std::string_view s) {
  Rot w{};
  Tran t{};
  int row = 0;
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) {
    return ValidationError("bad symmetry triplet '" + std::string(s) + "': " + why);
  };
  while (row < 3) {
    std::size_t end = s.find(',', pos);
    std::string_view part = s.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    // Split into signed terms.
    std::size_t i = 0;
    while (i < part.size()) {
      while (i < part.size() && part[i] == ' ') ++i;
      if (i >= part.size()) break;
      int sign = 1;
      if (part[i] == '+' || part[i] == '-') {
        sign = part[i] == '-' ? -1 : 1;
        ++i;
      }
      std::size_t j = i;
      while (j < part.size() && part[j] != '+' && part[j] != '-') ++j;
      std::string term(part.substr(i, j - i));
      term.erase(std::remove(term.begin(), term.end(), ' '), term.end());
      if (term.empty()) throw bad("empty term");
      char last = static_cast<char>(std::tolower(term.back()));
      if (last == 'x' || last == 'y' || last == 'z') {
        int coef = 1;
        if (term.size() > 1) {
          std::string c = term.substr(0, term.size() - 1);
          if (!c.empty() && c.back() == '*') c.pop_back();
          coef = std::atoi(c.c_str());
        }
        w[row][last - 'x'] += sign * coef;
      } else {
        t[row] += sign * parse_rational24(term);
      }
      i = j;
    }
    ++row;
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  if (row != 3) throw bad("expected three comma-separated components");
  return SymOp(w, t);
}

// ---------------------------------------------------------------------------
// Groups

/// Ordered, closed set of operations; ops()[0] is the identity.
class SpaceGroup {
 public:
  /// Trivial group.
  SpaceGroup() : ops_{SymOp::identity()} {}

  const std::vector<SymOp>& ops() const { return ops_; }
  std::size_t order() const { return ops_.size(); }
  const SymOp& operator[](std::size_t i) const { return ops_[i]; }

  /// Index of an operation (exact match modulo lattice translations).
  std::optional<std::size_t> find(const SymOp& op) const {
    for (std::size_t i = 0; i < ops_.size(); ++i)
      if (ops_[i] == op) return i;
    return std::nullopt;
  }

 private:
  friend SpaceGroup close_group(std::span<const SymOp>, std::size_t);
  std::vector<SymOp> ops_;
};

/// Smallest set containing the generators and the identity that is closed
/// under composition. Operations that differ by a lattice translation are the
/// same element. Order is deterministic: identity, then generators in input
/// order, then products in breadth-first discovery order.
inline SpaceGroup close_group(std::span<const SymOp> generators, std::size_t max_order = 192) {
  SpaceGroup g;
  auto& ops = g.ops_;
  auto add = [&](const SymOp& op) {
    if (std::find(ops.begin(), ops.end(), op) != ops.end()) return;
    ops.push_back(op);
    if (ops.size() > max_order)
      throw ValidationError("group closure exceeds " + std::to_string(max_order) +
                            " elements; generators are inconsistent");
  };
  for (const auto& op : generators) {
    int d = op.det();
    if (d != 1 && d != -1) throw ValidationError("generator " + op.triplet() + " has det(W) = " + std::to_string(d));
    add(op);
  }
  for (std::size_t i = 0; i < ops.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      // ops grows inside the loop; copy before composing.
      SymOp a = ops[i], b = ops[j];
      add(compose(a, b));
      add(compose(b, a));
    }
  return g;
}

inline SpaceGroup close_group(std::initializer_list<SymOp> generators, std::size_t max_order = 192) {
  return close_group(std::span<const SymOp>(generators.begin(), generators.size()), max_order);
}

/// Deduplicated images of x under every element; first entry is x itself.
inline std::vector<FracCoord> orbit_of_point(const SpaceGroup& group, const FracCoord& x, double site_tol = kSiteTol) {
  std::vector<FracCoord> out;
  for (const auto& op : group.ops()) {
    FracCoord y = apply_symmetry(op, x);
    bool seen = std::any_of(out.begin(), out.end(), [&](const FracCoord& z) { return frac_separation(y, z) < site_tol; });
    if (!seen) out.push_back(y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Permutations

/// Bijection on {0..n-1}; image of i is (*this)[i].
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> mapping) : map_(std::move(mapping)) {
    std::vector<char> seen(map_.size(), 0);
    for (std::size_t v : map_) {
      if (v >= map_.size() || seen[v]) throw ValidationError("mapping is not a permutation");
      seen[v] = 1;
    }
  }

  static Permutation identity(std::size_t n) {
    Permutation p;
    p.map_.resize(n);
    std::iota(p.map_.begin(), p.map_.end(), std::size_t{0});
    return p;
  }

  std::size_t size() const { return map_.size(); }
  std::size_t operator[](std::size_t i) const { return map_[i]; }
  const std::vector<std::size_t>& mapping() const { return map_; }

  bool is_identity() const {
    for (std::size_t i = 0; i < map_.size(); ++i)
      if (map_[i] != i) return false;
    return true;
  }

  Permutation inverse() const {
    Permutation p;
    p.map_.resize(map_.size());
    for (std::size_t i = 0; i < map_.size(); ++i) p.map_[map_[i]] = i;
    return p;
  }

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> map_;
};

/// (a after b): i -> a[b[i]].
inline Permutation compose(const Permutation& a, const Permutation& b) {
  if (a.size() != b.size()) throw ValidationError("composing permutations of different length");
  std::vector<std::size_t> m(a.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = a[b[i]];
  return Permutation(std::move(m));
}

/// Sites of one unit cell; no two within site_tol of each other.
class SiteSet {
 public:
  SiteSet() = default;
  explicit SiteSet(std::vector<FracCoord> positions, double site_tol = kSiteTol)
      : positions_(std::move(positions)) {
    for (std::size_t i = 0; i < positions_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (frac_separation(positions_[i], positions_[j]) < site_tol)
          throw ValidationError("sites " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
  }

  std::size_t size() const { return positions_.size(); }
  const FracCoord& operator[](std::size_t i) const { return positions_[i]; }
  const std::vector<FracCoord>& positions() const { return positions_; }

 private:
  std::vector<FracCoord> positions_;
};

/// mapping[i] = index of the unique position within site_tol of op(x_i).
/// Throws ValidationError when a site has no image or an ambiguous one.
inline Permutation induced_site_permutation(const SymOp& op, std::span<const FracCoord> positions,
                                            double site_tol = kSiteTol) {
  std::vector<std::size_t> m(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    FracCoord y = apply_symmetry(op, positions[i]);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < positions.size(); ++j)
      if (frac_separation(y, positions[j]) < site_tol) {
        m[i] = j;
        ++hits;
      }
    if (hits != 1)
      throw ValidationError("operation " + op.triplet() + " maps position " + std::to_string(i) +
                            (hits == 0 ? " onto no listed position" : " onto several listed positions"));
  }
  return Permutation(std::move(m));
}

inline Permutation induced_site_permutation(const SymOp& op, const SiteSet& sites, double site_tol = kSiteTol) {
  return induced_site_permutation(op, std::span<const FracCoord>(sites.positions()), site_tol);
}

}  // namespace porenet
