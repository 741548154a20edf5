#pragma once

// Framework files, labelled-configuration CSVs, seeded splits and the
// synthetic G-invariant label oracle.
//
// Framework file grammar (one statement per line, '#' starts a comment):
//
//   porenet-framework 1
//   name <text>
//   lattice                      followed by three rows "ax ay az" (angstrom)
//   symop <x,y,z triplet>        or 3x4 rational rows "w w w t; w w w t; w w w t"
//   site <x> <y> <z>             fractional; order fixes site indices
//   bond <i> <j>                 optional; bonds are derived by cutoff if absent
//   pore <x> <y> <z> area <A> : <i> <j> ...
//   cutoff <angstrom>            optional bond cutoff (default 3.5)

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "porenet/coloring.hpp"
#include "porenet/graph.hpp"
#include "porenet/rng.hpp"

namespace porenet {

inline constexpr const char* kFrameworkHeader = "porenet-framework 1";

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string_view> split_char(std::string_view s, char c) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  for (;;) {
    std::size_t j = s.find(c, i);
    out.push_back(s.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i));
    if (j == std::string_view::npos) break;
    i = j + 1;
  }
  return out;
}

inline std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::size_t> to_index(std::string_view s) {
  std::size_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline SymOp parse_symop_rows(std::string_view s) {
  auto rows = split_char(s, ';');
  if (rows.size() != 3) throw ValidationError("expected 3 rows separated by ';'");
  SymOp::Rot w{};
  SymOp::Tran t{};
  for (int i = 0; i < 3; ++i) {
    auto tok = split_ws(rows[i]);
    if (tok.size() != 4) throw ValidationError("each row needs 4 entries");
    for (int j = 0; j < 3; ++j) {
      int v = parse_rational24(tok[j]);
      if (v % SymOp::kDen != 0) throw ValidationError("rotation entries must be integers");
      w[i][j] = v / SymOp::kDen;
    }
    t[i] = parse_rational24(tok[3]);
  }
  return SymOp(w, t);
}

}  // namespace detail

/// Parses framework text. `where` names the source in error messages.
inline Framework parse_framework(std::string_view text, const std::string& where, FrameworkOptions opts = {}) {
  std::string name;
  std::optional<Mat3> lattice;
  std::vector<SymOp> ops;
  std::vector<FracCoord> sites;
  std::vector<Bond> bonds;
  bool have_bonds = false;
  std::vector<Pore> pores;
  bool header = false;

  auto lines = detail::split_char(text, '\n');
  int lattice_rows = -1;
  Mat3 rows{};
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const int lineno = static_cast<int>(ln + 1);
    std::string_view line = lines[ln];
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) { return ParseError(where, lineno, msg); };
    if (!header) {
      if (line != kFrameworkHeader) throw fail(std::string("expected header '") + kFrameworkHeader + "'");
      header = true;
      continue;
    }
    auto tok = detail::split_ws(line);
    if (lattice_rows >= 0) {
      if (tok.size() != 3) throw fail("lattice row needs 3 numbers");
      for (int k = 0; k < 3; ++k) {
        auto v = detail::to_double(tok[k]);
        if (!v || !std::isfinite(*v)) throw fail("bad lattice value '" + std::string(tok[k]) + "'");
        rows[lattice_rows][k] = *v;
      }
      if (++lattice_rows == 3) {
        lattice = rows;
        lattice_rows = -1;
      }
      continue;
    }
    const std::string_view kw = tok[0];
    const std::string_view rest = detail::trim(line.substr(kw.size()));
    try {
      if (kw == "name") {
        if (rest.empty()) throw fail("empty name");
        name = std::string(rest);
      } else if (kw == "lattice") {
        if (lattice) throw fail("lattice given twice");
        lattice_rows = 0;
      } else if (kw == "symop") {
        ops.push_back(rest.find(';') != std::string_view::npos ? detail::parse_symop_rows(rest) : SymOp::parse_triplet(rest));
      } else if (kw == "site") {
        if (tok.size() != 4) throw fail("site needs 3 coordinates");
        Vec3 x{};
        for (int k = 0; k < 3; ++k) {
          auto v = detail::to_double(tok[k + 1]);
          if (!v) throw fail("bad coordinate '" + std::string(tok[k + 1]) + "'");
          x[k] = *v;
        }
        sites.push_back(FracCoord::wrap(x));
      } else if (kw == "bond") {
        if (tok.size() != 3) throw fail("bond needs two site indices");
        auto a = detail::to_index(tok[1]), b = detail::to_index(tok[2]);
        if (!a || !b) throw fail("bad bond index");
        bonds.push_back(Bond{std::min(*a, *b), std::max(*a, *b)});
        if (*a == *b) throw fail("bond joins site " + std::to_string(*a) + " to itself");
        have_bonds = true;
      } else if (kw == "pore") {
        // pore x y z area A : i j ...
        auto colon = rest.find(':');
        if (colon == std::string_view::npos) throw fail("pore needs ': <boundary indices>'");
        auto head = detail::split_ws(rest.substr(0, colon));
        if (head.size() != 5 || head[3] != "area") throw fail("pore needs 'x y z area A'");
        Pore p;
        Vec3 c{};
        for (int k = 0; k < 3; ++k) {
          auto v = detail::to_double(head[k]);
          if (!v) throw fail("bad pore coordinate");
          c[k] = *v;
        }
        p.center = FracCoord::wrap(c);
        auto area = detail::to_double(head[4]);
        if (!area) throw fail("bad pore area");
        p.area = *area;
        for (auto t : detail::split_ws(rest.substr(colon + 1))) {
          auto idx = detail::to_index(t);
          if (!idx) throw fail("bad boundary index '" + std::string(t) + "'");
          p.boundary.push_back(*idx);
        }
        pores.push_back(std::move(p));
      } else if (kw == "cutoff") {
        auto v = tok.size() == 2 ? detail::to_double(tok[1]) : std::nullopt;
        if (!v || !(*v > 0.0)) throw fail("cutoff needs one positive number");
        opts.bond_cutoff = *v;
      } else {
        throw fail("unknown statement '" + std::string(kw) + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw fail(e.what());
    }
  }
  if (!header) throw ParseError(where, 1, "empty framework file");
  if (lattice_rows >= 0) throw ParseError(where, static_cast<int>(lines.size()), "lattice block ends early");
  if (!lattice) throw ParseError(where, static_cast<int>(lines.size()), "missing lattice");
  if (ops.empty()) ops.push_back(SymOp::parse_triplet("x,y,z"));
  if (name.empty()) name = "unnamed";
  try {
    return Framework::create(name, Lattice(*lattice), std::move(sites), std::move(ops),
                             have_bonds ? std::optional<std::vector<Bond>>(std::move(bonds)) : std::nullopt,
                             std::move(pores), opts);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

inline Framework load_framework(const std::string& path, const FrameworkOptions& opts = {}) {
  return parse_framework(detail::read_file(path), path, opts);
}

/// Canonical text of a framework; parse_framework(write_framework(f)) == f.
/// Lists the full group, every site, bonds when they were given explicitly,
/// and every pore.
inline std::string write_framework(const Framework& f) {
  std::string s = std::string(kFrameworkHeader) + "\nname " + f.name() + "\nlattice\n";
  for (const auto& row : f.lattice().basis())
    s += detail::fmt_double(row[0]) + " " + detail::fmt_double(row[1]) + " " + detail::fmt_double(row[2]) + "\n";
  if (f.options().bond_cutoff != kDefaultBondCutoff) s += "cutoff " + detail::fmt_double(f.options().bond_cutoff) + "\n";
  for (const SymOp& op : f.group().ops()) s += "symop " + op.triplet() + "\n";
  for (std::size_t i = 0; i < f.n_sites(); ++i) {
    const FracCoord& x = f.sites()[i];
    s += "site " + detail::fmt_double(x[0]) + " " + detail::fmt_double(x[1]) + " " + detail::fmt_double(x[2]) + "\n";
  }
  if (f.bonds_explicit())
    for (const Bond& b : f.bonds()) s += "bond " + std::to_string(b.a) + " " + std::to_string(b.b) + "\n";
  for (const Pore& p : f.pores()) {
    s += "pore " + detail::fmt_double(p.center[0]) + " " + detail::fmt_double(p.center[1]) + " " +
         detail::fmt_double(p.center[2]) + " area " + detail::fmt_double(p.area) + " :";
    for (std::size_t i : p.boundary) s += " " + std::to_string(i);
    s += "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Labelled configurations

struct LabeledConfig {
  std::string id;
  Occupancy occupancy;
  double hoa = 0.0;  // kJ/mol

  friend bool operator==(const LabeledConfig&, const LabeledConfig&) = default;
};

/// CSV with header "id,occupancy,hoa". Rows are checked against `n_sites`;
/// errors name the file and row line.
inline std::vector<LabeledConfig> parse_configurations(std::string_view text, const std::string& where, std::size_t n_sites) {
  std::vector<LabeledConfig> out;
  std::unordered_set<std::string> ids;
  auto lines = detail::split_char(text, '\n');
  bool header = false;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const int lineno = static_cast<int>(ln + 1);
    std::string_view line = detail::trim(lines[ln]);
    if (line.empty()) continue;
    if (!header) {
      if (line != "id,occupancy,hoa") throw ParseError(where, lineno, "expected header 'id,occupancy,hoa'");
      header = true;
      continue;
    }
    auto f = detail::split_char(line, ',');
    if (f.size() != 3) throw ParseError(where, lineno, "expected 3 fields, got " + std::to_string(f.size()));
    LabeledConfig c;
    c.id = std::string(detail::trim(f[0]));
    if (c.id.empty()) throw ParseError(where, lineno, "empty id");
    if (!ids.insert(c.id).second) throw ParseError(where, lineno, "duplicate id '" + c.id + "'");
    std::string_view occ = detail::trim(f[1]);
    if (occ.size() != n_sites)
      throw ParseError(where, lineno, "occupancy has " + std::to_string(occ.size()) + " sites, framework has " + std::to_string(n_sites));
    try {
      c.occupancy = Occupancy::parse(occ);
    } catch (const ValidationError& e) {
      throw ParseError(where, lineno, e.what());
    }
    auto v = detail::to_double(detail::trim(f[2]));
    if (!v || !std::isfinite(*v)) throw ParseError(where, lineno, "label is not a finite number");
    c.hoa = *v;
    out.push_back(std::move(c));
  }
  if (!header) throw ParseError(where, 1, "missing header 'id,occupancy,hoa'");
  return out;
}

inline std::vector<LabeledConfig> load_configurations(const std::string& path, const Framework& f) {
  return parse_configurations(detail::read_file(path), path, f.n_sites());
}

inline std::string format_configurations(const std::vector<LabeledConfig>& cs) {
  std::string s = "id,occupancy,hoa\n";
  for (const auto& c : cs) s += c.id + "," + c.occupancy.str() + "," + detail::fmt_double(c.hoa) + "\n";
  return s;
}

inline void write_configurations(const std::string& path, const std::vector<LabeledConfig>& cs) {
  detail::write_file(path, format_configurations(cs));
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train;  // indices into the configuration list
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Shuffles indices with Rng(seed) (mt19937_64 + back-to-front Fisher-Yates)
/// and puts the first floor(train_frac * n) into train.
inline Split split(std::size_t n, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ValidationError("train fraction must lie in (0, 1)");
  std::vector<std::size_t> idx = iota_indices(n);
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
  Split s;
  s.seed = seed;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

inline std::string format_split_manifest(const std::vector<LabeledConfig>& cs, const Split& s) {
  std::vector<const char*> part(cs.size(), nullptr);
  for (std::size_t i : s.train) part[i] = "train";
  for (std::size_t i : s.test) part[i] = "test";
  std::string out = "id,partition\n";
  for (std::size_t i = 0; i < cs.size(); ++i)
    if (part[i]) out += cs[i].id + "," + part[i] + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic oracle

/// label = c0 + sum_c w[c] * (#Al of atom colour c)
///            + sum_c v[c] * (#directed h-edges of colour c with both ends Al)
///            + sum_c u[c] * sum_{pores p of colour c} (#Al on p's boundary)^2
///            + N(0, noise^2)
/// Terms are accumulated from integer per-colour counts, so with noise = 0
/// the label of g.x equals that of x bit for bit.
struct SynthOracle {
  double c0 = -25.0;
  std::vector<double> w;  // per atom colour
  std::vector<double> v;  // per h-edge colour
  std::vector<double> u;  // per pore colour; empty disables the pore term
  double noise = 0.0;

  /// Draws w ~ U(-3, 3), v ~ U(-1.5, 1.5) and, with `pore_term`,
  /// u ~ U(-0.3, 0.3), all in kJ/mol, from Rng(seed).
  static SynthOracle random(const SharingPattern& p, std::uint64_t seed, bool pore_term = false, double noise = 0.0) {
    SynthOracle o;
    Rng rng(seed);
    o.noise = noise;
    o.w.resize(p.num_atom_colors());
    for (double& x : o.w) x = rng.uniform(-3.0, 3.0);
    o.v.resize(p.edges[EdgeKind::AtomAtom].num_colors);
    for (double& x : o.v) x = rng.uniform(-1.5, 1.5);
    if (pore_term) {
      if (p.n_pores == 0) throw ValidationError("pore term needs a framework with pores");
      o.u.resize(p.num_pore_colors());
      for (double& x : o.u) x = rng.uniform(-0.3, 0.3);
    }
    return o;
  }

  double clean_label(const SharingPattern& p, const Occupancy& x) const {
    if (x.size() != p.n_atoms) throw ValidationError("occupancy size does not match the pattern");
    if (w.size() != p.num_atom_colors() || v.size() != p.edges[EdgeKind::AtomAtom].num_colors)
      throw ValidationError("oracle weights do not match the pattern");
    std::vector<long> nw(w.size(), 0), nv(v.size(), 0), nu(u.size(), 0);
    for (std::size_t i = 0; i < p.n_atoms; ++i)
      if (x[i] == Species::Al) ++nw[p.atom_color(i)];
    const KindColoring& h = p.edges[EdgeKind::AtomAtom];
    for (std::size_t e = 0; e < h.edges.size(); ++e)
      if (x[h.edges[e].src] == Species::Al && x[h.edges[e].dst] == Species::Al) ++nv[h.colors[e]];
    if (!u.empty()) {
      const std::size_t ca = p.num_atom_colors();
      std::vector<long> al_on(p.n_pores, 0);
      const KindColoring& k = p.edges[EdgeKind::PoreAtom];
      for (const Edge& e : k.edges)
        if (x[e.dst] == Species::Al) ++al_on[e.src];
      for (std::size_t q = 0; q < p.n_pores; ++q) nu[p.pore_color(q) - ca] += al_on[q] * al_on[q];
    }
    double y = c0;
    for (std::size_t c = 0; c < w.size(); ++c) y += w[c] * static_cast<double>(nw[c]);
    for (std::size_t c = 0; c < v.size(); ++c) y += v[c] * static_cast<double>(nv[c]);
    for (std::size_t c = 0; c < u.size(); ++c) y += u[c] * static_cast<double>(nu[c]);
    return y;
  }
};

/// Samples `n` distinct occupancies: Al count uniform in [0, max_al], then
/// Al positions uniform without replacement (partial Fisher-Yates). A draw
/// that repeats an earlier occupancy is rejected and redrawn. Noise comes
/// from a separate stream so clean labels do not depend on it.
inline std::vector<LabeledConfig> synth_generate(const SharingPattern& p, const SynthOracle& oracle, std::size_t n,
                                                 std::size_t max_al, std::uint64_t seed) {
  if (max_al > p.n_atoms) throw ValidationError("max_al exceeds the number of sites");
  Rng rng(seed);
  Rng noise_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::set<std::string> seen;
  std::vector<LabeledConfig> out;
  out.reserve(n);
  std::size_t attempts = 0;
  const int width = std::max<int>(5, static_cast<int>(std::to_string(n).size()));
  while (out.size() < n) {
    if (++attempts > 100 * n + 1000) throw ValidationError("cannot draw " + std::to_string(n) + " distinct occupancies");
    const std::size_t k = rng.below(max_al + 1);
    std::vector<std::size_t> idx = iota_indices(p.n_atoms);
    std::vector<Species> t(p.n_atoms, Species::Si);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + rng.below(p.n_atoms - i);
      std::swap(idx[i], idx[j]);
      t[idx[i]] = Species::Al;
    }
    Occupancy occ(std::move(t));
    if (!seen.insert(occ.str()).second) continue;
    LabeledConfig c;
    std::string num = std::to_string(out.size());
    c.id = "s" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(width, num.size()), '0') + num;
    c.hoa = oracle.clean_label(p, occ);
    if (oracle.noise > 0.0) c.hoa += oracle.noise * noise_rng.normal();
    c.occupancy = std::move(occ);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace porenet
