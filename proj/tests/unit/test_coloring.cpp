#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "support.hpp"

using namespace porenet;
using namespace testing_support;

TEST(NodeColoring, TrivialGroup) {
  std::vector<Permutation> id{Permutation::identity(4)};
  NodeColoring c = node_coloring(id, 4);
  EXPECT_EQ(c.colors, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(c.num_colors, 4u);
}

TEST(NodeColoring, CyclicShiftIsTransitive) {
  std::vector<Permutation> p{Permutation::identity(4), Permutation({1, 2, 3, 0})};
  NodeColoring c = node_coloring(p, 4);
  EXPECT_EQ(c.colors, (std::vector<std::size_t>{0, 0, 0, 0}));
  EXPECT_EQ(c.num_colors, 1u);
}

TEST(NodeColoring, WrongLengthRejected) {
  std::vector<Permutation> p{Permutation::identity(3)};
  EXPECT_THROW(node_coloring(p, 4), ValidationError);
}

TEST(EdgeColoring, TrivialGroupEdgesDistinct) {
  std::vector<Permutation> id{Permutation::identity(5)};
  std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}};
  KindColoring k = edge_coloring(id, id, e);
  EXPECT_EQ(k.num_colors, 5u);
}

TEST(EdgeColoring, RingUnderRotationHasTwoDirections) {
  std::vector<Permutation> rot;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<std::size_t> m(4);
    for (std::size_t i = 0; i < 4; ++i) m[i] = (i + s) % 4;
    rot.emplace_back(m);
  }
  std::vector<Edge> e;
  for (std::size_t i = 0; i < 4; ++i) {
    e.push_back({i, (i + 1) % 4});
    e.push_back({(i + 1) % 4, i});
  }
  KindColoring k = edge_coloring(rot, rot, e);
  EXPECT_EQ(k.num_colors, 2u);
  for (std::size_t i = 0; i < k.edges.size(); ++i) {
    bool clockwise = k.edges[i].dst == (k.edges[i].src + 1) % 4;
    bool first_clockwise = k.edges[0].dst == (k.edges[0].src + 1) % 4;
    EXPECT_EQ(k.colors[i] == k.colors[0], clockwise == first_clockwise);
  }
}

TEST(EdgeColoring, DuplicateEdgeRejected) {
  std::vector<Permutation> id{Permutation::identity(3)};
  std::vector<Edge> e{{0, 1}, {0, 1}};
  EXPECT_THROW(edge_coloring(id, id, e), ValidationError);
}

class ShippedFrameworkColoring : public ::testing::TestWithParam<const char*> {
 protected:
  const Framework& fw() const { return std::string(GetParam()) == "MOR" ? mor() : mfi(); }
};

TEST_P(ShippedFrameworkColoring, NodeColorsMatchBruteForce) {
  const Framework& f = fw();
  auto table = site_action_table(f);
  for (const auto& row : table)
    for (std::size_t v : row) ASSERT_NE(v, SIZE_MAX);
  EXPECT_EQ(tables_of(f.atom_perms()), table);
  SharingPattern p = sharing_pattern(f);
  std::vector<std::size_t> lib(p.nodes.colors.begin(), p.nodes.colors.begin() + p.n_atoms);
  auto oracle = orbit_labels(f.n_sites(), table);
  EXPECT_TRUE(same_partition(lib, oracle));
  EXPECT_EQ(p.num_atom_colors(), distinct(oracle));
}

TEST_P(ShippedFrameworkColoring, EdgeColorsMatchBruteForce) {
  const Framework& f = fw();
  SharingPattern p = sharing_pattern(f);
  auto atoms = site_action_table(f);
  auto pores = pore_action_table(f);
  EXPECT_EQ(tables_of(f.pore_perms()), pores);
  for (EdgeKind k : kEdgeKinds) {
    const auto& src = k == EdgeKind::PoreAtom ? pores : atoms;
    const auto& dst = k == EdgeKind::AtomPore ? pores : atoms;
    auto oracle = edge_orbit_labels(p.edges[k].edges, src, dst);
    EXPECT_TRUE(same_partition(p.edges[k].colors, oracle)) << edge_kind_name(k);
    EXPECT_EQ(p.edges[k].num_colors, distinct(oracle)) << edge_kind_name(k);
  }
}

TEST_P(ShippedFrameworkColoring, PatternValidates) { EXPECT_TRUE(validate_pattern(sharing_pattern(fw())).empty()); }

INSTANTIATE_TEST_SUITE_P(Shipped, ShippedFrameworkColoring, ::testing::Values("MOR", "MFI"));

TEST(ShippedColorCounts, Frozen) {
  // Counts produced by the brute-force oracle above and frozen here.
  SharingPattern m = sharing_pattern(mor());
  EXPECT_EQ(m.num_atom_colors(), 4u);
  EXPECT_EQ(m.num_pore_colors(), 2u);
  EXPECT_EQ(m.edges[EdgeKind::AtomAtom].num_colors, 14u);
  EXPECT_EQ(m.edges[EdgeKind::PoreAtom].num_colors, 8u);
  EXPECT_EQ(m.edges[EdgeKind::AtomPore].num_colors, 8u);
  SharingPattern x = sharing_pattern(mfi());
  EXPECT_EQ(x.num_atom_colors(), 12u);
  EXPECT_EQ(x.num_pore_colors(), 3u);
  EXPECT_EQ(x.edges[EdgeKind::AtomAtom].num_colors, 48u);
  EXPECT_EQ(x.edges[EdgeKind::PoreAtom].num_colors, 32u);
}

TEST(FuzzColoring, HundredRandomGroupsMatchOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    FuzzGroup g = fuzz_group(seed);
    ASSERT_LE(g.n, 24u);
    ASSERT_LE(g.table.size(), 16u);
    Rng rng(seed + 1000);
    auto edges = closed_edge_set(g, rng);
    auto perms = perms_of(g.table);
    NodeColoring nc = node_coloring(perms, g.n);
    auto oracle = orbit_labels(g.n, g.table);
    EXPECT_TRUE(same_partition(nc.colors, oracle)) << "seed " << seed;
    KindColoring kc = edge_coloring(perms, perms, edges);
    EXPECT_TRUE(same_partition(kc.colors, edge_orbit_labels(kc.edges, g.table, g.table))) << "seed " << seed;
    std::vector<Permutation> no_pores(perms.size(), Permutation::identity(0));
    SharingPattern p = make_sharing_pattern(perms, no_pores, edges, {}, {});
    EXPECT_TRUE(validate_pattern(p).empty()) << "seed " << seed;
  }
}

TEST(FuzzColoring, GeneratorsAloneGiveSameOrbits) {
  // Orbits of a group equal orbits of any generating set; the first two
  // non-identity elements do not always generate, so compare against the
  // closure of the chosen subset.
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    FuzzGroup g = fuzz_group(seed);
    std::vector<std::vector<std::size_t>> gens(g.table.begin(), g.table.begin() + std::min<std::size_t>(3, g.table.size()));
    std::set<std::vector<std::size_t>> closure(gens.begin(), gens.end());
    bool grew = true;
    while (grew) {
      grew = false;
      std::vector<std::vector<std::size_t>> cur(closure.begin(), closure.end());
      for (const auto& a : cur)
        for (const auto& b : cur) {
          std::vector<std::size_t> c(g.n);
          for (std::size_t i = 0; i < g.n; ++i) c[i] = a[b[i]];
          grew |= closure.insert(c).second;
        }
    }
    std::vector<std::vector<std::size_t>> full(closure.begin(), closure.end());
    EXPECT_TRUE(same_partition(node_coloring(perms_of(gens), g.n).colors, orbit_labels(g.n, full))) << seed;
  }
}

TEST(ValidatePattern, CorruptedNodeColorReported) {
  SharingPattern p = sharing_pattern(mor());
  // Give atom 5 a colour of its own.
  const std::size_t victim = 5;
  auto orbit_min = [&] {
    std::size_t m = victim;
    for (const auto& g : p.atom_perms) m = std::min(m, g[victim]);
    return m;
  }();
  p.nodes.colors[victim] = p.nodes.num_colors++;
  auto v = validate_pattern(p);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(violating_orbits(v, "node"), (std::vector<std::size_t>{orbit_min}));
}

TEST(ValidatePattern, MergedOrbitsReported) {
  SharingPattern p = sharing_pattern(mor());
  // Paint the whole second atom orbit with the first orbit's colour.
  const std::size_t c0 = p.atom_color(0);
  std::size_t other = 0;
  while (p.atom_color(other) == c0) ++other;
  const std::size_t c1 = p.atom_color(other);
  for (std::size_t i = 0; i < p.n_atoms; ++i)
    if (p.nodes.colors[i] == c1) p.nodes.colors[i] = c0;
  auto orbits = violating_orbits(validate_pattern(p), "node");
  EXPECT_FALSE(orbits.empty());
}

TEST(ValidatePattern, CorruptedEdgeColorReported) {
  SharingPattern p = sharing_pattern(mor());
  auto& h = p.edges[EdgeKind::AtomAtom];
  h.colors[3] = h.num_colors++;
  EXPECT_FALSE(violating_orbits(validate_pattern(p), "h").empty());
  EXPECT_TRUE(violating_orbits(validate_pattern(p), "k").empty());
}
