#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Dense>

#include "support.hpp"

using namespace porenet;
using namespace testing_support;

namespace {

std::size_t params_with_prefix(const Model& m, const std::string& prefix) {
  std::size_t n = 0;
  for (const Param& p : m.params().all())
    if (p.name.rfind(prefix, 0) == 0) n += p.value.size();
  return n;
}

Model mor_model(ModelConfig cfg = {}, std::uint64_t seed = 0) {
  return init_model(sharing_pattern(mor(), cfg.with_pores), cfg, RbfConfig::defaults(), seed);
}

CrystalGraph mor_graph(const Occupancy& occ, bool with_pores = true) {
  static auto with = build_topology(mor(), RbfConfig::defaults(), true);
  static auto without = build_topology(mor(), RbfConfig::defaults(), false);
  return build_graph(with_pores ? with : without, occ);
}

Occupancy mor_occupancy(std::uint64_t seed, std::size_t n_al = 6) {
  Rng rng(seed);
  return random_occupancy(48, n_al, rng);
}

}  // namespace

TEST(Banks, TrivialGroupGivesOneBankPerElement) {
  Framework f = square_toy(false);
  Model m = init_model(sharing_pattern(f), ModelConfig{}, RbfConfig::defaults(), 0);
  EXPECT_EQ(m.atom_update_banks(), 4u);
  EXPECT_EQ(m.pore_update_banks(), 1u);
  EXPECT_EQ(m.message_banks(EdgeKind::AtomAtom), 8u);
  EXPECT_EQ(m.message_banks(EdgeKind::PoreAtom), 4u);
  EXPECT_EQ(m.message_banks(EdgeKind::AtomPore), 4u);
}

TEST(Banks, RotationSharesBanks) {
  Model m = init_model(sharing_pattern(square_toy(true)), ModelConfig{}, RbfConfig::defaults(), 0);
  EXPECT_EQ(m.atom_update_banks(), 1u);
  EXPECT_EQ(m.message_banks(EdgeKind::AtomAtom), 2u);
  EXPECT_EQ(m.message_banks(EdgeKind::PoreAtom), 1u);
}

TEST(Banks, NoSymsHasOneBankPerKindPerStep) {
  ModelConfig cfg;
  cfg.with_symmetry = false;
  cfg.tie_steps = false;
  Model m = mor_model(cfg);
  for (EdgeKind k : kEdgeKinds) EXPECT_EQ(m.message_banks(k), 1u);
  EXPECT_EQ(m.atom_update_banks(), 1u);
  for (std::size_t s = 0; s < cfg.steps; ++s)
    for (const char* k : {"h", "k", "l"})
      EXPECT_TRUE(m.params().contains("step" + std::to_string(s) + ".msg." + k + ".0.w"));
}

TEST(ParameterCount, SingleLinearBank) {
  ParamStore ps;
  Rng rng(0);
  detail::add_linear(ps, "x", 16, 16, rng);
  EXPECT_EQ(ps.scalar_count(), 272u);
}

TEST(ParameterCount, MorDefaultInBand) {
  std::size_t n = count_parameters(mor_model());
  EXPECT_GE(n, 15000u);
  EXPECT_LE(n, 60000u);
  EXPECT_EQ(n, 32377u);  // frozen
}

TEST(ParameterCount, MfiDefaultInBand) {
  Model m = init_model(sharing_pattern(mfi()), ModelConfig{}, RbfConfig::defaults(), 0);
  std::size_t n = count_parameters(m);
  EXPECT_GE(n, 105000u);
  EXPECT_LE(n, 300000u);
  EXPECT_EQ(n, 105913u);  // frozen
}

TEST(ParameterCount, ClosedForm) {
  // Independent tally from the layer shapes.
  const std::size_t H = 16, R = 24, K = 16;
  SharingPattern p = sharing_pattern(mor());
  const std::size_t ca = p.num_atom_colors(), cp = p.num_pore_colors();
  std::size_t ce = 0;
  for (EdgeKind k : kEdgeKinds) ce += p.edges[k].num_colors;
  auto lin = [](std::size_t o, std::size_t i) { return o * i + o; };
  std::size_t expect = lin(H, 2) * 2 + lin(H, K) * 3 + ce * lin(H, 3 * H) + 3 * lin(H, H) +
                       ca * (lin(H, 3 * H) + lin(H, H)) + cp * (lin(H, 2 * H) + lin(H, H)) + lin(H, H) + lin(R, H) +
                       lin(R, R) + lin(1, R);
  EXPECT_EQ(count_parameters(mor_model()), expect);
}

TEST(ParameterCount, DoublingEdgeColorsDoublesMessageBanks) {
  SharingPattern p = sharing_pattern(mor());
  auto& h = p.edges[EdgeKind::AtomAtom];
  Model before = init_model(p, ModelConfig{}, RbfConfig::defaults(), 0);
  // Split each colour class into two halves.
  std::vector<std::size_t> seen(h.num_colors, 0);
  for (std::size_t e = 0; e < h.colors.size(); ++e) h.colors[e] = 2 * h.colors[e] + (seen[h.colors[e]]++ % 2);
  h.num_colors *= 2;
  Model after = init_model(p, ModelConfig{}, RbfConfig::defaults(), 0);
  EXPECT_EQ(params_with_prefix(after, "msg.h."), 2 * params_with_prefix(before, "msg.h."));
  EXPECT_EQ(params_with_prefix(after, "msg.k."), params_with_prefix(before, "msg.k."));
}

TEST(ParameterCount, UntiedStepsScaleBanks) {
  ModelConfig cfg;
  cfg.tie_steps = false;
  Model untied = mor_model(cfg);
  Model tied = mor_model();
  std::size_t shared = params_with_prefix(tied, "embed.") + params_with_prefix(tied, "readout.") + params_with_prefix(tied, "head.");
  EXPECT_EQ(count_parameters(untied) - shared, 6 * (count_parameters(tied) - shared));
}

TEST(Forward, ZeroMessagesReduceToResidualUpdate) {
  ModelConfig cfg;
  cfg.hidden = 5;
  Model m = mor_model(cfg, 3);
  for (Param& p : m.params().all())
    if (p.name.rfind("msg.", 0) == 0 || p.name.rfind("gate.", 0) == 0) p.value.fill(0.0);
  CrystalGraph g = mor_graph(mor_occupancy(1));
  NodeStates s0 = embed(m, g);
  NodeStates s1 = message_step(m, 0, g, s0);
  // Oracle: t + W1 leaky(W0 [t; 0; 0] + b0) + b1 per atom bank.
  const std::size_t H = cfg.hidden;
  auto get = [&](const std::string& n) { return m.params()[m.params().id(n)].value; };
  for (std::size_t i = 0; i < 48; ++i) {
    const std::string b = "update.atom." + std::to_string(m.atom_bank(i));
    Tensor w0 = get(b + ".0.w"), b0 = get(b + ".0.b"), w1 = get(b + ".1.w"), b1 = get(b + ".1.b");
    Eigen::VectorXd t(H), u = Eigen::VectorXd::Zero(3 * H);
    for (std::size_t c = 0; c < H; ++c) t[c] = u[c] = s0.atoms.at(i, c);
    Eigen::VectorXd hdn(H);
    for (std::size_t r = 0; r < H; ++r) {
      double z = b0[r];
      for (std::size_t c = 0; c < 3 * H; ++c) z += w0.at(r, c) * u[c];
      hdn[r] = z > 0 ? z : 0.01 * z;
    }
    for (std::size_t r = 0; r < H; ++r) {
      double y = t[r] + b1[r];
      for (std::size_t c = 0; c < H; ++c) y += w1.at(r, c) * hdn[c];
      EXPECT_NEAR(s1.atoms.at(i, r), y, 1e-12);
    }
  }
}

TEST(Forward, AtomWithoutPoreNeighbourIgnoresPores) {
  // Trivial group, pore touching site 0 only.
  std::vector<FracCoord> sites{FracCoord::wrap({0.1, 0.1, 0.1}), FracCoord::wrap({0.4, 0.1, 0.1}),
                               FracCoord::wrap({0.7, 0.1, 0.1})};
  std::vector<Bond> bonds{{0, 1}, {1, 2}};
  std::vector<Pore> pores{{FracCoord::wrap({0.1, 0.3, 0.1}), 10.0, {0}}};
  Framework f = Framework::create("line", Lattice::orthorhombic(10, 10, 10), sites, {}, bonds, pores);
  Model m = init_model(sharing_pattern(f), ModelConfig{}, RbfConfig::defaults(), 1);
  CrystalGraph g = build_graph(f, Occupancy::parse("SAS"), RbfConfig::defaults(), true);
  NodeStates s = embed(m, g);
  NodeStates a = message_step(m, 0, g, s);
  for (double& v : s.pores.values()) v += 1.0;
  NodeStates b = message_step(m, 0, g, s);
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_EQ(a.atoms.at(1, c), b.atoms.at(1, c));
    EXPECT_EQ(a.atoms.at(2, c), b.atoms.at(2, c));
  }
  EXPECT_GT(std::abs(a.atoms.at(0, 0) - b.atoms.at(0, 0)) + std::abs(a.atoms.at(0, 1) - b.atoms.at(0, 1)), 0.0);
}

TEST(Forward, BatchedEqualsSingle) {
  Model m = mor_model({}, 4);
  std::vector<CrystalGraph> gs;
  for (std::uint64_t s = 0; s < 5; ++s) gs.push_back(mor_graph(mor_occupancy(s)));
  std::vector<const CrystalGraph*> ptrs;
  for (auto& g : gs) ptrs.push_back(&g);
  auto batched = predict(m, ptrs, 3);
  for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_NEAR(batched[i], forward(m, gs[i]).value, 1e-12);
}

TEST(Forward, NoPoresOnPorelessFramework) {
  ModelConfig cfg;
  cfg.with_pores = false;
  Framework f = mor().without_pores();
  Model m = init_model(sharing_pattern(f, false), cfg, RbfConfig::defaults(), 0);
  EXPECT_FALSE(m.params().contains("embed.pore.w"));
  double y = forward(m, build_graph(f, mor_occupancy(2), RbfConfig::defaults(), false)).value;
  EXPECT_TRUE(std::isfinite(y));
}

TEST(Forward, SumAggregationRuns) {
  ModelConfig cfg;
  cfg.aggregation = Aggregation::Sum;
  EXPECT_TRUE(std::isfinite(forward(mor_model(cfg), mor_graph(mor_occupancy(3))).value));
}

TEST(Forward, MismatchedTopologyRejected) {
  Model m = mor_model();
  EXPECT_THROW(make_plan(m, build_topology(mfi(), RbfConfig::defaults(), true), 1), ValidationError);
}

TEST(Equivariance, OneStepPermutesStates) {
  Model m = mor_model({}, 5);
  const SharingPattern& p = m.pattern();
  Occupancy x = mor_occupancy(6);
  CrystalGraph g = mor_graph(x);
  NodeStates s = message_step(m, 0, g, embed(m, g));
  for (std::size_t e = 0; e < p.group_order(); ++e) {
    CrystalGraph gg = mor_graph(x.permuted(p.atom_perms[e]));
    NodeStates t = message_step(m, 0, gg, embed(m, gg));
    double worst = 0.0;
    for (std::size_t i = 0; i < 48; ++i)
      for (std::size_t c = 0; c < 16; ++c) worst = std::max(worst, std::abs(t.atoms.at(p.atom_perms[e][i], c) - s.atoms.at(i, c)));
    for (std::size_t q = 0; q < p.n_pores; ++q)
      for (std::size_t c = 0; c < 16; ++c) worst = std::max(worst, std::abs(t.pores.at(p.pore_perms[e][q], c) - s.pores.at(q, c)));
    EXPECT_LE(worst, 1e-9) << "element " << e;
  }
}

TEST(Equivariance, PermutedOccupancyMovesAl) {
  SharingPattern p = sharing_pattern(mor());
  Occupancy x = mor_occupancy(7);
  for (const auto& g : p.atom_perms) {
    Occupancy y = x.permuted(g);
    for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(y[g[i]], x[i]);
  }
}

TEST(Equivariance, FullModelOnMorAndMfi) {
  for (const Framework* f : {&mor(), &mfi()}) {
    Model m = init_model(sharing_pattern(*f), ModelConfig{}, RbfConfig::defaults(), 11);
    auto occ = random_occupancies(f->n_sites(), 20, 12);
    auto rep = equivariance_check(m, build_topology(*f, RbfConfig::defaults(), true), occ);
    EXPECT_TRUE(rep.passed()) << f->name() << " node " << rep.max_node_deviation << " pred " << rep.max_prediction_deviation;
    EXPECT_EQ(rep.configurations, 20u);
    EXPECT_EQ(rep.elements, f->group().order());
  }
}

TEST(Equivariance, InvariantPredictions) {
  Model m = mor_model({}, 8);
  Occupancy x = mor_occupancy(9);
  const double y = forward(m, mor_graph(x)).value;
  for (const auto& g : m.pattern().atom_perms) EXPECT_NEAR(forward(m, mor_graph(x.permuted(g))).value, y, 1e-9);
}

TEST(Equivariance, TrivialGroupPassesVacuously) {
  Framework f = square_toy(false);
  Model m = init_model(sharing_pattern(f), ModelConfig{}, RbfConfig::defaults(), 0);
  std::vector<Occupancy> occ{Occupancy::parse("SASA")};
  auto rep = equivariance_check(m, build_topology(f, RbfConfig::defaults(), true), occ);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.elements, 1u);
}

TEST(Equivariance, DesynchronizedBankDetected) {
  Model bad = mor_model({}, 10).with_desynchronized_bank();
  auto occ = random_occupancies(48, 20, 13);
  auto rep = equivariance_check(bad, build_topology(mor(), RbfConfig::defaults(), true), occ);
  EXPECT_FALSE(rep.passed());
  EXPECT_GT(rep.max_node_deviation, kEquivarianceTol);
  auto orbits = violating_orbits(validate_pattern(bad.pattern()), "node");
  EXPECT_EQ(orbits, (std::vector<std::size_t>{0}));
}

TEST(Equivariance, SharedWeightsCommuteWithRelabelling) {
  ModelConfig cfg;
  cfg.with_symmetry = false;
  Model m = mor_model(cfg, 14);
  Rng rng(15);
  auto a = iota_indices(48), q = iota_indices(8);
  rng.shuffle(a);
  rng.shuffle(q);
  auto r = relabel_check(m, mor_graph(mor_occupancy(16)), Permutation(a), Permutation(q));
  EXPECT_LE(r.max_node_deviation, 1e-9);
  EXPECT_LE(r.prediction_deviation, 1e-9);
}

TEST(Gradient, FullModelMatchesFiniteDifferences) {
  ModelConfig cfg;
  cfg.hidden = 4;
  cfg.steps = 2;
  Model m = mor_model(cfg, 21);
  // Non-zero biases so every bias coordinate has a generic gradient.
  Rng rng(22);
  for (Param& p : m.params().all())
    if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0)
      for (double& v : p.value.values()) v = rng.uniform(-0.1, 0.1);
  std::vector<CrystalGraph> gs{mor_graph(mor_occupancy(23)), mor_graph(mor_occupancy(24, 10))};
  std::vector<const CrystalGraph*> ptrs{&gs[0], &gs[1]};
  ForwardPlan plan = make_plan(m, gs[0].topology, 2);
  Tensor x = stack_atom_features(plan, ptrs);
  // Targets inside the Huber delta keep the loss O(0.1); far targets make the
  // loss O(10) and central-difference cancellation swamps 1e-8 gradients.
  auto p0 = predict(m, ptrs, 2);
  Tensor target({2, 1}, {p0[0] + 0.5, p0[1] - 0.3});
  auto fwd = [&](Tape& t) { return huber_loss(forward_batch(t, m, plan, x).prediction, target, 1.0); };
  FiniteDiffOptions o;
  o.samples = 300;
  o.seed = 25;
  FiniteDiffReport r = finite_diff_check(fwd, m.params(), o);
  EXPECT_GE(r.checked, 200u);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                   << " numeric " << r.worst_numeric;
}

TEST(Training, ZeroLearningRateKeepsParameters) {
  Model m = mor_model({}, 30);
  Model ref = m;
  std::vector<Example> xs;
  for (std::uint64_t s = 0; s < 8; ++s) xs.push_back({"e" + std::to_string(s), mor_graph(mor_occupancy(s)), -20.0 - s});
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.optimizer.lr = 0.0;
  train(m, xs, {}, tc);
  for (std::size_t p = 0; p < m.params().size(); ++p)
    for (std::size_t i = 0; i < m.params()[p].value.size(); ++i)
      ASSERT_EQ(m.params()[p].value[i], ref.params()[p].value[i]) << m.params()[p].name;
}

TEST(Training, MemorisesSingleExample) {
  Model m = mor_model({}, 31);
  std::vector<Example> xs{{"one", mor_graph(mor_occupancy(32)), -27.5}};
  TrainConfig tc;
  tc.epochs = 400;
  tc.optimizer.lr = 3e-3;
  TrainResult r = train(m, xs, {}, tc);
  EXPECT_LT(r.history.back().train_loss, 1e-3);
  EXPECT_LT(std::abs(forward(m, xs[0].graph).value + 27.5), 0.05);
}

TEST(Training, DivergenceDetected) {
  Model m = mor_model({}, 33);
  std::vector<Example> xs{{"bad", mor_graph(mor_occupancy(34)), std::nan("")}};
  TrainConfig tc;
  tc.epochs = 1;
  EXPECT_THROW(train(m, xs, {}, tc), DivergenceError);
}

TEST(Training, SameSeedSameHistory) {
  std::vector<Example> xs;
  for (std::uint64_t s = 0; s < 12; ++s) xs.push_back({"e", mor_graph(mor_occupancy(s)), -20.0 - 0.5 * s});
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 5;
  tc.seed = 4;
  Model a = mor_model({}, 35), b = mor_model({}, 35);
  auto ra = train(a, xs, xs, tc), rb = train(b, xs, xs, tc);
  for (std::size_t e = 0; e < ra.history.size(); ++e) {
    EXPECT_EQ(ra.history[e].train_loss, rb.history[e].train_loss);
    EXPECT_EQ(ra.history[e].eval_mae, rb.history[e].eval_mae);
  }
}

TEST(Training, BestCheckpointRetained) {
  std::vector<Example> xs;
  for (std::uint64_t s = 0; s < 6; ++s) xs.push_back({"e", mor_graph(mor_occupancy(s)), -22.0 - s});
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 3;
  Model m = mor_model({}, 36);
  TrainResult r = train(m, xs, xs, tc);
  restore_params(m, r.best_params);
  EXPECT_NEAR(evaluate(m, xs).mae, r.best.mae, 1e-12);
  EXPECT_NEAR(r.history[r.best_epoch - 1].eval_mae, r.best.mae, 0.0);
}
