#pragma once

// Empirical symmetry checks on a built model: space-group equivariance of node
// states and invariance of the prediction, and plain relabelling invariance.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "porenet/model.hpp"

namespace porenet {

inline constexpr double kEquivarianceTol = 1e-9;

struct EquivarianceReport {
  double max_node_deviation = 0.0;
  double max_prediction_deviation = 0.0;
  std::size_t worst_element = 0;  // group element index with the largest deviation
  std::size_t configurations = 0;
  std::size_t elements = 0;
  double tolerance = kEquivarianceTol;
  bool passed() const { return max_node_deviation <= tolerance && max_prediction_deviation <= tolerance; }
};

namespace detail {

// Largest |a[perm(i)] - b[i]| over rows i (rows of width `w`).
inline double permuted_row_deviation(const Tensor& moved, const Tensor& base, const Permutation& perm) {
  const std::size_t w = base.cols();
  double worst = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < w; ++c) worst = std::max(worst, std::abs(moved.at(perm[i], c) - base.at(i, c)));
  return worst;
}

inline Tensor rows_of(const Tensor& t, std::size_t sample, std::size_t n) {
  const std::size_t w = t.cols();
  std::vector<double> v(t.data() + sample * n * w, t.data() + (sample + 1) * n * w);
  return Tensor({n, w}, std::move(v));
}

}  // namespace detail

/// For each occupancy x and every group element g of the model's pattern,
/// compares forward(g.x) against forward(x): node states must move with the
/// induced permutations and the prediction must not change.
inline EquivarianceReport equivariance_check(const Model& model, std::shared_ptr<const GraphTopology> topology,
                                             std::span<const Occupancy> occupancies, double tol = kEquivarianceTol) {
  const SharingPattern& pat = model.pattern();
  const std::size_t order = pat.group_order();
  EquivarianceReport rep;
  rep.tolerance = tol;
  rep.elements = order;
  ForwardPlan plan = make_plan(model, topology, order + 1);
  const std::size_t na = plan.n_atoms, np = plan.n_pores;
  double worst_any = -1.0;
  for (const Occupancy& x : occupancies) {
    std::vector<CrystalGraph> graphs;
    graphs.reserve(order + 1);
    graphs.push_back(build_graph(topology, x));
    for (std::size_t g = 0; g < order; ++g) graphs.push_back(build_graph(topology, x.permuted(pat.atom_perms[g])));
    std::vector<const CrystalGraph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    Tape tape;
    ForwardVars v = forward_batch(tape, model, plan, stack_atom_features(plan, ptrs));
    const Tensor& pred = v.prediction.value();
    const Tensor base_atoms = detail::rows_of(v.atoms.value(), 0, na);
    const Tensor base_pores = np ? detail::rows_of(v.pores.value(), 0, np) : Tensor();
    for (std::size_t g = 0; g < order; ++g) {
      double node_dev = detail::permuted_row_deviation(detail::rows_of(v.atoms.value(), g + 1, na), base_atoms, pat.atom_perms[g]);
      if (np)
        node_dev = std::max(node_dev, detail::permuted_row_deviation(detail::rows_of(v.pores.value(), g + 1, np), base_pores, pat.pore_perms[g]));
      const double pred_dev = std::abs(pred[g + 1] - pred[0]);
      rep.max_node_deviation = std::max(rep.max_node_deviation, node_dev);
      rep.max_prediction_deviation = std::max(rep.max_prediction_deviation, pred_dev);
      if (std::max(node_dev, pred_dev) > worst_any) {
        worst_any = std::max(node_dev, pred_dev);
        rep.worst_element = g;
      }
    }
    ++rep.configurations;
  }
  return rep;
}

/// Graph whose atoms and pores are renamed: atom i becomes atoms[i], pore p
/// becomes pores[p]. Geometry and features travel with the renamed nodes.
inline CrystalGraph relabel(const CrystalGraph& graph, const Permutation& atoms, const Permutation& pores) {
  const GraphTopology& t = *graph.topology;
  if (atoms.size() != t.n_atoms || pores.size() != t.n_pores) throw ShapeError("relabelling permutation sizes do not match the graph");
  auto out = std::make_shared<GraphTopology>(t);
  for (EdgeKind k : kEdgeKinds) {
    const int q = static_cast<int>(k);
    const Permutation& sp = k == EdgeKind::PoreAtom ? pores : atoms;
    const Permutation& dp = k == EdgeKind::AtomPore ? pores : atoms;
    const auto& edges = t.edges[q];
    std::vector<std::size_t> order(edges.size());
    std::vector<Edge> mapped(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
      mapped[e] = Edge{sp[edges[e].src], dp[edges[e].dst]};
      order[e] = e;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mapped[a] < mapped[b]; });
    const std::size_t K = t.rbf_size;
    for (std::size_t r = 0; r < order.size(); ++r) {
      const std::size_t e = order[r];
      out->edges[q][r] = mapped[e];
      out->distances[q][r] = t.distances[q][e];
      std::copy_n(t.edge_features[q].begin() + e * K, K, out->edge_features[q].begin() + r * K);
    }
  }
  for (std::size_t p = 0; p < t.n_pores; ++p)
    std::copy_n(t.pore_features.begin() + 2 * p, 2, out->pore_features.begin() + 2 * pores[p]);
  CrystalGraph g;
  g.topology = std::move(out);
  g.atom_features.assign(graph.atom_features.size(), 0.0);
  for (std::size_t i = 0; i < t.n_atoms; ++i) std::copy_n(graph.atom_features.begin() + 2 * i, 2, g.atom_features.begin() + 2 * atoms[i]);
  return g;
}

struct RelabelReport {
  double max_node_deviation = 0.0;
  double prediction_deviation = 0.0;
};

/// Compares a graph against a relabelled copy. Only models without
/// colour-indexed weights accept arbitrary relabellings.
inline RelabelReport relabel_check(const Model& model, const CrystalGraph& graph, const Permutation& atoms, const Permutation& pores) {
  Prediction a = forward(model, graph);
  Prediction b = forward(model, relabel(graph, atoms, pores));
  RelabelReport r;
  r.prediction_deviation = std::abs(a.value - b.value);
  r.max_node_deviation = detail::permuted_row_deviation(b.states.atoms, a.states.atoms, atoms);
  if (a.states.pores.rows() > 0)
    r.max_node_deviation = std::max(r.max_node_deviation, detail::permuted_row_deviation(b.states.pores, a.states.pores, pores));
  return r;
}

}  // namespace porenet
