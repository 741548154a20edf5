#pragma once

// Space-group equivariant message passing over a pore-augmented crystal
// graph. Message functions are indexed by edge colour, node-update functions
// by node colour; gates, embeddings and heads are shared. Colours come from
// a SharingPattern, so every group element acts as a graph automorphism that
// also preserves which weights are used where.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "porenet/autodiff.hpp"
#include "porenet/coloring.hpp"
#include "porenet/graph.hpp"

namespace porenet {

enum class Aggregation : unsigned char { Mean, Sum };

inline const char* aggregation_name(Aggregation a) { return a == Aggregation::Mean ? "mean" : "sum"; }

struct ModelConfig {
  std::size_t hidden = 16;
  std::size_t steps = 6;
  std::size_t readout_width = 24;
  bool with_pores = true;
  bool with_symmetry = true;
  Aggregation aggregation = Aggregation::Mean;
  // Colour-indexed banks and gates shared by all message-passing steps.
  bool tie_steps = true;
  double leaky_slope = 0.01;

  void validate() const {
    if (hidden < 1 || steps < 1 || readout_width < 1) throw ValidationError("hidden, steps and readout_width must be >= 1");
  }
};

// Pore features are divided by these so they are O(1).
inline constexpr double kPoreAreaScale = 100.0;
inline constexpr double kPoreCountScale = 12.0;

struct LinearIds {
  std::size_t w = 0;
  std::size_t b = 0;
};

class Model {
 public:
  const ModelConfig& config() const { return cfg_; }
  const RbfConfig& rbf() const { return rbf_; }
  const SharingPattern& pattern() const { return pattern_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::size_t n_atoms() const { return pattern_.n_atoms; }
  std::size_t n_pores() const { return uses_pores() ? pattern_.n_pores : 0; }
  bool uses_pores() const { return cfg_.with_pores && pattern_.n_pores > 0; }
  bool kind_active(EdgeKind k) const { return k == EdgeKind::AtomAtom || uses_pores(); }

  /// Message banks per edge kind (per step when untied).
  std::size_t message_banks(EdgeKind k) const { return bank_count_[static_cast<int>(k)]; }
  std::size_t atom_update_banks() const { return n_atom_banks_; }
  std::size_t pore_update_banks() const { return n_pore_banks_; }
  std::size_t weight_sets() const { return cfg_.tie_steps ? 1 : cfg_.steps; }

  std::size_t atom_bank(std::size_t atom) const { return atom_bank_[atom]; }
  std::size_t pore_bank(std::size_t pore) const { return pore_bank_[pore]; }
  std::size_t edge_bank(EdgeKind k, std::size_t edge) const { return edge_bank_[static_cast<int>(k)][edge]; }

  /// Copy whose first multi-member atom orbit is split: its smallest member
  /// gets a fresh colour and a perturbed copy of the update bank. The result
  /// is no longer equivariant; used to show the checker catches it.
  Model with_desynchronized_bank(double perturbation = 0.1) const;

 private:
  friend Model init_model(const SharingPattern&, const ModelConfig&, const RbfConfig&, std::uint64_t);
  friend struct ModelAccess;

  ModelConfig cfg_;
  RbfConfig rbf_ = RbfConfig::defaults();
  SharingPattern pattern_;
  ParamStore params_;

  std::array<std::size_t, 3> bank_count_{0, 0, 0};
  std::size_t n_atom_banks_ = 0;
  std::size_t n_pore_banks_ = 0;
  std::vector<std::size_t> atom_bank_;
  std::vector<std::size_t> pore_bank_;
  std::array<std::vector<std::size_t>, 3> edge_bank_;

  LinearIds atom_embed_, pore_embed_;
  std::array<LinearIds, 3> edge_embed_;
  // [weight set][kind][bank]
  std::vector<std::array<std::vector<LinearIds>, 3>> msg_;
  std::vector<std::array<LinearIds, 3>> gate_;
  // [weight set][bank] -> two layers
  std::vector<std::vector<std::array<LinearIds, 2>>> upd_atom_;
  std::vector<std::vector<std::array<LinearIds, 2>>> upd_pore_;
  std::array<LinearIds, 2> readout_;
  std::array<LinearIds, 2> head_;
};

namespace detail {

inline LinearIds add_linear(ParamStore& ps, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
  LinearIds ids;
  ids.w = ps.add(name + ".w", uniform_init(out, in, rng));
  ids.b = ps.add(name + ".b", Tensor(1, out));
  return ids;
}

}  // namespace detail

/// Allocates every bank and draws weights uniformly in +-sqrt(1/fan_in)
/// (biases zero) from `seed`.
inline Model init_model(const SharingPattern& pattern, const ModelConfig& cfg, const RbfConfig& rbf, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.rbf_ = rbf;
  m.pattern_ = pattern;
  const std::size_t H = cfg.hidden;
  const bool sym = cfg.with_symmetry;
  const bool pores = m.uses_pores();

  const std::size_t ca = pattern.num_atom_colors();
  m.atom_bank_.resize(pattern.n_atoms);
  for (std::size_t i = 0; i < pattern.n_atoms; ++i) m.atom_bank_[i] = sym ? pattern.atom_color(i) : 0;
  m.n_atom_banks_ = sym ? ca : 1;
  if (pores) {
    m.pore_bank_.resize(pattern.n_pores);
    for (std::size_t p = 0; p < pattern.n_pores; ++p) m.pore_bank_[p] = sym ? pattern.pore_color(p) - ca : 0;
    m.n_pore_banks_ = sym ? pattern.num_pore_colors() : 1;
  }
  for (EdgeKind k : kEdgeKinds) {
    int q = static_cast<int>(k);
    if (!m.kind_active(k)) continue;
    const KindColoring& kc = pattern.edges[k];
    m.edge_bank_[q].resize(kc.edges.size());
    for (std::size_t e = 0; e < kc.edges.size(); ++e) m.edge_bank_[q][e] = sym ? kc.colors[e] : 0;
    m.bank_count_[q] = kc.edges.empty() ? 0 : (sym ? kc.num_colors : 1);
  }

  Rng rng(seed);
  ParamStore& ps = m.params_;
  m.atom_embed_ = detail::add_linear(ps, "embed.atom", H, 2, rng);
  if (pores) m.pore_embed_ = detail::add_linear(ps, "embed.pore", H, 2, rng);
  for (EdgeKind k : kEdgeKinds)
    if (m.bank_count_[static_cast<int>(k)] > 0)
      m.edge_embed_[static_cast<int>(k)] = detail::add_linear(ps, std::string("embed.edge.") + edge_kind_name(k), H, rbf.size(), rng);

  const std::size_t sets = m.weight_sets();
  m.msg_.resize(sets);
  m.gate_.resize(sets);
  m.upd_atom_.resize(sets);
  m.upd_pore_.resize(sets);
  const std::size_t atom_in = pores ? 3 * H : 2 * H;
  for (std::size_t s = 0; s < sets; ++s) {
    const std::string pre = cfg.tie_steps ? std::string() : "step" + std::to_string(s) + ".";
    for (EdgeKind k : kEdgeKinds) {
      int q = static_cast<int>(k);
      for (std::size_t c = 0; c < m.bank_count_[q]; ++c)
        m.msg_[s][q].push_back(detail::add_linear(ps, pre + "msg." + edge_kind_name(k) + "." + std::to_string(c), H, 3 * H, rng));
      if (m.bank_count_[q] > 0) m.gate_[s][q] = detail::add_linear(ps, pre + "gate." + edge_kind_name(k), H, H, rng);
    }
    for (std::size_t c = 0; c < m.n_atom_banks_; ++c)
      m.upd_atom_[s].push_back({detail::add_linear(ps, pre + "update.atom." + std::to_string(c) + ".0", H, atom_in, rng),
                                detail::add_linear(ps, pre + "update.atom." + std::to_string(c) + ".1", H, H, rng)});
    for (std::size_t c = 0; c < m.n_pore_banks_; ++c)
      m.upd_pore_[s].push_back({detail::add_linear(ps, pre + "update.pore." + std::to_string(c) + ".0", H, 2 * H, rng),
                                detail::add_linear(ps, pre + "update.pore." + std::to_string(c) + ".1", H, H, rng)});
  }
  const std::string ro = pores ? "readout.pore" : "readout.atom";
  m.readout_ = {detail::add_linear(ps, ro + ".0", H, H, rng), detail::add_linear(ps, ro + ".1", cfg.readout_width, H, rng)};
  m.head_ = {detail::add_linear(ps, "head.0", cfg.readout_width, cfg.readout_width, rng),
             detail::add_linear(ps, "head.1", 1, cfg.readout_width, rng)};
  return m;
}

/// Exact number of stored learnable scalars: embeddings, message banks,
/// gates, update banks, readout and head are all included.
inline std::size_t count_parameters(const Model& m) { return m.params().scalar_count(); }

inline Model Model::with_desynchronized_bank(double perturbation) const {
  if (!cfg_.with_symmetry) throw Error("fault injection needs a symmetric model");
  Model m = *this;
  std::vector<std::size_t> members(pattern_.num_atom_colors(), 0);
  for (std::size_t i = 0; i < pattern_.n_atoms; ++i) ++members[pattern_.atom_color(i)];
  std::size_t target = SIZE_MAX;
  for (std::size_t i = 0; i < pattern_.n_atoms && target == SIZE_MAX; ++i)
    if (members[pattern_.atom_color(i)] > 1) target = i;
  if (target == SIZE_MAX) throw Error("no atom orbit with more than one member to desynchronize");
  const std::size_t old_bank = m.atom_bank_[target];
  const std::size_t new_bank = m.n_atom_banks_++;
  m.atom_bank_[target] = new_bank;
  m.pattern_.nodes.colors[target] = m.pattern_.nodes.num_colors++;
  Rng rng(0xfa17);
  for (std::size_t s = 0; s < m.weight_sets(); ++s) {
    std::array<LinearIds, 2> copy;
    for (int layer = 0; layer < 2; ++layer) {
      const LinearIds& src = m.upd_atom_[s][old_bank][layer];
      Tensor w = m.params_[src.w].value;
      for (double& v : w.values()) v += rng.uniform(-perturbation, perturbation);
      std::string base = (cfg_.tie_steps ? std::string() : "step" + std::to_string(s) + ".") + "update.atom.fault." + std::to_string(layer);
      copy[layer].w = m.params_.add(base + ".w", std::move(w));
      copy[layer].b = m.params_.add(base + ".b", m.params_[src.b].value);
    }
    m.upd_atom_[s].push_back(copy);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Batched forward pass

/// Index arrays for running a batch of `batch` graphs that share one
/// topology. Message rows are ordered by bank, then sample, then edge, so each
/// bank's rows are contiguous.
struct ForwardPlan {
  std::size_t batch = 0;
  std::size_t n_atoms = 0;
  std::size_t n_pores = 0;
  std::shared_ptr<const GraphTopology> topology;
  std::array<bool, 3> active{false, false, false};
  std::array<Index, 3> src_rows;    // into the sender state matrix
  std::array<Index, 3> dst_rows;    // into the receiver state matrix
  std::array<Index, 3> feat_rows;   // message row -> template edge
  std::array<std::shared_ptr<const GroupIndex>, 3> msg_groups;
  std::array<std::shared_ptr<const GroupIndex>, 3> edge_groups;  // template edges by bank
  std::shared_ptr<const GroupIndex> atom_groups;
  std::shared_ptr<const GroupIndex> pore_groups;
  Index atom_sample;  // node row -> sample
  Index pore_sample;
  Index pore_tile;    // pore row -> template pore
};

inline ForwardPlan make_plan(const Model& model, std::shared_ptr<const GraphTopology> topo, std::size_t batch) {
  if (batch == 0) throw ShapeError("empty batch");
  const SharingPattern& pat = model.pattern();
  if (topo->n_atoms != pat.n_atoms) throw ValidationError("graph has " + std::to_string(topo->n_atoms) + " atoms, model pattern has " + std::to_string(pat.n_atoms));
  const bool pores = model.uses_pores();
  if (pores && (!topo->with_pores || topo->n_pores != pat.n_pores))
    throw ValidationError("graph pores do not match the model's pattern");
  if (topo->rbf_size != model.rbf().size()) throw ValidationError("graph RBF size does not match the model");
  ForwardPlan plan;
  plan.batch = batch;
  plan.n_atoms = topo->n_atoms;
  plan.n_pores = pores ? topo->n_pores : 0;
  const std::size_t na = plan.n_atoms, np = plan.n_pores;

  for (EdgeKind k : kEdgeKinds) {
    const int q = static_cast<int>(k);
    if (!model.kind_active(k) || model.message_banks(k) == 0) continue;
    const auto& edges = topo->edges_of(k);
    // Bank of each topology edge. Symmetric models look edges up in the
    // pattern; shared-weight models use bank 0 and accept any topology.
    std::vector<std::size_t> bank(edges.size(), 0);
    if (model.config().with_symmetry) {
      const KindColoring& kc = pat.edges[k];
      if (kc.edges != edges) throw ValidationError(std::string("graph ") + edge_kind_name(k) + " edges do not match the model's sharing pattern");
      for (std::size_t e = 0; e < edges.size(); ++e) bank[e] = model.edge_bank(k, e);
    }
    const std::size_t nb = model.message_banks(k);
    const std::size_t n_src = k == EdgeKind::PoreAtom ? np : na;
    const std::size_t n_dst = k == EdgeKind::AtomPore ? np : na;
    std::vector<std::vector<std::size_t>> by_bank(nb);
    for (std::size_t e = 0; e < edges.size(); ++e) by_bank[bank[e]].push_back(e);
    std::vector<std::size_t> src, dst, feat, assign;
    const std::size_t rows = edges.size() * batch;
    src.reserve(rows);
    dst.reserve(rows);
    feat.reserve(rows);
    assign.reserve(rows);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t e : by_bank[b]) {
          src.push_back(s * n_src + edges[e].src);
          dst.push_back(s * n_dst + edges[e].dst);
          feat.push_back(e);
          assign.push_back(b);
        }
    plan.active[q] = true;
    plan.src_rows[q] = make_index(std::move(src));
    plan.dst_rows[q] = make_index(std::move(dst));
    plan.feat_rows[q] = make_index(std::move(feat));
    plan.msg_groups[q] = std::make_shared<const GroupIndex>(GroupIndex::from_assignment(assign, nb));
    plan.edge_groups[q] = std::make_shared<const GroupIndex>(GroupIndex::from_assignment(bank, nb));
  }
  std::vector<std::size_t> ab(batch * na), as(batch * na);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < na; ++i) {
      ab[s * na + i] = model.atom_bank(i);
      as[s * na + i] = s;
    }
  plan.atom_groups = std::make_shared<const GroupIndex>(GroupIndex::from_assignment(ab, model.atom_update_banks()));
  plan.atom_sample = make_index(std::move(as));
  if (pores) {
    std::vector<std::size_t> pb(batch * np), ps(batch * np), pt(batch * np);
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t p = 0; p < np; ++p) {
        pb[s * np + p] = model.pore_bank(p);
        ps[s * np + p] = s;
        pt[s * np + p] = p;
      }
    plan.pore_groups = std::make_shared<const GroupIndex>(GroupIndex::from_assignment(pb, model.pore_update_banks()));
    plan.pore_sample = make_index(std::move(ps));
    plan.pore_tile = make_index(std::move(pt));
  }
  plan.topology = std::move(topo);
  return plan;
}

struct ForwardVars {
  Var prediction;  // batch x 1
  Var atoms;       // batch*n_atoms x hidden (final states)
  Var pores;       // batch*n_pores x hidden, invalid when pores are unused
};

struct ModelAccess {
  // Binds model parameters onto a tape. Trainable binding routes gradients
  // into the store; read-only binding records them as constants.
  struct Binder {
    Tape& tape;
    const ParamStore* ro = nullptr;
    ParamStore* rw = nullptr;
    std::vector<Var> cache;
    Var operator()(std::size_t id) {
      if (cache.empty()) cache.resize(ro ? ro->size() : rw->size());
      if (!cache[id].valid()) cache[id] = rw ? tape.param(*rw, id) : tape.constant((*ro)[id].value);
      return cache[id];
    }
  };

  static Var lin(Binder& bind, Var x, const LinearIds& ids) { return linear(x, bind(ids.w), bind(ids.b)); }

  static Var message_pass(const Model& m, Binder& bind, const ForwardPlan& plan, std::size_t step, Var atoms, Var pores,
                          const std::array<Var, 3>& edge_emb, Var& new_pores) {
    const ModelConfig& cfg = m.cfg_;
    const std::size_t set = cfg.tie_steps ? 0 : step;
    const std::size_t B = plan.batch, na = plan.n_atoms, np = plan.n_pores;
    std::array<Var, 3> agg;
    for (EdgeKind k : kEdgeKinds) {
      const int q = static_cast<int>(k);
      if (!plan.active[q]) continue;
      Var send = k == EdgeKind::PoreAtom ? pores : atoms;
      Var recv = k == EdgeKind::AtomPore ? pores : atoms;
      // W [t_recv; t_send; e] + b, with the edge columns applied once per
      // template edge (edge features do not change across the batch).
      std::vector<Var> w_nodes, w_edge, bs;
      for (const LinearIds& ids : m.msg_[set][q]) {
        Var w = bind(ids.w);
        w_nodes.push_back(column_block(w, 0, 2 * cfg.hidden));
        w_edge.push_back(column_block(w, 2 * cfg.hidden, cfg.hidden));
        bs.push_back(bind(ids.b));
      }
      Var edge_term = grouped_linear(edge_emb[q], plan.edge_groups[q], std::move(w_edge), std::move(bs));
      Var x = gather_concat({{recv, plan.dst_rows[q]}, {send, plan.src_rows[q]}});
      Var pre = add_gathered(grouped_linear(x, plan.msg_groups[q], std::move(w_nodes), {}), edge_term, plan.feat_rows[q]);
      const LinearIds& gate = m.gate_[set][q];
      Var gated = gated_leaky(pre, bind(gate.w), bind(gate.b), cfg.leaky_slope);
      const std::size_t n_recv = B * (k == EdgeKind::AtomPore ? np : na);
      agg[q] = cfg.aggregation == Aggregation::Mean ? scatter_mean(gated, plan.dst_rows[q], n_recv)
                                                    : scatter_sum(gated, plan.dst_rows[q], n_recv);
    }
    auto update = [&](Var state, std::vector<Var> parts, const std::shared_ptr<const GroupIndex>& groups,
                      const std::vector<std::array<LinearIds, 2>>& banks) {
      std::vector<Var> w0, b0, w1, b1;
      for (const auto& bank : banks) {
        w0.push_back(bind(bank[0].w));
        b0.push_back(bind(bank[0].b));
        w1.push_back(bind(bank[1].w));
        b1.push_back(bind(bank[1].b));
      }
      Var u = concat(std::move(parts));
      Var hdn = leaky_relu(grouped_linear(u, groups, std::move(w0), std::move(b0)), cfg.leaky_slope);
      return add(state, grouped_linear(hdn, groups, std::move(w1), std::move(b1)));
    };
    const int h = static_cast<int>(EdgeKind::AtomAtom), kk = static_cast<int>(EdgeKind::PoreAtom),
              l = static_cast<int>(EdgeKind::AtomPore);
    auto zeros_like = [&](std::size_t rows) { return atoms.tape()->constant(Tensor(rows, cfg.hidden)); };
    Var mh = plan.active[h] ? agg[h] : zeros_like(B * na);
    std::vector<Var> atom_parts{atoms, mh};
    if (np > 0) atom_parts.push_back(plan.active[kk] ? agg[kk] : zeros_like(B * na));
    Var new_atoms = update(atoms, std::move(atom_parts), plan.atom_groups, m.upd_atom_[set]);
    if (np > 0) {
      Var ml = plan.active[l] ? agg[l] : zeros_like(B * np);
      new_pores = update(pores, {pores, ml}, plan.pore_groups, m.upd_pore_[set]);
    }
    return new_atoms;
  }

  static std::array<Var, 3> embed_edges(const Model& m, Binder& bind, const ForwardPlan& plan) {
    const GraphTopology& topo = *plan.topology;
    std::array<Var, 3> rows;
    for (EdgeKind k : kEdgeKinds) {
      const int q = static_cast<int>(k);
      if (!plan.active[q]) continue;
      const auto& feat = topo.features_of(k);
      Tensor ef({feat.size() / topo.rbf_size, topo.rbf_size}, feat);
      rows[q] = lin(bind, bind.tape.constant(std::move(ef)), m.edge_embed_[q]);
    }
    return rows;
  }

  static ForwardVars embed_and_run(const Model& m, Binder& bind, const ForwardPlan& plan, const Tensor& atom_features,
                                   std::size_t steps, bool with_head) {
    Tape& tape = bind.tape;
    const GraphTopology& topo = *plan.topology;
    Var atoms = lin(bind, tape.constant(atom_features), m.atom_embed_);
    Var pores;
    if (plan.n_pores > 0) {
      Tensor pf(topo.n_pores, 2);
      for (std::size_t p = 0; p < topo.n_pores; ++p) {
        pf.at(p, 0) = topo.pore_features[2 * p] / kPoreAreaScale;
        pf.at(p, 1) = topo.pore_features[2 * p + 1] / kPoreCountScale;
      }
      pores = gather_rows(lin(bind, tape.constant(std::move(pf)), m.pore_embed_), plan.pore_tile);
    }
    std::array<Var, 3> edge_emb = embed_edges(m, bind, plan);
    for (std::size_t s = 0; s < steps; ++s) {
      Var next_pores = pores;
      atoms = message_pass(m, bind, plan, s, atoms, pores, edge_emb, next_pores);
      pores = next_pores;
    }
    ForwardVars out{Var(), atoms, pores};
    if (!with_head) return out;
    const bool pool_pores = plan.n_pores > 0;
    Var nodes = pool_pores ? pores : atoms;
    Var r = lin(bind, leaky_relu(lin(bind, nodes, m.readout_[0]), m.cfg_.leaky_slope), m.readout_[1]);
    Var pooled = scatter_sum(r, pool_pores ? plan.pore_sample : plan.atom_sample, plan.batch);
    out.prediction = lin(bind, leaky_relu(lin(bind, pooled, m.head_[0]), m.cfg_.leaky_slope), m.head_[1]);
    return out;
  }
};

/// Stacks the atom features of `graphs` (all sharing plan.topology).
inline Tensor stack_atom_features(const ForwardPlan& plan, std::span<const CrystalGraph* const> graphs) {
  if (graphs.size() != plan.batch) throw ShapeError("batch holds " + std::to_string(graphs.size()) + " graphs, plan expects " + std::to_string(plan.batch));
  Tensor x(plan.batch * plan.n_atoms, 2);
  for (std::size_t s = 0; s < graphs.size(); ++s) {
    const CrystalGraph& g = *graphs[s];
    if (g.n_atoms() != plan.n_atoms) throw ShapeError("graph atom count differs from the plan");
    std::copy(g.atom_features.begin(), g.atom_features.end(), x.data() + s * plan.n_atoms * 2);
  }
  return x;
}

/// Trainable forward: parameter gradients flow into model.params().
inline ForwardVars forward_batch(Tape& tape, Model& model, const ForwardPlan& plan, const Tensor& atom_features) {
  ModelAccess::Binder bind{tape, nullptr, &model.params(), {}};
  return ModelAccess::embed_and_run(model, bind, plan, atom_features, model.config().steps, true);
}

/// Read-only forward.
inline ForwardVars forward_batch(Tape& tape, const Model& model, const ForwardPlan& plan, const Tensor& atom_features) {
  ModelAccess::Binder bind{tape, &model.params(), nullptr, {}};
  return ModelAccess::embed_and_run(model, bind, plan, atom_features, model.config().steps, true);
}

struct NodeStates {
  Tensor atoms;  // n_atoms x hidden
  Tensor pores;  // n_pores x hidden (0 rows when pores are unused)
  std::size_t step = 0;
};

struct Prediction {
  double value = 0.0;  // kJ/mol
  NodeStates states;
};

inline Prediction forward(const Model& model, const CrystalGraph& graph) {
  ForwardPlan plan = make_plan(model, graph.topology, 1);
  Tape tape;
  ForwardVars v = forward_batch(tape, model, plan, Tensor({graph.n_atoms(), 2}, graph.atom_features));
  Prediction p;
  p.value = v.prediction.value()[0];
  p.states.atoms = v.atoms.value();
  p.states.pores = v.pores.valid() ? v.pores.value() : Tensor(0, model.config().hidden);
  p.states.step = model.config().steps;
  return p;
}

/// Predictions for many graphs of one topology, in batches.
inline std::vector<double> predict(const Model& model, std::span<const CrystalGraph* const> graphs, std::size_t batch = 64) {
  std::vector<double> out;
  out.reserve(graphs.size());
  std::shared_ptr<ForwardPlan> plan;
  for (std::size_t lo = 0; lo < graphs.size(); lo += batch) {
    const std::size_t n = std::min(batch, graphs.size() - lo);
    if (!plan || plan->batch != n || plan->topology != graphs[lo]->topology)
      plan = std::make_shared<ForwardPlan>(make_plan(model, graphs[lo]->topology, n));
    for (std::size_t s = 0; s < n; ++s)
      if (graphs[lo + s]->topology != plan->topology) {
        plan = nullptr;
        break;
      }
    if (!plan) {
      // Mixed topologies: fall back to one graph at a time.
      for (std::size_t s = 0; s < n; ++s) out.push_back(forward(model, *graphs[lo + s]).value);
      continue;
    }
    Tape tape;
    ForwardVars v = forward_batch(tape, model, *plan, stack_atom_features(*plan, graphs.subspan(lo, n)));
    for (std::size_t s = 0; s < n; ++s) out.push_back(v.prediction.value()[s]);
  }
  return out;
}

/// Node embeddings before message passing (step 0).
inline NodeStates embed(const Model& model, const CrystalGraph& graph) {
  ForwardPlan plan = make_plan(model, graph.topology, 1);
  Tape tape;
  ModelAccess::Binder bind{tape, &model.params(), nullptr, {}};
  ForwardVars v = ModelAccess::embed_and_run(model, bind, plan, Tensor({graph.n_atoms(), 2}, graph.atom_features), 0, false);
  return {v.atoms.value(), v.pores.valid() ? v.pores.value() : Tensor(0, model.config().hidden), 0};
}

/// One round of message passing (weights of step `step`) applied to `states`.
inline NodeStates message_step(const Model& model, std::size_t step, const CrystalGraph& graph, const NodeStates& states) {
  if (step >= model.config().steps) throw Error("step index out of range");
  ForwardPlan plan = make_plan(model, graph.topology, 1);
  const std::size_t H = model.config().hidden;
  if (states.atoms.rows() != plan.n_atoms || states.atoms.cols() != H)
    throw ShapeError("atom states " + states.atoms.shape_str() + " do not match the graph");
  if (plan.n_pores > 0 && (states.pores.rows() != plan.n_pores || states.pores.cols() != H))
    throw ShapeError("pore states " + states.pores.shape_str() + " do not match the graph");
  Tape tape;
  ModelAccess::Binder bind{tape, &model.params(), nullptr, {}};
  std::array<Var, 3> edge_emb = ModelAccess::embed_edges(model, bind, plan);
  Var atoms = tape.constant(states.atoms);
  Var pores = plan.n_pores > 0 ? tape.constant(states.pores) : Var();
  Var next_pores = pores;
  Var next_atoms = ModelAccess::message_pass(model, bind, plan, step, atoms, pores, edge_emb, next_pores);
  return {next_atoms.value(), next_pores.valid() ? next_pores.value() : Tensor(0, H), states.step + 1};
}

}  // namespace porenet
