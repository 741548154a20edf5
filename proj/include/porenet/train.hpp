#pragma once

// Mini-batch AdamW training with a Huber loss, per-epoch evaluation and the
// best-by-eval-MAE parameters retained.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "porenet/model.hpp"
#include "porenet/rng.hpp"

namespace porenet {

struct Example {
  std::string id;
  CrystalGraph graph;
  double target = 0.0;  // kJ/mol
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double huber_delta = 1.0;
  AdamWConfig optimizer;  // lr 1e-3, betas (0.9, 0.999), eps 1e-8, wd 0.01
  std::uint64_t seed = 0;  // shuffling
  std::size_t eval_batch = 128;

  void validate() const {
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr)) throw ValidationError("learning rate must be finite and >= 0");
    if (!(huber_delta > 0.0)) throw ValidationError("huber delta must be positive");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double eval_mae = 0.0;
  double eval_mse = 0.0;
};

struct ErrorMetrics {
  double mae = std::numeric_limits<double>::quiet_NaN();
  double mse = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  ErrorMetrics best;
  std::vector<Param> best_params;  // values and optimizer state at best_epoch
};

inline std::vector<const CrystalGraph*> graphs_of(std::span<const Example> xs) {
  std::vector<const CrystalGraph*> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(&x.graph);
  return out;
}

inline ErrorMetrics error_metrics(std::span<const double> pred, std::span<const Example> xs) {
  ErrorMetrics m;
  if (xs.empty()) return m;
  double a = 0.0, s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = pred[i] - xs[i].target;
    a += std::abs(d);
    s += d * d;
  }
  m.mae = a / static_cast<double>(xs.size());
  m.mse = s / static_cast<double>(xs.size());
  return m;
}

inline ErrorMetrics evaluate(const Model& model, std::span<const Example> xs, std::size_t batch = 128) {
  auto g = graphs_of(xs);
  auto pred = predict(model, g, batch);
  return error_metrics(pred, xs);
}

/// Trains in place. Throws DivergenceError when a batch loss or gradient is
/// not finite. With lr == 0 the parameters are left bit-identical.
inline TrainResult train(Model& model, std::span<const Example> train_set, std::span<const Example> eval_set,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  const auto topology = train_set.front().graph.topology;
  for (const auto& x : train_set)
    if (x.graph.topology != topology) throw ValidationError("training examples must share one graph topology");

  TrainResult result;
  double best_key = std::numeric_limits<double>::infinity();
  Rng rng(cfg.seed);
  std::vector<std::size_t> order = iota_indices(train_set.size());
  std::map<std::size_t, ForwardPlan> plans;
  auto plan_for = [&](std::size_t n) -> const ForwardPlan& {
    auto it = plans.find(n);
    if (it == plans.end()) it = plans.emplace(n, make_plan(model, topology, n)).first;
    return it->second;
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - lo);
      const ForwardPlan& plan = plan_for(n);
      std::vector<const CrystalGraph*> batch(n);
      Tensor target(n, 1);
      for (std::size_t s = 0; s < n; ++s) {
        const Example& x = train_set[order[lo + s]];
        batch[s] = &x.graph;
        target[s] = x.target;
      }
      Tape tape;
      ForwardVars fv = forward_batch(tape, model, plan, stack_atom_features(plan, batch));
      Var loss = huber_loss(fv.prediction, target, cfg.huber_delta);
      const double lv = loss.value().item();
      if (!std::isfinite(lv))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(lo));
      backward(tape, loss, model.params());
      for (const Param& p : model.params().all())
        for (double g : p.grad.values())
          if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in '" + p.name + "' at epoch " + std::to_string(epoch));
      adamw_step(model.params(), cfg.optimizer);
      loss_sum += lv * static_cast<double>(n);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(train_set.size());
    ErrorMetrics ev = evaluate(model, eval_set, cfg.eval_batch);
    em.eval_mae = ev.mae;
    em.eval_mse = ev.mse;
    result.history.push_back(em);
    // Without an eval set the training loss selects the checkpoint.
    const double key = eval_set.empty() ? em.train_loss : ev.mae;
    if (key < best_key || result.best_params.empty()) {
      best_key = key;
      result.best_epoch = epoch;
      result.best = ev;
      result.best_params = model.params().all();
    }
  }
  return result;
}

/// Copies retained parameter values (and optimizer state) back into a model
/// with the same layout.
inline void restore_params(Model& model, const std::vector<Param>& saved) {
  auto& ps = model.params().all();
  if (ps.size() != saved.size()) throw ValidationError("saved parameters do not match the model layout");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].name != saved[i].name || ps[i].value.shape() != saved[i].value.shape())
      throw ValidationError("saved parameter '" + saved[i].name + "' does not match '" + ps[i].name + "'");
    ps[i] = saved[i];
  }
}

}  // namespace porenet
