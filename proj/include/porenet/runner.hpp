#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// suite: data preparation, seeded training runs with CSV artifacts, and
// data-efficiency sweeps.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <atomic>
#include <cstdio>
#include <exception>
#include <vector>

#include "porenet/checkpoint.hpp"
#include "porenet/dataset.hpp"
#include "porenet/train.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace porenet {

/// Keeps large tensor buffers in the heap between training steps instead of
/// returning them to the OS; glibc only, a no-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

enum class Ablation : unsigned char { None, NoPores, NoSyms };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoPores: return "no-pores";
    case Ablation::NoSyms: return "no-syms";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "no-pores") return Ablation::NoPores;
  if (s == "no-syms") return Ablation::NoSyms;
  throw ValidationError("unknown ablation '" + s + "' (none, no-pores, no-syms)");
}

struct SynthParams {
  std::size_t n_configs = 1000;
  std::size_t max_al = 12;
  std::uint64_t oracle_seed = 1;
  std::uint64_t data_seed = 2;
  double noise = 0.0;
  bool pore_term = false;
};

struct RunConfig {
  std::string framework_path;
  FrameworkOptions framework_options;
  std::optional<std::string> data_path;  // configurations CSV; synthetic data otherwise
  SynthParams synth;
  ModelConfig model;
  Ablation ablation = Ablation::None;
  double lr = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double train_frac = 0.9;
  std::vector<std::uint64_t> seeds{0};  // model initialisation, one run each
  std::uint64_t split_seed = 0;
  std::uint64_t shuffle_seed = 0;  // run with init seed s shuffles with shuffle_seed + s
  std::string out_dir = "out";
  std::size_t threads = 1;
  bool write_checkpoints = true;

  ModelConfig effective_model() const {
    ModelConfig m = model;
    if (ablation == Ablation::NoPores) m.with_pores = false;
    if (ablation == Ablation::NoSyms) m.with_symmetry = false;
    return m;
  }

  void validate() const {
    if (framework_path.empty()) throw ValidationError("no framework given");
    if (!std::filesystem::exists(framework_path)) throw IoError("framework file '" + framework_path + "' does not exist");
    if (data_path && !std::filesystem::exists(*data_path)) throw IoError("data file '" + *data_path + "' does not exist");
    if (seeds.empty()) throw ValidationError("at least one seed is required");
    if (epochs == 0) throw ValidationError("epochs must be positive");
    model.validate();
  }
};

inline nlohmann::json run_config_json(const RunConfig& c) {
  nlohmann::json j = {{"framework", c.framework_path},
                      {"model", model_config_json(c.effective_model())},
                      {"ablate", ablation_name(c.ablation)},
                      {"lr", c.lr},
                      {"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"train_frac", c.train_frac},
                      {"seeds", c.seeds},
                      {"split_seed", c.split_seed},
                      {"shuffle_seed", c.shuffle_seed},
                      {"threads", c.threads}};
  if (c.data_path) {
    j["data"] = *c.data_path;
  } else {
    j["synth"] = {{"n_configs", c.synth.n_configs}, {"max_al", c.synth.max_al},     {"oracle_seed", c.synth.oracle_seed},
                  {"data_seed", c.synth.data_seed}, {"noise", c.synth.noise},       {"pore_term", c.synth.pore_term}};
  }
  return j;
}

struct PreparedData {
  Framework framework;
  std::vector<LabeledConfig> configs;
  Split split;
  std::shared_ptr<const GraphTopology> topology;
  std::vector<Example> examples;  // same order as configs
};

inline PreparedData prepare_data(const RunConfig& c) {
  Framework f = load_framework(c.framework_path, c.framework_options);
  std::vector<LabeledConfig> configs;
  if (c.data_path) {
    configs = load_configurations(*c.data_path, f);
  } else {
    auto pat = sharing_pattern(f, c.synth.pore_term);
    auto oracle = SynthOracle::random(pat, c.synth.oracle_seed, c.synth.pore_term, c.synth.noise);
    configs = synth_generate(pat, oracle, c.synth.n_configs, c.synth.max_al, c.synth.data_seed);
  }
  if (configs.size() < 2) throw ValidationError("need at least two configurations");
  Split s = split(configs.size(), c.train_frac, c.split_seed);
  const ModelConfig mc = c.effective_model();
  auto topo = build_topology(f, RbfConfig::defaults(), mc.with_pores);
  std::vector<Example> ex;
  ex.reserve(configs.size());
  for (const auto& lc : configs) ex.push_back({lc.id, build_graph(topo, lc.occupancy), lc.hoa});
  return {std::move(f), std::move(configs), std::move(s), std::move(topo), std::move(ex)};
}

struct RunSummary {
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  ErrorMetrics final_metrics;  // test set, after the last epoch
  std::size_t best_epoch = 0;
  ErrorMetrics best_metrics;   // test set, best epoch
  double baseline_mae = 0.0;   // constant predictor (train mean) on the test set
  std::vector<EpochMetrics> history;
};

inline double constant_baseline_mae(std::span<const Example> train_set, std::span<const Example> test_set) {
  double mean = 0.0;
  for (const auto& x : train_set) mean += x.target;
  mean /= static_cast<double>(train_set.size());
  double mae = 0.0;
  for (const auto& x : test_set) mae += std::abs(x.target - mean);
  return test_set.empty() ? 0.0 : mae / static_cast<double>(test_set.size());
}

inline std::string format_metrics_csv(const std::vector<EpochMetrics>& h) {
  std::string s = "epoch,train_loss,eval_mae,eval_mse\n";
  for (const auto& e : h)
    s += std::to_string(e.epoch) + "," + detail::fmt_double(e.train_loss) + "," + detail::fmt_double(e.eval_mae) + "," +
         detail::fmt_double(e.eval_mse) + "\n";
  return s;
}

inline std::string format_predictions_csv(std::span<const Example> xs, std::span<const double> pred) {
  std::string s = "id,true,pred\n";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s += xs[i].id + "," + detail::fmt_double(xs[i].target) + "," + detail::fmt_double(pred[i]) + "\n";
  return s;
}

/// One training run. `tag` names the artifacts written into c.out_dir
/// (empty out_dir writes nothing).
inline RunSummary run_training(const RunConfig& c, const PreparedData& d, std::span<const std::size_t> train_idx,
                               std::uint64_t seed, const std::string& tag) {
  std::vector<Example> train_set, test_set;
  for (std::size_t i : train_idx) train_set.push_back(d.examples[i]);
  for (std::size_t i : d.split.test) test_set.push_back(d.examples[i]);
  const ModelConfig mc = c.effective_model();
  Model model = init_model(sharing_pattern(d.framework, mc.with_pores), mc, RbfConfig::defaults(), seed);
  TrainConfig tc;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch_size;
  tc.optimizer.lr = c.lr;
  tc.seed = c.shuffle_seed + seed;
  TrainResult r = train(model, train_set, test_set, tc);

  RunSummary s;
  s.seed = seed;
  s.n_train = train_set.size();
  s.final_metrics = {r.history.back().eval_mae, r.history.back().eval_mse};
  s.best_epoch = r.best_epoch;
  s.best_metrics = r.best;
  s.baseline_mae = constant_baseline_mae(train_set, test_set);
  s.history = r.history;
  if (!c.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(c.out_dir);
    const std::string base = (fs::path(c.out_dir) / tag).string();
    detail::write_file(base + "_metrics.csv", format_metrics_csv(r.history));
    auto pred = predict(model, graphs_of(test_set));
    detail::write_file(base + "_predictions.csv", format_predictions_csv(test_set, pred));
    if (c.write_checkpoints) {
      Model best = model;
      restore_params(best, r.best_params);
      save_checkpoint(base + "_best.json", best, d.framework, r.best_epoch);
    }
  }
  return s;
}

/// Runs jobs on up to `threads` threads; results keep job order.
template <class T>
std::vector<T> run_parallel(std::size_t n_jobs, std::size_t threads, const std::function<T(std::size_t)>& job) {
  std::vector<T> out(n_jobs);
  std::vector<std::exception_ptr> errors(n_jobs);
  threads = std::max<std::size_t>(1, std::min(threads, n_jobs));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n_jobs;) {
      try {
        out[i] = job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline std::string run_tag(const RunConfig& c, std::uint64_t seed) {
  return std::string(c.ablation == Ablation::None ? "full" : ablation_name(c.ablation)) + "_seed" + std::to_string(seed);
}

inline std::string format_summary_csv(const std::vector<RunSummary>& runs) {
  std::string s = "seed,n_train,final_mae,final_mse,best_epoch,best_mae,best_mse,baseline_mae\n";
  for (const auto& r : runs)
    s += std::to_string(r.seed) + "," + std::to_string(r.n_train) + "," + detail::fmt_double(r.final_metrics.mae) + "," +
         detail::fmt_double(r.final_metrics.mse) + "," + std::to_string(r.best_epoch) + "," +
         detail::fmt_double(r.best_metrics.mae) + "," + detail::fmt_double(r.best_metrics.mse) + "," +
         detail::fmt_double(r.baseline_mae) + "\n";
  return s;
}

/// One run per seed on the full training split.
inline std::vector<RunSummary> run_seeds(const RunConfig& c, const PreparedData& d) {
  auto runs = run_parallel<RunSummary>(c.seeds.size(), c.threads, [&](std::size_t i) {
    return run_training(c, d, d.split.train, c.seeds[i], run_tag(c, c.seeds[i]));
  });
  if (!c.out_dir.empty()) {
    const std::string prefix = c.ablation == Ablation::None ? "full" : ablation_name(c.ablation);
    detail::write_file((std::filesystem::path(c.out_dir) / (prefix + "_summary.csv")).string(), format_summary_csv(runs));
  }
  return runs;
}

/// `count` occupancies with an Al count uniform in [1, max(1, n/4)].
inline std::vector<Occupancy> random_occupancies(std::size_t n_sites, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Occupancy> out;
  const std::size_t hi = std::max<std::size_t>(1, n_sites / 4);
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<Species> t(n_sites, Species::Si);
    std::vector<std::size_t> idx = iota_indices(n_sites);
    rng.shuffle(idx);
    const std::size_t k = 1 + rng.below(hi);
    for (std::size_t i = 0; i < k && i < n_sites; ++i) t[idx[i]] = Species::Al;
    out.emplace_back(std::move(t));
  }
  return out;
}

inline const std::vector<double>& default_fractions() {
  static const std::vector<double> f{0.125, 0.25, 0.5, 0.75, 1.0};
  return f;
}

/// Training subset for a fraction: the first floor(frac * n) entries of the
/// (already shuffled) training split, so smaller fractions nest inside larger
/// ones and fraction 1 is the full split in its usual order.
inline std::vector<std::size_t> fraction_subset(const Split& s, double frac) {
  if (!(frac > 0.0 && frac <= 1.0)) throw ValidationError("fraction must lie in (0, 1]");
  auto n = static_cast<std::size_t>(std::floor(frac * static_cast<double>(s.train.size())));
  n = std::max<std::size_t>(n, 1);
  return {s.train.begin(), s.train.begin() + static_cast<std::ptrdiff_t>(n)};
}

struct EfficiencyPoint {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  ErrorMetrics metrics;  // test set after the last epoch
};

inline std::vector<EfficiencyPoint> data_efficiency(const RunConfig& c, const PreparedData& d,
                                                    const std::vector<double>& fractions = default_fractions()) {
  struct Job {
    double frac;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double f : fractions)
    for (std::uint64_t s : c.seeds) jobs.push_back({f, s});
  RunConfig quiet = c;
  quiet.write_checkpoints = false;
  auto runs = run_parallel<EfficiencyPoint>(jobs.size(), c.threads, [&](std::size_t i) {
    auto subset = fraction_subset(d.split, jobs[i].frac);
    char tag[64];
    std::snprintf(tag, sizeof tag, "frac%.4f_seed%llu", jobs[i].frac, static_cast<unsigned long long>(jobs[i].seed));
    RunSummary r = run_training(quiet, d, subset, jobs[i].seed, tag);
    return EfficiencyPoint{jobs[i].frac, jobs[i].seed, r.n_train, r.final_metrics};
  });
  if (!c.out_dir.empty()) {
    std::string s = "fraction,seed,n_train,mae,mse\n";
    for (const auto& p : runs)
      s += detail::fmt_double(p.fraction) + "," + std::to_string(p.seed) + "," + std::to_string(p.n_train) + "," +
           detail::fmt_double(p.metrics.mae) + "," + detail::fmt_double(p.metrics.mse) + "\n";
    detail::write_file((std::filesystem::path(c.out_dir) / "data_efficiency.csv").string(), s);
  }
  return runs;
}

}  // namespace porenet
