// Acceptance run: one PASS / FAIL / SKIP line per criterion, artifacts under
// --out. Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "support.hpp"

using namespace porenet;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

// Learnability uses the full 200-epoch schedule; the ablation and
// data-efficiency sweeps (15 runs each) use half of it.
constexpr std::size_t kSweepEpochs = 100;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  enum class Status { Pass, Fail, Skip } status;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Outcome::Status::Pass : Outcome::Status::Fail, std::move(detail)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Average ranks, ties share the mean rank.
std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx = iota_indices(x.size());
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Options {
  fs::path out = "acceptance_out";
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> only;
};

// ---------------------------------------------------------------------------

Outcome equivariance_gate(const Options&) {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  for (const Framework* f : {&mor(), &mfi()}) {
    Model m = init_model(sharing_pattern(*f), ModelConfig{}, RbfConfig::defaults(), 0);
    auto occ = random_occupancies(f->n_sites(), 20, 1);
    auto rep = equivariance_check(m, build_topology(*f, RbfConfig::defaults(), true), occ);
    ok = ok && rep.passed() && rep.configurations == 20 && rep.elements == f->group().order();
    detail += fmt("%s |G|=%zu node %.2e pred %.2e; ", f->name().c_str(), rep.elements, rep.max_node_deviation,
                  rep.max_prediction_deviation);
  }
  const double secs = seconds_since(t0);
  return pass_if(ok && secs < 60.0, detail + fmt("tol %.0e, %.1f s (limit 60 s)", kEquivarianceTol, secs));
}

Outcome coloring_oracle(const Options&) {
  std::size_t mismatches = 0, checks = 0;
  for (const Framework* f : {&mor(), &mfi()}) {
    SharingPattern p = sharing_pattern(*f);
    auto atoms = site_action_table(*f), pores = pore_action_table(*f);
    std::vector<std::size_t> lib(p.nodes.colors.begin(), p.nodes.colors.begin() + p.n_atoms);
    ++checks;
    if (!same_partition(lib, orbit_labels(f->n_sites(), atoms))) ++mismatches;
    std::vector<std::size_t> libp(p.nodes.colors.begin() + p.n_atoms, p.nodes.colors.end());
    ++checks;
    if (!same_partition(libp, orbit_labels(f->pores().size(), pores))) ++mismatches;
    for (EdgeKind k : kEdgeKinds) {
      const auto& src = k == EdgeKind::PoreAtom ? pores : atoms;
      const auto& dst = k == EdgeKind::AtomPore ? pores : atoms;
      ++checks;
      if (!same_partition(p.edges[k].colors, edge_orbit_labels(p.edges[k].edges, src, dst))) ++mismatches;
    }
  }
  std::size_t fuzz_bad = 0, max_n = 0, max_g = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    FuzzGroup g = fuzz_group(seed);
    max_n = std::max(max_n, g.n);
    max_g = std::max(max_g, g.table.size());
    Rng rng(seed + 1000);
    auto edges = closed_edge_set(g, rng);
    auto perms = perms_of(g.table);
    NodeColoring nc = node_coloring(perms, g.n);
    KindColoring kc = edge_coloring(perms, perms, edges);
    if (!same_partition(nc.colors, orbit_labels(g.n, g.table)) ||
        !same_partition(kc.colors, edge_orbit_labels(kc.edges, g.table, g.table)))
      ++fuzz_bad;
  }
  return pass_if(mismatches == 0 && fuzz_bad == 0 && max_n <= 24 && max_g <= 16,
                 fmt("shipped %zu/%zu partitions match; fuzzed 100 groups (n<=%zu, |G|<=%zu), %zu mismatches",
                     checks - mismatches, checks, max_n, max_g, fuzz_bad));
}

Outcome gradient_gate(const Options&) {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.hidden = 4;
  cfg.steps = 2;
  Model m = init_model(sharing_pattern(mor()), cfg, RbfConfig::defaults(), 21);
  Rng rng(22);
  for (Param& p : m.params().all())
    if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0)
      for (double& v : p.value.values()) v = rng.uniform(-0.1, 0.1);
  auto topo = build_topology(mor(), RbfConfig::defaults(), true);
  auto occ = random_occupancies(48, 2, 23);
  std::vector<CrystalGraph> gs{build_graph(topo, occ[0]), build_graph(topo, occ[1])};
  std::vector<const CrystalGraph*> ptrs{&gs[0], &gs[1]};
  ForwardPlan plan = make_plan(m, topo, 2);
  Tensor x = stack_atom_features(plan, ptrs);
  auto p0 = predict(m, ptrs, 2);
  Tensor target({2, 1}, {p0[0] + 0.5, p0[1] - 0.3});
  auto fwd = [&](Tape& t) { return huber_loss(forward_batch(t, m, plan, x).prediction, target, 1.0); };
  FiniteDiffOptions o;
  o.samples = 300;
  o.seed = 25;
  FiniteDiffReport r = finite_diff_check(fwd, m.params(), o);
  const double secs = seconds_since(t0);
  return pass_if(r.checked >= 200 && r.max_rel_error <= 1e-4 && secs < 300.0,
                 fmt("%zu coordinates (%zu kink-skipped), max rel err %.2e at %s[%zu], step %.0e, %.1f s", r.checked,
                     r.skipped_kinks, r.max_rel_error, r.worst_param.c_str(), r.worst_index, o.step, secs));
}

Outcome parameter_counts(const Options&) {
  const std::size_t nm = count_parameters(init_model(sharing_pattern(mor()), ModelConfig{}, RbfConfig::defaults(), 0));
  const std::size_t nx = count_parameters(init_model(sharing_pattern(mfi()), ModelConfig{}, RbfConfig::defaults(), 0));
  const bool ok = nm >= 15000 && nm <= 60000 && nx >= 105000 && nx <= 300000;
  return pass_if(ok, fmt("MOR %zu in [15000, 60000]; MFI %zu in [105000, 300000]", nm, nx));
}

RunConfig synth_run(const Options& o, const std::string& sub) {
  RunConfig c;
  c.framework_path = mor_path();
  c.out_dir = (o.out / sub).string();
  c.threads = o.threads;
  c.write_checkpoints = false;
  fs::create_directories(c.out_dir);
  return c;
}

Outcome learnability(const Options& o) {
  const auto t0 = Clock::now();
  RunConfig c = synth_run(o, "learnability");
  c.seeds = {0, 1, 2};
  PreparedData d = prepare_data(c);
  auto runs = run_seeds(c, d);
  std::vector<double> mae;
  for (const auto& r : runs) mae.push_back(r.final_metrics.mae);
  const double med = median(mae), base = runs[0].baseline_mae;
  const double secs = seconds_since(t0);
  return pass_if(med <= 0.1 * base, fmt("median test MAE %.4f vs 0.1 x baseline %.4f (ratio %.4f), seeds MAE %.4f %.4f %.4f; "
                                        "%.0f s on %zu thread(s)",
                                        med, 0.1 * base, med / base, mae[0], mae[1], mae[2], secs, c.threads));
}

Outcome ablation_direction(const Options& o) {
  const auto t0 = Clock::now();
  std::vector<double> med(3);
  const Ablation kinds[3] = {Ablation::None, Ablation::NoSyms, Ablation::NoPores};
  for (int a = 0; a < 3; ++a) {
    RunConfig c = synth_run(o, std::string("ablation_") + ablation_name(kinds[a]));
    c.synth.pore_term = true;
    c.ablation = kinds[a];
    c.seeds = {0, 1, 2, 3, 4};
    c.epochs = kSweepEpochs;
    PreparedData d = prepare_data(c);
    std::vector<double> mae;
    for (const auto& r : run_seeds(c, d)) mae.push_back(r.final_metrics.mae);
    med[a] = median(mae);
  }
  const double secs = seconds_since(t0);
  return pass_if(med[0] <= med[1], fmt("median test MAE full %.4f <= no-syms %.4f; no-pores %.4f (reported only); %.0f s",
                                       med[0], med[1], med[2], secs));
}

Outcome data_efficiency_trend(const Options& o) {
  const auto t0 = Clock::now();
  RunConfig c = synth_run(o, "data_efficiency");
  c.seeds = {0, 1, 2};
  c.epochs = kSweepEpochs;
  PreparedData d = prepare_data(c);
  auto pts = data_efficiency(c, d);
  std::vector<double> frac, neg_mae;
  bool every_seed = true;
  std::string per_seed;
  for (std::uint64_t s : c.seeds) {
    double at1 = 0, at8 = 0;
    for (const auto& p : pts) {
      if (p.seed != s) continue;
      if (p.fraction == 1.0) at1 = p.metrics.mae;
      if (p.fraction == 0.125) at8 = p.metrics.mae;
    }
    every_seed = every_seed && at1 < at8;
    per_seed += fmt("seed %llu: %.4f < %.4f; ", static_cast<unsigned long long>(s), at1, at8);
  }
  for (const auto& p : pts) {
    frac.push_back(p.fraction);
    neg_mae.push_back(-p.metrics.mae);
  }
  const double rho = spearman(frac, neg_mae);
  const double secs = seconds_since(t0);
  return pass_if(every_seed && rho > 0.0, per_seed + fmt("Spearman(fraction, -MAE) %.3f over %zu runs; %.0f s", rho, pts.size(), secs));
}

Outcome determinism(const Options& o) {
  const fs::path a = o.out / "determinism_a", b = o.out / "determinism_b";
  const std::string args = std::string(PORENET_CLI) + " train --framework " + mor_path() +
                           " --synth n=200 --epochs 5 --seeds 0,1 --threads " + std::to_string(o.threads) + " --out ";
  for (const fs::path& p : {a, b}) {
    fs::remove_all(p);
    const std::string cmd = args + p.string() + " > " + (p.string() + ".log") + " 2>&1";
    if (std::system(cmd.c_str()) != 0) return {Outcome::Status::Fail, "train exited non-zero, see " + p.string() + ".log"};
  }
  std::size_t compared = 0;
  for (const char* f : {"full_seed0_metrics.csv", "full_seed1_metrics.csv", "full_seed0_predictions.csv", "full_summary.csv"}) {
    const std::string x = slurp(a / f), y = slurp(b / f);
    if (x.empty() || x != y) return {Outcome::Status::Fail, std::string(f) + " differs between runs"};
    ++compared;
  }
  return pass_if(true, fmt("%zu CSVs bit-identical across two train runs", compared));
}

Outcome real_data(const Options& o) {
  const std::string path = data_path("MOR_hoa.csv");
  if (!fs::exists(path)) return {Outcome::Status::Skip, "no labelled data at " + path};
  const auto t0 = Clock::now();
  RunConfig c = synth_run(o, "real_data");
  c.data_path = path;
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  PreparedData d = prepare_data(c);
  double mean = 0.0;
  for (const auto& r : run_seeds(c, d)) mean += r.final_metrics.mae / 10.0;
  return pass_if(mean <= 1.3, fmt("10-seed mean test MAE %.4f kJ/mol (limit 1.3); %.0f s", mean, seconds_since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  Options o;
  CLI::App app{"acceptance criteria"};
  app.add_option("--out", o.out, "artifact directory")->capture_default_str();
  app.add_option("--threads", o.threads, "parallel training runs")->capture_default_str();
  app.add_option("--only", o.only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(o.out);

  const std::vector<std::pair<std::string, Outcome (*)(const Options&)>> criteria{
      {"equivariance", equivariance_gate},   {"coloring-oracle", coloring_oracle},
      {"gradient", gradient_gate},           {"parameter-count", parameter_counts},
      {"learnability", learnability},        {"ablation-direction", ablation_direction},
      {"data-efficiency", data_efficiency_trend}, {"determinism", determinism},
      {"stretch-real-data", real_data}};
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!o.only.empty() && std::find(o.only.begin(), o.only.end(), name) == o.only.end()) continue;
    Outcome r;
    try {
      r = fn(o);
    } catch (const std::exception& e) {
      r = {Outcome::Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = r.status == Outcome::Status::Pass ? "PASS" : r.status == Outcome::Status::Fail ? "FAIL" : "SKIP";
    if (r.status == Outcome::Status::Fail) ++failed;
    std::printf("%s %s: %s\n", tag, name.c_str(), r.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
