// porenet command-line tool: inspect, train, eval, equivcheck, gen-synth,
// data-efficiency.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "porenet/porenet.hpp"

namespace fs = std::filesystem;
using namespace porenet;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kValidation = 2, kDivergence = 3, kIo = 4, kCheckFailed = 5 };

constexpr const char* kSchemaVersion = "1";

struct Flags {
  RunConfig run;
  std::string ablate = "none";
  std::string agg = "mean";
  bool untied = false;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  std::string synth_spec;
  std::string config_path;  // consumed by expand_config; declared for --help
  double site_tol = kSiteTol;
};

void add_framework(CLI::App* cmd, Flags& fl) {
  cmd->add_option("--framework", fl.run.framework_path, "framework file")->required();
  cmd->add_option("--site-tol", fl.site_tol, "fractional tolerance for site matching")->capture_default_str();
}

void add_model(CLI::App* cmd, Flags& fl) {
  cmd->add_option("--ablate", fl.ablate, "none | no-pores | no-syms")->capture_default_str()
      ->check(CLI::IsMember({"none", "no-pores", "no-syms"}));
  cmd->add_option("--agg", fl.agg, "message aggregation")->capture_default_str()->check(CLI::IsMember({"mean", "sum"}));
  cmd->add_option("--hidden", fl.run.model.hidden, "hidden width")->capture_default_str();
  cmd->add_option("--steps", fl.run.model.steps, "message-passing steps")->capture_default_str();
  cmd->add_flag("--untied", fl.untied, "independent weight banks per step");
}

void add_run(CLI::App* cmd, Flags& fl) {
  add_framework(cmd, fl);
  add_model(cmd, fl);
  cmd->add_option("--data", fl.run.data_path, "labelled configurations CSV (synthetic data when absent)");
  cmd->add_option("--synth", fl.synth_spec,
                  "synthetic data, comma list of key=value: n, max_al, oracle_seed, data_seed, noise, pore_term");
  cmd->add_option("--seeds", fl.seeds, "initialisation seeds, one run each")->delimiter(',');
  cmd->add_option("--seed", fl.seed, "single initialisation seed (when --seeds is absent)")->capture_default_str();
  cmd->add_option("--split-seed", fl.run.split_seed, "train/test split seed")->capture_default_str();
  cmd->add_option("--shuffle-seed", fl.run.shuffle_seed, "mini-batch order seed base")->capture_default_str();
  cmd->add_option("--epochs", fl.run.epochs)->capture_default_str();
  cmd->add_option("--lr", fl.run.lr)->capture_default_str();
  cmd->add_option("--batch-size", fl.run.batch_size)->capture_default_str();
  cmd->add_option("--train-frac", fl.run.train_frac)->capture_default_str();
  cmd->add_option("--threads", fl.run.threads, "parallel runs")->capture_default_str();
  cmd->add_option("--out", fl.run.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--config", fl.config_path, "TOML file of option values (key = value, keys named like the flags); flags win");
}

void parse_synth(const std::string& spec, SynthParams& s) {
  if (spec.empty()) return;
  for (auto item : detail::split_char(spec, ',')) {
    auto kv = detail::split_char(detail::trim(item), '=');
    if (kv.size() != 2) throw ValidationError("--synth expects key=value pairs, got '" + std::string(item) + "'");
    const std::string key(detail::trim(kv[0]));
    const std::string_view val = detail::trim(kv[1]);
    auto num = detail::to_double(val);
    if (!num) throw ValidationError("--synth " + key + ": '" + std::string(val) + "' is not a number");
    if (key == "n") s.n_configs = static_cast<std::size_t>(*num);
    else if (key == "max_al") s.max_al = static_cast<std::size_t>(*num);
    else if (key == "oracle_seed") s.oracle_seed = static_cast<std::uint64_t>(*num);
    else if (key == "data_seed") s.data_seed = static_cast<std::uint64_t>(*num);
    else if (key == "noise") s.noise = *num;
    else if (key == "pore_term") s.pore_term = *num != 0.0;
    else throw ValidationError("--synth: unknown key '" + key + "'");
  }
}

RunConfig resolve(Flags& fl) {
  RunConfig c = fl.run;
  c.framework_options.site_tol = fl.site_tol;
  c.ablation = parse_ablation(fl.ablate);
  c.model.aggregation = fl.agg == "sum" ? Aggregation::Sum : Aggregation::Mean;
  c.model.tie_steps = !fl.untied;
  c.seeds = fl.seeds.empty() ? std::vector<std::uint64_t>{fl.seed} : fl.seeds;
  parse_synth(fl.synth_spec, c.synth);
  c.validate();
  return c;
}

void dump_config(const RunConfig& c, const std::string& command) {
  fs::create_directories(c.out_dir);
  nlohmann::json j = run_config_json(c);
  j["command"] = command;
  j["csv_schema_version"] = kSchemaVersion;
  detail::write_file((fs::path(c.out_dir) / "resolved_config.json").string(), j.dump(2) + "\n");
}

Framework load(const Flags& fl) {
  FrameworkOptions o;
  o.site_tol = fl.site_tol;
  return load_framework(fl.run.framework_path, o);
}

// ---------------------------------------------------------------------------

int cmd_inspect(const Flags& fl) {
  const Framework f = load(fl);
  const SharingPattern p = sharing_pattern(f, true);
  if (auto v = validate_pattern(p); !v.empty()) {
    for (const auto& x : v) std::cerr << "violation (" << x.kind << " " << x.element << "): " << x.message << "\n";
    return kValidation;
  }
  nlohmann::json j;
  j["framework"] = f.name();
  j["group_order"] = p.group_order();
  j["n_atoms"] = p.n_atoms;
  j["n_pores"] = p.n_pores;
  j["n_bonds"] = f.bonds().size();
  j["atom_colors"] = p.num_atom_colors();
  j["pore_colors"] = p.num_pore_colors();
  j["node_colors"] = p.nodes.num_colors;
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < p.n_atoms; ++i) nodes.push_back({{"node", i}, {"kind", "atom"}, {"color", p.atom_color(i)}});
  for (std::size_t q = 0; q < p.n_pores; ++q)
    nodes.push_back({{"node", p.n_atoms + q}, {"kind", "pore"}, {"pore", q}, {"color", p.pore_color(q)}});
  j["nodes"] = nodes;
  for (EdgeKind k : kEdgeKinds) {
    const KindColoring& kc = p.edges[k];
    nlohmann::json e = nlohmann::json::array();
    for (std::size_t i = 0; i < kc.edges.size(); ++i) e.push_back({kc.edges[i].src, kc.edges[i].dst, kc.colors[i]});
    j["edges"][edge_kind_name(k)] = {{"count", kc.edges.size()}, {"colors", kc.num_colors}, {"src_dst_color", e}};
  }
  ModelConfig def;
  j["parameters_default"] = count_parameters(init_model(p, def, RbfConfig::defaults(), 0));
  for (const auto& w : f.warnings()) std::cerr << "warning: " << w << "\n";
  std::cout << j.dump(1) << "\n";
  return kOk;
}

int cmd_train(Flags& fl) {
  const RunConfig c = resolve(fl);
  dump_config(c, "train");
  const PreparedData d = prepare_data(c);
  detail::write_file((fs::path(c.out_dir) / "split.csv").string(), format_split_manifest(d.configs, d.split));
  auto runs = run_seeds(c, d);
  std::fputs(format_summary_csv(runs).c_str(), stdout);
  return kOk;
}

int cmd_eval(const Flags& fl, const std::string& checkpoint, const std::string& data, const std::string& out) {
  const Framework f = load(fl);
  if (!fs::exists(checkpoint)) throw IoError("checkpoint '" + checkpoint + "' does not exist");
  Model m = load_checkpoint(checkpoint, f);
  auto configs = load_configurations(data, f);
  auto topo = build_topology(f, m.rbf(), m.config().with_pores);
  std::vector<Example> xs;
  for (const auto& c : configs) xs.push_back({c.id, build_graph(topo, c.occupancy), c.hoa});
  auto pred = predict(m, graphs_of(xs));
  auto em = error_metrics(pred, xs);
  if (!out.empty()) {
    fs::create_directories(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path());
    detail::write_file(out, format_predictions_csv(xs, pred));
  }
  std::printf("n,mae,mse\n%zu,%s,%s\n", xs.size(), detail::fmt_double(em.mae).c_str(), detail::fmt_double(em.mse).c_str());
  return kOk;
}

int cmd_equivcheck(Flags& fl, std::size_t n_occ, bool inject_fault) {
  const Framework f = load(fl);
  ModelConfig mc = fl.run.model;
  mc.aggregation = fl.agg == "sum" ? Aggregation::Sum : Aggregation::Mean;
  mc.tie_steps = !fl.untied;
  const Ablation ab = parse_ablation(fl.ablate);
  if (ab == Ablation::NoPores) mc.with_pores = false;
  if (ab == Ablation::NoSyms) mc.with_symmetry = false;
  Model model = init_model(sharing_pattern(f, mc.with_pores), mc, RbfConfig::defaults(), fl.seed);
  auto topo = build_topology(f, RbfConfig::defaults(), mc.with_pores);
  auto occs = random_occupancies(f.n_sites(), n_occ, fl.seed + 1);

  if (ab == Ablation::NoSyms) {
    // Shared weights: any simultaneous relabelling of atoms and pores must
    // commute with the model.
    Rng rng(fl.seed + 2);
    double node = 0.0, pred = 0.0;
    for (const auto& x : occs) {
      std::vector<std::size_t> a = iota_indices(topo->n_atoms), q = iota_indices(topo->n_pores);
      rng.shuffle(a);
      rng.shuffle(q);
      auto r = relabel_check(model, build_graph(topo, x), Permutation(a), Permutation(q));
      node = std::max(node, r.max_node_deviation);
      pred = std::max(pred, r.prediction_deviation);
    }
    const bool ok = node <= kEquivarianceTol && pred <= kEquivarianceTol;
    std::printf("mode relabel\nconfigurations %zu\nmax_node_deviation %.3e\nmax_prediction_deviation %.3e\nresult %s\n",
                occs.size(), node, pred, ok ? "PASS" : "FAIL");
    return ok ? kOk : kCheckFailed;
  }

  if (inject_fault) model = model.with_desynchronized_bank();
  auto rep = equivariance_check(model, topo, occs);
  std::printf("mode group\nelements %zu\nconfigurations %zu\nmax_node_deviation %.3e\nmax_prediction_deviation %.3e\n"
              "worst_element %zu\n",
              rep.elements, rep.configurations, rep.max_node_deviation, rep.max_prediction_deviation, rep.worst_element);
  if (!rep.passed()) {
    auto v = validate_pattern(model.pattern());
    for (std::size_t orbit : violating_orbits(v, "node"))
      std::printf("violating_orbit node %zu (color %zu)\n", orbit, model.pattern().nodes.colors[orbit]);
  }
  std::printf("result %s\n", rep.passed() ? "PASS" : "FAIL");
  return rep.passed() ? kOk : kCheckFailed;
}

int cmd_gen_synth(const Flags& fl, const std::string& out, const std::string& oracle_out) {
  const Framework f = load(fl);
  SynthParams s;
  parse_synth(fl.synth_spec, s);
  auto pat = sharing_pattern(f, s.pore_term);
  auto oracle = SynthOracle::random(pat, s.oracle_seed, s.pore_term, s.noise);
  auto configs = synth_generate(pat, oracle, s.n_configs, s.max_al, s.data_seed);
  write_configurations(out, configs);
  if (!oracle_out.empty()) {
    nlohmann::json j = {{"c0", oracle.c0}, {"w", oracle.w}, {"v", oracle.v}, {"u", oracle.u}, {"noise", oracle.noise}};
    detail::write_file(oracle_out, j.dump(1) + "\n");
  }
  std::printf("wrote %zu configurations to %s\n", configs.size(), out.c_str());
  return kOk;
}

int cmd_data_efficiency(Flags& fl, const std::vector<double>& fractions) {
  const RunConfig c = resolve(fl);
  dump_config(c, "data-efficiency");
  const PreparedData d = prepare_data(c);
  detail::write_file((fs::path(c.out_dir) / "split.csv").string(), format_split_manifest(d.configs, d.split));
  auto pts = data_efficiency(c, d, fractions);
  std::printf("fraction,seed,n_train,mae,mse\n");
  for (const auto& p : pts)
    std::printf("%s,%llu,%zu,%s,%s\n", detail::fmt_double(p.fraction).c_str(), static_cast<unsigned long long>(p.seed),
                p.n_train, detail::fmt_double(p.metrics.mae).c_str(), detail::fmt_double(p.metrics.mse).c_str());
  return kOk;
}

// Replaces "--config FILE" with one "--key value" pair per TOML entry, skipping
// keys that are also given as flags so the command line wins.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> out;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty()) return out;
  if (!fs::exists(path)) throw IoError("config file '" + path + "' does not exist");
  auto given = [&](const std::string& flag) {
    for (const auto& a : out)
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_file(path)) {
    if (item.name == "++" || item.name == "--" || item.inputs.empty()) continue;
    std::string flag = "--" + item.name;
    std::replace(flag.begin() + 2, flag.end(), '_', '-');
    if (given(flag)) continue;
    if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "false")) {
      if (item.inputs[0] == "true") out.push_back(flag);
      continue;
    }
    std::string joined;
    for (const auto& v : item.inputs) joined += (joined.empty() ? "" : ",") + v;
    out.push_back(flag + "=" + joined);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"porenet: symmetry-aware message passing for zeolite frameworks"};
  app.require_subcommand(1);

  Flags fl;
  auto* inspect = app.add_subcommand("inspect", "print the symmetry sharing pattern of a framework");
  add_framework(inspect, fl);

  auto* train_cmd = app.add_subcommand("train", "train one model per seed and write checkpoints and metrics");
  add_run(train_cmd, fl);

  std::string checkpoint, data, pred_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a configurations CSV");
  add_framework(eval, fl);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--out", pred_out, "predictions CSV");

  std::size_t n_occ = 20;
  bool fault = false;
  auto* equiv = app.add_subcommand("equivcheck", "check equivariance of a freshly initialised model");
  add_framework(equiv, fl);
  add_model(equiv, fl);
  equiv->add_option("--seed", fl.seed)->capture_default_str();
  equiv->add_option("--configs", n_occ, "random occupancies")->capture_default_str();
  equiv->add_flag("--inject-fault", fault, "desynchronise one weight bank inside an orbit");

  std::string synth_out = "synth.csv", oracle_out;
  auto* gen = app.add_subcommand("gen-synth", "write labelled configurations from the synthetic invariant oracle");
  add_framework(gen, fl);
  gen->add_option("--synth", fl.synth_spec, "comma list of key=value: n, max_al, oracle_seed, data_seed, noise, pore_term");
  gen->add_option("--out", synth_out)->capture_default_str();
  gen->add_option("--oracle-out", oracle_out, "write the oracle weights as JSON");

  std::vector<double> fractions = default_fractions();
  auto* eff = app.add_subcommand("data-efficiency", "train on nested fractions of the training split");
  add_run(eff, fl);
  eff->add_option("--fractions", fractions)->delimiter(',');

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*inspect) return cmd_inspect(fl);
    if (*train_cmd) return cmd_train(fl);
    if (*eval) return cmd_eval(fl, checkpoint, data, pred_out);
    if (*equiv) return cmd_equivcheck(fl, n_occ, fault);
    if (*gen) return cmd_gen_synth(fl, synth_out, oracle_out);
    if (*eff) return cmd_data_efficiency(fl, fractions);
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ValidationError& e) {
    std::cerr << "invalid: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
