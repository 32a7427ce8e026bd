#include "hyperst/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "hyperst/experiment.hpp"
#include "hyperst/verify.hpp"

namespace hyperst {

using nlohmann::json;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("HYPERST_SEED");
  if (!v || !*v) return std::nullopt;
  std::uint64_t s = 0;
  const auto [ptr, ec] = std::from_chars(v, v + std::strlen(v), s);
  if (ec != std::errc() || *ptr != '\0') throw std::invalid_argument(std::string("HYPERST_SEED is not an integer: ") + v);
  return s;
}

/// Flag beats HYPERST_SEED, which beats the config file.
ExperimentConfig load_with_overrides(const std::string& path, const Overrides& o) {
  ExperimentConfig cfg = load_experiment_config(path);
  if (auto s = env_seed()) cfg.seed = *s;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  return cfg;
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << j.dump(2) << '\n';
}

void print_metrics(std::ostream& out, const std::string& split, const SplitMetrics& m) {
  out << "  " << std::left << std::setw(6) << split << " MAE " << std::fixed << std::setprecision(6) << m.mae
      << "  RMSE " << m.rmse << "  (" << m.windows << " windows)\n";
  out.unsetf(std::ios::fixed);
}

int cmd_gen_data(const std::string& config, const Overrides& o, std::ostream& out) {
  ExperimentConfig cfg = load_with_overrides(config, {std::nullopt, o.output_dir});
  if (!cfg.generator) throw std::invalid_argument("gen-data: config has no dataset.generator section");
  GeneratorConfig g = *cfg.generator;
  if (auto s = env_seed()) g.seed = *s;
  if (o.seed) g.seed = *o.seed;
  const Dataset ds = generate_synthetic(g);
  const auto dir = cfg.output_dir / "dataset";
  save_dataset(ds, dir);
  out << "dataset " << ds.name << ": N=" << ds.objects() << " M=" << ds.steps() << " D_s=" << ds.spatial_dim()
      << " D_T=" << ds.temporal_dim() << " D_L=" << ds.label_dim() << " alpha=" << g.alpha;
  if (ds.grid) out << " grid=" << *ds.grid << "x" << *ds.grid;
  out << "\n  written to " << (dir / "manifest.json").string() << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config, const Overrides& o, std::ostream& out) {
  const ExperimentConfig cfg = load_with_overrides(config, o);
  const auto r = run_experiment(cfg);
  out << cfg.label() << " (seed " << cfg.seed << "): " << r.metrics.epochs << " epochs, best epoch "
      << r.metrics.best_epoch << ", " << std::setprecision(3) << r.training.wall_seconds << " s\n";
  out << std::setprecision(6);
  for (const auto& [name, m] : r.metrics.splits) print_metrics(out, name, m);
  out << "  outputs in " << cfg.output_dir.string() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& config, const std::string& checkpoint, const Overrides& o, std::ostream& out) {
  const ExperimentConfig cfg = load_with_overrides(config, o);
  const Model model = load_checkpoint(checkpoint.empty() ? cfg.output_dir / "checkpoint" : std::filesystem::path(checkpoint));
  const PreparedData data = prepare(cfg);
  if (to_json(model.spec()) != to_json(data.spec)) {
    throw std::invalid_argument("eval: checkpoint spec does not match the config's model section");
  }
  MetricsReport report;
  report.splits["train"] = evaluate(model, data.windows.train);
  report.splits["val"] = evaluate(model, data.windows.val);
  report.splits["test"] = evaluate(model, data.windows.test);
  json j = to_json(report);
  j.erase("epochs");
  j.erase("best_epoch");
  j["dataset_fingerprint"] = data.fingerprint;
  write_json(cfg.output_dir / "eval.json", j);
  out << cfg.label() << ":\n";
  for (const auto& [name, m] : report.splits) print_metrics(out, name, m);
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& configs, const std::vector<std::uint64_t>& seed_list,
                const Overrides& o, std::ostream& out) {
  if (configs.size() < 2) throw std::invalid_argument("compare: pass at least two --config files");
  std::vector<ExperimentConfig> cfgs;
  for (const auto& c : configs) {
    ExperimentConfig cfg = load_with_overrides(c, {o.seed, {}});
    if (!o.output_dir.empty()) cfg.output_dir = std::filesystem::path(o.output_dir) / cfg.label();
    cfgs.push_back(std::move(cfg));
  }
  std::vector<std::uint64_t> seeds = seed_list;
  if (seeds.empty()) seeds.push_back(cfgs.front().seed);
  const std::filesystem::path out_dir =
      o.output_dir.empty() ? cfgs.front().output_dir.parent_path() / "comparison" : std::filesystem::path(o.output_dir);
  const auto rows = compare(cfgs, seeds, out_dir);
  out << format_comparison(rows);
  out << "  baseline: first lstm config; median over " << seeds.size() << " seed(s); table in "
      << (out_dir / "comparison.csv").string() << '\n';
  return kExitOk;
}

int cmd_verify(const VerifyOptions& opt, std::ostream& out) {
  const auto results = run_verify_suite(opt);
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.module << " " << r.name << ": " << r.detail << '\n';
    failed += !r.passed;
  }
  out << results.size() - failed << "/" << results.size() << " checks passed";
  if (opt.fault_op) out << " (fault armed on '" << *opt.fault_op << "')";
  out << '\n';
  return failed == 0 ? kExitOk : kExitValidation;
}

int cmd_grad_check(const std::string& kind_name, const std::string& config, double tolerance, std::ostream& out) {
  std::string name = kind_name;
  if (!config.empty()) name = load_experiment_config(config).model.value("kind", std::string("hyperst-lstm-d"));
  if (name.empty()) name = "hyperst-lstm-d";
  const auto report = grad_check(tiny_spec(parse_model_kind(name)), tolerance);
  for (const auto& t : report.tensors) {
    out << (t.max_rel_error < tolerance ? "  ok   " : "  FAIL ") << std::left << std::setw(28) << t.name
        << " max rel error " << std::scientific << std::setprecision(3) << t.max_rel_error << '\n';
    out.unsetf(std::ios::scientific);
  }
  out << report.kind << ": " << (report.passed() ? "passed" : "FAILED") << " (tolerance " << tolerance << ")\n";
  return report.passed() ? kExitOk : kExitValidation;
}

int cmd_export(const std::string& checkpoint, const std::string& dataset, const std::string& config,
               const std::string& out_path, const Overrides& o, std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  if (!model.has_spatial_module()) {
    throw std::invalid_argument("export-embeddings: " + to_string(model.spec().kind) + " has no spatial module");
  }
  Dataset ds;
  std::filesystem::path target = out_path;
  if (!dataset.empty()) {
    ds = load_dataset(dataset);
  } else if (!config.empty()) {
    const ExperimentConfig cfg = load_with_overrides(config, o);
    ds = materialize_dataset(cfg);
    if (target.empty()) target = cfg.output_dir / "embeddings.csv";
  } else {
    throw std::invalid_argument("export-embeddings: pass --dataset or --config");
  }
  if (target.empty()) throw std::invalid_argument("export-embeddings: pass --out");
  export_embeddings(model, ds.spatial, target);
  out << "wrote " << ds.objects() << " embeddings of dimension " << model.network().trunk()->output_dim() << " to "
      << target.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HyperST-Net forecasting toolkit", "hyperst"};
  app.require_subcommand(1);

  Overrides ov;
  std::uint64_t seed_flag = 0;
  std::string config, checkpoint, dataset, out_path, kind, fault;
  std::vector<std::string> configs;
  std::vector<std::uint64_t> seeds;
  double tolerance = 1e-4;
  std::size_t verify_seeds = 100;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed_flag, "Override the experiment seed");
    cmd->add_option("--output-dir", ov.output_dir, "Override the output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset from a config");
  gen->add_option("--config", config, "Experiment config (JSON)")->required();
  add_common(gen);

  auto* trn = app.add_subcommand("train", "Train, evaluate and checkpoint one experiment");
  trn->add_option("--config", config, "Experiment config (JSON)")->required();
  add_common(trn);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the config's dataset");
  ev->add_option("--config", config, "Experiment config (JSON)")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory (default <output_dir>/checkpoint)");
  add_common(ev);

  auto* cmp = app.add_subcommand("compare", "Train several configs and compare test MAE against a plain LSTM");
  cmp->add_option("--config", configs, "Experiment configs (repeat)")->required();
  cmp->add_option("--seeds", seeds, "Seeds to train each config with")->delimiter(',');
  add_common(cmp);

  auto* ver = app.add_subcommand("verify", "Run the property suite");
  ver->add_option("--tolerance", tolerance, "Max relative error for gradient checks");
  ver->add_option("--seeds", verify_seeds, "Random instances per primitive gradient check");
  ver->add_option("--inject-fault", fault, "Perturb the backward rule of this op (harness self-test)");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every learned tensor of a tiny model");
  gc->add_option("--kind", kind, "Model kind");
  gc->add_option("--config", config, "Take the model kind from this config");
  gc->add_option("--tolerance", tolerance, "Max relative error");

  auto* exp = app.add_subcommand("export-embeddings", "Write the spatial embedding of every object as CSV");
  exp->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  exp->add_option("--dataset", dataset, "Dataset manifest");
  exp->add_option("--config", config, "Experiment config providing the dataset");
  exp->add_option("--out", out_path, "Output CSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    for (auto* cmd : {gen, trn, ev, cmp}) {
      if (cmd->parsed() && cmd->count("--seed")) ov.seed = seed_flag;
    }
    if (gen->parsed()) return cmd_gen_data(config, ov, out);
    if (trn->parsed()) return cmd_train(config, ov, out);
    if (ev->parsed()) return cmd_eval(config, checkpoint, ov, out);
    if (cmp->parsed()) return cmd_compare(configs, seeds, ov, out);
    if (ver->parsed()) {
      VerifyOptions opt;
      opt.tolerance = tolerance;
      opt.seeds = verify_seeds;
      if (!fault.empty()) opt.fault_op = fault;
      return cmd_verify(opt, out);
    }
    if (gc->parsed()) return cmd_grad_check(kind, config, tolerance, out);
    if (exp->parsed()) return cmd_export(checkpoint, dataset, config, out_path, ov, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: bad config value: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace hyperst
