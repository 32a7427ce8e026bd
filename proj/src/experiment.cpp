#include "hyperst/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "csv.hpp"

namespace hyperst {

using nlohmann::json;

void ExperimentConfig::validate() const {
  if (dataset_path.has_value() == generator.has_value()) {
    throw std::invalid_argument("experiment config: dataset needs exactly one of 'path' or 'generator'");
  }
  if (generator) generator->validate();
  train.validate();
  split.validate();
  if (output_dir.empty()) throw std::invalid_argument("experiment config: output_dir must be set");
}

std::string ExperimentConfig::label() const {
  if (!name.empty()) return name;
  return model.value("kind", std::string("hyperst-lstm-d"));
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw std::invalid_argument("experiment config: expected a JSON object");
  ExperimentConfig c;
  c.name = j.value("name", std::string());
  c.seed = j.value("seed", c.seed);
  if (!j.contains("dataset")) throw std::invalid_argument("experiment config: missing 'dataset'");
  const json& d = j["dataset"];
  if (d.contains("path")) {
    std::filesystem::path p = d["path"].get<std::string>();
    c.dataset_path = p.is_relative() ? base_dir / p : p;
  }
  if (d.contains("generator")) c.generator = generator_config_from_json(d["generator"]);
  if (j.contains("model")) c.model = j["model"];
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("split")) c.split.ratios = j["split"].at("ratios").get<std::vector<double>>();
  if (j.contains("output_dir")) {
    std::filesystem::path p = j["output_dir"].get<std::string>();
    c.output_dir = p.is_relative() ? base_dir / p : p;
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(path.string() + ": cannot open config");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": invalid JSON: " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

json to_json(const ExperimentConfig& c) {
  json j{{"name", c.name},
         {"seed", c.seed},
         {"model", c.model},
         {"train", to_json(c.train)},
         {"split", {{"ratios", c.split.ratios}}},
         {"output_dir", c.output_dir.string()}};
  if (c.dataset_path) j["dataset"] = {{"path", c.dataset_path->string()}};
  if (c.generator) j["dataset"] = {{"generator", to_json(*c.generator)}};
  return j;
}

Dataset materialize_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  return cfg.dataset_path ? load_dataset(*cfg.dataset_path) : generate_synthetic(*cfg.generator);
}

std::string dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Tensor* t : {&ds.spatial, &ds.temporal, &ds.labels}) {
    for (auto e : t->shape()) mix(&e, sizeof e);
    mix(t->raw(), t->numel() * sizeof(double));
  }
  mix(ds.timestamps.data(), ds.timestamps.size() * sizeof(std::int64_t));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelSpec resolve_model_spec(const json& model, const Dataset& ds) {
  json m = model;
  const auto set_dim = [&](const char* key, std::size_t value) {
    if (m.contains(key) && m[key].get<std::size_t>() != value) {
      throw std::invalid_argument(std::string("model.") + key + "=" + std::to_string(m[key].get<std::size_t>()) +
                                  " disagrees with the dataset (" + std::to_string(value) + ")");
    }
    m[key] = value;
  };
  set_dim("spatial_dim", ds.spatial_dim());
  set_dim("temporal_dim", ds.temporal_dim());
  set_dim("label_dim", ds.label_dim());
  const ModelKind kind = parse_model_kind(m.value("kind", std::string("hyperst-lstm-d")));
  if (is_grid_kind(kind)) {
    if (!ds.grid) throw std::invalid_argument(to_string(kind) + " needs a gridded dataset");
    set_dim("grid", *ds.grid);
  }
  return model_spec_from_json(m);
}

PreparedData prepare(const ExperimentConfig& cfg) {
  PreparedData d;
  d.raw = materialize_dataset(cfg);
  d.fingerprint = dataset_fingerprint(d.raw);
  d.spec = resolve_model_spec(cfg.model, d.raw);
  const auto len = cfg.split.lengths(d.raw.steps());
  d.normalizer = Normalizer::fit(d.raw, len[0]);
  const WindowLayout layout = is_grid_kind(d.spec.kind) ? WindowLayout::grid : WindowLayout::per_object;
  d.windows = split_windows(d.normalizer.apply(d.raw), cfg.split, d.spec.window, d.spec.horizon, layout);
  return d;
}

namespace {

json counts_json(const ParamCounts& c) {
  return json{{"learned", c.learned},     {"hypernet", c.hypernet}, {"head_bias", c.head_bias},
              {"trunk", c.trunk},         {"generated", c.generated}, {"total", c.total()}};
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, prepare(cfg)); }

ExperimentResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data) {
  for (const auto& w : data.normalizer.warnings) std::cerr << "warning: " << w << '\n';
  Model model = Model::build(data.spec, cfg.seed);
  model.set_normalizer(data.normalizer);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  ExperimentResult r;
  r.fingerprint = data.fingerprint;
  r.output_dir = cfg.output_dir;
  r.training = train(model, data.windows.train, data.windows.val, tc);
  r.metrics.epochs = r.training.history.size();
  r.metrics.best_epoch = r.training.best_epoch;
  r.metrics.wall_seconds = r.training.wall_seconds;
  r.metrics.splits["train"] = evaluate(model, data.windows.train);
  r.metrics.splits["val"] = evaluate(model, data.windows.val);
  r.metrics.splits["test"] = evaluate(model, data.windows.test);

  std::filesystem::create_directories(cfg.output_dir);
  save_checkpoint(model, cfg.output_dir / "checkpoint");
  write_history_csv(r.training.history, cfg.output_dir / "history.csv");
  json metrics = to_json(r.metrics);
  metrics["name"] = cfg.label();
  metrics["kind"] = to_string(data.spec.kind);
  metrics["seed"] = cfg.seed;
  metrics["dataset_fingerprint"] = data.fingerprint;
  metrics["param_counts"] = counts_json(model.count_params());
  write_json(cfg.output_dir / "metrics.json", metrics);
  write_json(cfg.output_dir / "run_info.json",
             json{{"wall_seconds", r.training.wall_seconds}, {"warnings", data.normalizer.warnings},
                  {"config", to_json(cfg)}});
  return r;
}

// ---------------------------------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double improvement_pct(double mae, double baseline_mae) {
  if (!(baseline_mae > 0.0)) throw std::invalid_argument("improvement: baseline MAE must be positive");
  return (1.0 - mae / baseline_mae) * 100.0;
}

std::vector<ComparisonRow> compare(const std::vector<ExperimentConfig>& configs, const std::vector<std::uint64_t>& seeds,
                                   const std::filesystem::path& out_dir) {
  if (configs.size() < 2) throw std::invalid_argument("compare: need at least two configs");
  if (seeds.empty()) throw std::invalid_argument("compare: need at least one seed");

  std::vector<PreparedData> prepared;
  for (const auto& c : configs) {
    prepared.push_back(prepare(c));
    if (prepared.back().fingerprint != prepared.front().fingerprint) {
      throw std::invalid_argument("compare: '" + c.label() + "' uses a different dataset than '" +
                                  configs.front().label() + "'");
    }
  }

  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    ComparisonRow row;
    row.label = configs[i].label();
    row.kind = to_string(prepared[i].spec.kind);
    for (auto seed : seeds) {
      ExperimentConfig c = configs[i];
      c.seed = seed;
      c.output_dir = configs[i].output_dir / ("seed" + std::to_string(seed));
      const auto r = run_experiment(c, prepared[i]);
      row.seeds.push_back(seed);
      row.test_mae.push_back(r.metrics.splits.at("test").mae);
      row.test_rmse.push_back(r.metrics.splits.at("test").rmse);
    }
    row.median_mae = median(row.test_mae);
    row.median_rmse = median(row.test_rmse);
    rows.push_back(std::move(row));
  }

  std::size_t base = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].kind == "lstm") {
      base = i;
      break;
    }
  for (auto& r : rows) r.improvement_pct = improvement_pct(r.median_mae, rows[base].median_mae);

  std::filesystem::create_directories(out_dir);
  write_comparison_csv(rows, out_dir / "comparison.csv");
  return rows;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::filesystem::path& path) {
  csv::Writer w(path, {"model", "kind", "seeds", "test_mae", "test_rmse", "improvement_pct"});
  for (const auto& r : rows) {
    w.begin_row();
    w.field(r.label);
    w.field(r.kind);
    w.field(static_cast<std::int64_t>(r.seeds.size()));
    w.field(r.median_mae);
    w.field(r.median_rmse);
    w.field(r.improvement_pct);
    w.end_row();
  }
}

std::string format_comparison(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "model" << std::setw(16) << "kind" << std::right << std::setw(12) << "test_mae"
      << std::setw(12) << "test_rmse" << std::setw(14) << "improvement" << '\n';
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(20) << r.label << std::setw(16) << r.kind << std::right << std::setprecision(5)
        << std::setw(12) << r.median_mae << std::setw(12) << r.median_rmse << std::setprecision(2) << std::setw(13)
        << r.improvement_pct << "%\n";
  }
  return out.str();
}

}  // namespace hyperst
