#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperst/data.hpp"
#include "hyperst/model.hpp"
#include "hyperst/training.hpp"

namespace hyperst {

/**
 * One experiment, read from a single JSON file:
 *
 *   {
 *     "name": "hyper-a1",
 *     "seed": 0,
 *     "dataset": {"path": "data/manifest.json"}   or   {"generator": {...}},
 *     "model": {"kind": "hyperst-lstm-d", "trunk_widths": [16, 8, 4], "temporal_widths": [16], ...},
 *     "train": {"optimizer": "adam", "lr": 0.003, ...},
 *     "split": {"ratios": [8, 1, 1]},
 *     "output_dir": "runs/hyper-a1"
 *   }
 *
 * Model input dims and the grid size come from the dataset. The experiment
 * seed drives both model initialization and batch order.
 */
struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> dataset_path;
  std::optional<GeneratorConfig> generator;
  nlohmann::json model = nlohmann::json::object();
  TrainConfig train;
  SplitSpec split;
  std::filesystem::path output_dir = "runs/experiment";

  void validate() const;
  std::string label() const;
};

/// Relative paths in the file are resolved against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Loads or generates the dataset described by the config.
Dataset materialize_dataset(const ExperimentConfig& cfg);
/// Hex digest of a dataset's shapes and values.
std::string dataset_fingerprint(const Dataset& ds);
/// Fills model dims from the dataset; dims given explicitly must agree with it.
ModelSpec resolve_model_spec(const nlohmann::json& model, const Dataset& ds);

struct PreparedData {
  Dataset raw;
  Normalizer normalizer;
  WindowSplits windows;
  ModelSpec spec;
  std::string fingerprint;
};

PreparedData prepare(const ExperimentConfig& cfg);

struct ExperimentResult {
  MetricsReport metrics;
  TrainResult training;
  std::string fingerprint;
  std::filesystem::path output_dir;
};

/**
 * Trains and evaluates. Writes under cfg.output_dir: checkpoint/, history.csv,
 * metrics.json (deterministic per seed) and run_info.json (wall time, warnings).
 */
ExperimentResult run_experiment(const ExperimentConfig& cfg);
/// Same, with already prepared data.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data);

struct ComparisonRow {
  std::string label;
  std::string kind;
  std::vector<std::uint64_t> seeds;
  std::vector<double> test_mae;  // one per seed
  std::vector<double> test_rmse;
  double median_mae = 0.0;
  double median_rmse = 0.0;
  double improvement_pct = 0.0;  // (1 - MAE / baseline MAE)·100
};

double median(std::vector<double> values);
/// Percent improvement of `mae` over `baseline_mae`; lower MAE gives a positive value.
double improvement_pct(double mae, double baseline_mae);

/**
 * Trains every config once per seed (each in <output_dir>/seed<k>) and
 * compares median test MAE against the baseline: the first plain-LSTM config,
 * or the first config when there is none. All configs must resolve to the same
 * dataset. Writes comparison.csv into `out_dir`.
 */
std::vector<ComparisonRow> compare(const std::vector<ExperimentConfig>& configs, const std::vector<std::uint64_t>& seeds,
                                   const std::filesystem::path& out_dir);

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::filesystem::path& path);
std::string format_comparison(const std::vector<ComparisonRow>& rows);

}  // namespace hyperst
