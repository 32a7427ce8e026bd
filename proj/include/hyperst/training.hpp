#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperst/model.hpp"

namespace hyperst {

/// ½‖pred − label‖² summed per sample and averaged over the batch (leading axis).
Var squared_error_loss(Var pred, Var label);

enum class OptimizerKind { adam, sgd_momentum };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double clip = 5.0;       // global gradient-norm clip
  double momentum = 0.9;   // sgd-momentum only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t windows_per_epoch = 0;  // 0: every training window each epoch

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Raised when the training loss stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  double wall_seconds = 0.0;
};

/**
 * Mini-batch training on normalized windows. Keeps the parameters from the
 * epoch with the lowest validation MAE and stops after `patience` epochs
 * without improvement. Deterministic for a given seed.
 */
TrainResult train(Model& model, const std::vector<SampleWindow>& train_set, const std::vector<SampleWindow>& val_set,
                  const TrainConfig& cfg);

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

struct SplitMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<double> mae_per_horizon;
  std::vector<double> rmse_per_horizon;
  std::size_t windows = 0;
};

/// Errors in original label units (the model's normalizer is inverted first).
SplitMetrics evaluate(const Model& model, const std::vector<SampleWindow>& windows);
/// Metrics from raw errors laid out as [windows × horizon × rest].
SplitMetrics metrics_from_errors(const Tensor& errors);

struct MetricsReport {
  std::map<std::string, SplitMetrics> splits;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const SplitMetrics& m);
nlohmann::json to_json(const MetricsReport& r);

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::string kind;
  double tolerance = 0.0;
  std::vector<TensorCheck> tensors;

  bool passed() const;
  double worst() const;
  /// Names and errors of tensors over tolerance.
  std::string failures() const;
};

/// A small spec of the given kind whose finite-difference check runs in well under a second.
ModelSpec tiny_spec(ModelKind kind);

/**
 * Compares backward() against central differences of the full loss for every
 * learned tensor. Heads and biases are randomized first so that no tensor
 * sits at its special initial value.
 */
GradCheckReport grad_check(const ModelSpec& spec, double tolerance = 1e-4, std::uint64_t seed = 0);

}  // namespace hyperst
