#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperst/tensor.hpp"

namespace hyperst {

/**
 * N objects observed over M time steps.
 *   spatial  [N×D_s]    static attributes s_i
 *   temporal [N×M×D_T]  time-varying inputs
 *   labels   [N×M×D_L]  prediction targets
 * When `grid` is set, object r·G+c is cell (r, c) and G² == N.
 */
struct Dataset {
  std::string name = "dataset";
  Tensor spatial;
  Tensor temporal;
  Tensor labels;
  std::vector<std::int64_t> timestamps;
  std::optional<std::size_t> grid;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t objects() const { return spatial.extent(0); }
  std::size_t steps() const { return temporal.extent(1); }
  std::size_t spatial_dim() const { return spatial.extent(1); }
  std::size_t temporal_dim() const { return temporal.extent(2); }
  std::size_t label_dim() const { return labels.extent(2); }

  /// Throws std::invalid_argument naming the violated invariant.
  void validate() const;
};

/// Synthetic benchmark in which spatial attributes determine each object's daily dynamics.
struct GeneratorConfig {
  std::size_t objects = 64;
  std::size_t steps = 2000;
  std::size_t spatial_dim = 8;
  std::size_t archetypes = 2;
  double alpha = 1.0;  // causal strength: weight of the attribute-driven component
  double sigma = 0.1;  // observation noise
  std::uint64_t seed = 0;
  std::size_t period = 24;
  double sharpness = 3.0;         // concentration of the daily activity bumps
  double attribute_noise = 0.05;  // noise added to s on top of the archetype signature
  std::optional<std::size_t> grid;

  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

/// Peak hour of archetype k's daily profile: 8 (business, morning) and 19 (residential, evening) for the first two.
double archetype_peak(std::size_t k, std::size_t period);
/// Daily profile value of archetype k at time-of-day tau.
double archetype_profile(std::size_t k, double tau, std::size_t period, double sharpness);

/**
 * Generates a dataset:
 *   pi_i ~ U(0,1)^K  per object (independent archetype intensities)
 *   s_i  = A·pi_i + attribute_noise·N(0, I)           (A: K×D_s archetype signatures)
 *   x_i(t) = alpha·Σ_k pi_ik p_k(t) + (1-alpha)·p_shared(t) + sigma·N(0,1)
 * temporal channels are (x, sin, cos of time of day); the label is x.
 * The latent pi is stored in metadata["latent_pi"].
 */
Dataset generate_synthetic(const GeneratorConfig& cfg);

/// Writes manifest.json plus spatial.csv, temporal.csv and labels.csv into `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Reads a dataset from its manifest.json. Throws std::runtime_error naming the bad file.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Chronological partition of the time axis, e.g. {8,1,1}.
struct SplitSpec {
  std::vector<double> ratios{8.0, 1.0, 1.0};

  void validate() const;
  /// Lengths of train/val/test for M steps. The last partition takes the remainder.
  std::array<std::size_t, 3> lengths(std::size_t steps) const;
};

/// One training example. For per-object windows: spatial [D_s], input [w×D_T], label [h×D_L].
/// For grid windows: spatial [N×D_s], input [w×N×D_T], label [h×N×D_L].
struct SampleWindow {
  std::size_t object = 0;  // unused for grid windows
  std::size_t start = 0;   // first time step of the input
  Tensor spatial;
  Tensor input;
  Tensor label;
};

struct WindowSplits {
  std::vector<SampleWindow> train;
  std::vector<SampleWindow> val;
  std::vector<SampleWindow> test;
};

enum class WindowLayout { per_object, grid };

/// Stride-1 windows inside each partition; no window reads across a boundary.
WindowSplits split_windows(const Dataset& ds, const SplitSpec& split, std::size_t window, std::size_t horizon,
                           WindowLayout layout = WindowLayout::per_object);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // 1 for zero-variance channels
};

/// z-score transform fitted on the training time range only.
struct Normalizer {
  ChannelStats spatial;
  ChannelStats temporal;
  ChannelStats labels;
  std::vector<std::string> warnings;

  static Normalizer fit(const Dataset& ds, std::size_t train_steps);
  static Normalizer identity(std::size_t spatial_dim, std::size_t temporal_dim, std::size_t label_dim);

  Dataset apply(const Dataset& ds) const;
  /// Inverse transform of label values laid out with the label channel last.
  Tensor denormalize_labels(const Tensor& labels) const;
  Tensor normalize_labels(const Tensor& labels) const;
  Tensor normalize_spatial(const Tensor& spatial) const;
  Tensor normalize_temporal(const Tensor& temporal) const;
};

nlohmann::json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

}  // namespace hyperst
