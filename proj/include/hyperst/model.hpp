#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyperst/data.hpp"
#include "hyperst/layers.hpp"

namespace hyperst {

enum class ModelKind { lstm, st_lstm, hyperst_lstm_d, hyperst_lstm_g, cnn, st_cnn, hyperst_cnn };

std::string to_string(ModelKind kind);
/// Accepts the hyphenated names: lstm, st-lstm, hyperst-lstm-d, hyperst-lstm-g, cnn, st-cnn, hyperst-cnn.
ModelKind parse_model_kind(std::string_view name);
bool is_grid_kind(ModelKind kind);
bool uses_spatial(ModelKind kind);

struct ModelSpec {
  ModelKind kind = ModelKind::hyperst_lstm_d;
  std::vector<std::size_t> trunk_widths{16, 8, 4};
  std::vector<std::size_t> temporal_widths{32, 32};  // LSTM hidden sizes, or conv channels for grid kinds
  std::size_t spatial_dim = 8;
  std::size_t temporal_dim = 3;
  std::size_t label_dim = 1;
  std::size_t window = 12;
  std::size_t horizon = 1;
  std::size_t grid = 0;    // G for grid kinds
  std::size_t kernel = 3;  // conv kernel size for grid kinds
  bool head_bias = true;   // generation heads carry a bias term

  void validate() const;
  /// Number of predicted values per sample: h·D_L, or h·G²·D_L for grid kinds.
  std::size_t output_size() const;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Stacked windows. Per-object: spatial [B×D_s], input [B×w×D_T], label [B×h×D_L].
/// Grid: spatial [B×N×D_s], input [B×w×N×D_T], label [B×h×N×D_L].
struct Batch {
  Tensor spatial;
  Tensor input;
  Tensor label;

  std::size_t size() const { return input.extent(0); }
};

Batch make_batch(const std::vector<SampleWindow>& windows, std::span<const std::size_t> indices);
Batch make_batch(const std::vector<SampleWindow>& windows);

/// Topology of a forecasting network. Holds parameter indices, never values.
class Network {
 public:
  virtual ~Network() = default;
  /// Predictions in normalized units, flattened to [B × (outputs per sample)].
  virtual Var forward(const BoundParams& p, const Tensor& spatial, const Tensor& input) const = 0;
  virtual ParamCounts count() const = 0;
  virtual const SpatialTrunk* trunk() const { return nullptr; }
  /// Generated parameters for each row of hidden [B×d], keyed by target name.
  virtual std::vector<std::pair<std::string, Var>> generate(const BoundParams&, Var) const { return {}; }
};

class Model {
 public:
  static Model build(const ModelSpec& spec, std::uint64_t seed);
  /// Wraps a hand-made network; such models cannot be checkpointed.
  static Model custom(ModelSpec spec, std::shared_ptr<const Network> network, ParamSet params);

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const Network& network() const { return *network_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n) { normalizer_ = std::move(n); }
  bool is_custom() const { return custom_; }

  Var forward(const BoundParams& p, const Batch& batch) const;
  /// Inference in normalized units, [B × outputs].
  Tensor predict(const Batch& batch) const;

  /**
   * Raw-unit forecast for one sample. Per-object: s [D_s], window [w×D_T] -> [h×D_L].
   * Grid: s [N×D_s], window [w×N×D_T] -> [h×N×D_L].
   */
  Tensor forecast(const Tensor& s, const Tensor& window) const;

  /// Generated temporal-module parameters for each row of raw attributes S [B×D_s].
  std::map<std::string, Tensor> generated_params(const Tensor& S) const;
  /// Trunk hidden vectors for raw attributes S [N×D_s] -> [N×d].
  Tensor embed(const Tensor& S) const;

  ParamCounts count_params() const { return network_->count(); }
  bool has_spatial_module() const { return network_->trunk() != nullptr; }

 private:
  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const Network> network_;
  ParamSet params_;
  Normalizer normalizer_;
  bool custom_ = false;
};

/// Writes dir/manifest.json and dir/weights.bin (little-endian f64, row-major, manifest order).
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
/// Rebuilds the model from its spec and validates every tensor against the manifest.
Model load_checkpoint(const std::filesystem::path& dir);

/// CSV with header object_id,e0..e{d-1}: one row per object of raw attributes S.
void export_embeddings(const Model& model, const Tensor& S, const std::filesystem::path& path);

}  // namespace hyperst
