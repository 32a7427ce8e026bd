#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hyperst/ops.hpp"
#include "hyperst/params.hpp"

namespace hyperst {

/**
 * Parameter accounting for one layer or model.
 *
 * `hypernet` counts only the weight matrices of generation heads (d entries
 * per generated scalar), which is the term in the closed forms. Head biases
 * and the shared spatial trunk are reported separately.
 */
struct ParamCounts {
  std::size_t learned = 0;    // temporal-module tensors learned directly (W', U', plain layers)
  std::size_t hypernet = 0;   // generation-head weights
  std::size_t head_bias = 0;  // generation-head biases
  std::size_t trunk = 0;      // spatial embedding trunk
  std::size_t generated = 0;  // generated values per object (not parameters)

  std::size_t total() const { return learned + hypernet + head_bias + trunk; }
  ParamCounts& operator+=(const ParamCounts& o);
  friend bool operator==(const ParamCounts&, const ParamCounts&) = default;
};

namespace closed_form {
/// General layer: every entry of theta_k is produced by a dense layer from d inputs.
inline std::size_t general_hypernet(std::size_t d, std::size_t n_theta) { return d * n_theta; }
/// HyperST-Dense: z head plus the learned W'.
inline std::size_t dense(std::size_t d, std::size_t n_in, std::size_t n_out) { return d * n_in + n_in * n_out; }
/// HyperST-Conv: z head over output channels plus the learned kernel W'.
inline std::size_t conv(std::size_t d, std::size_t n_out, std::size_t n_in, std::size_t h, std::size_t w) {
  return d * n_out + n_out * n_in * h * w;
}
}  // namespace closed_form

/// Fully connected map x[B×in] -> [B×out]. Weights are uniform in ±sqrt(1/in).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;
  std::optional<std::size_t> bias;

  static DenseLayer create(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                           bool with_bias, std::uint64_t seed);
  Var forward(const BoundParams& p, Var x) const;
  std::size_t numel() const { return in * out + (bias ? out : 0); }
};

/**
 * First stage of the spatial module: s[B×D_s] -> hidden[B×d].
 * tanh between layers, linear output, so d equals the last width.
 */
struct SpatialTrunk {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  static SpatialTrunk create(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                             const std::vector<std::size_t>& widths, std::uint64_t seed);
  std::size_t output_dim() const { return layers.empty() ? input_dim : layers.back().out; }
  Var embed(const BoundParams& p, Var s) const;
  std::size_t numel() const;
};

/**
 * Second stage of the spatial module: one independent linear map from the
 * hidden vector to one target parameter, reshaped to [B, target_shape...].
 */
struct GenerationHead {
  std::string target;
  Shape target_shape;
  DenseLayer map;

  /// Zero weights and a constant bias: 1 for scaling heads, 0 for generated biases.
  static GenerationHead create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                               Shape target_shape, double bias_value, bool with_bias = true);
  /// Zero weights and an explicit starting value for the generated tensor.
  static GenerationHead create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                               const Tensor& start_value);

  Var generate(const BoundParams& p, Var hidden) const;
  std::size_t target_numel() const { return numel(target_shape); }
  ParamCounts count() const;
};

// ---------------------------------------------------------------------------
// General HyperST layer: every parameter of a dense f_k is generated.

/// y[b] = x[b] · theta[b] (+ bias[b]); theta: [B×N_in×N_out].
Var general_hyperst_forward(Var x, Var theta, std::optional<Var> bias = std::nullopt);

struct GeneralHyperDense {
  std::size_t in = 0;
  std::size_t out = 0;
  GenerationHead weight;
  std::optional<GenerationHead> bias;

  static GeneralHyperDense create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                                  std::size_t in, std::size_t out, bool generate_bias, std::uint64_t seed);
  Var forward(const BoundParams& p, Var x, Var hidden) const;
  ParamCounts count() const;
};

// ---------------------------------------------------------------------------
// HyperST-Dense: W = diag(z) W', applied as (z ∘ x) W' without forming diag(z).

/// y = (z ∘ x)·W' + b for x, z: [B×N_in], b: [B×N_out], W': [N_in×N_out].
Var hyperst_dense_forward(Var x, Var z, std::optional<Var> b, Var w_prime);

struct HyperDense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;
  GenerationHead z;
  std::optional<GenerationHead> b;

  static HyperDense create(ParamSet& params, const std::string& name, std::size_t hidden_dim, std::size_t in,
                           std::size_t out, bool generate_bias, bool head_bias, std::uint64_t seed);
  Var forward(const BoundParams& p, Var x, Var hidden) const;
  ParamCounts count() const;
};

// ---------------------------------------------------------------------------
// LSTM cells. Gate order in every array is forget, input, output, cell.

inline constexpr std::array<const char*, 4> kGateNames{"f", "i", "o", "c"};

struct LstmState {
  Var h;
  Var c;
};

struct LstmWeights {
  std::array<Var, 4> W;  // [D×H]
  std::array<Var, 4> U;  // [H×H]
};

/// Standard cell. Biases may be [H] (shared) or [B×H] (per row).
LstmState lstm_step(Var x, const LstmState& prev, const LstmWeights& w, const std::array<Var, 4>& b);

/**
 * HyperST-LSTM-D cell:
 *   gate_g = act(W_gᵀ diag(z_{2g}) x + U_gᵀ diag(z_{2g+1}) h + b_g)
 *   c' = f ∘ c + i ∘ c~,  h' = o ∘ tanh(c')
 * z_{even}: [B×D], z_{odd}: [B×H], b: [B×H].
 */
LstmState hyperst_lstm_step(Var x, const LstmState& prev, const LstmWeights& w, const std::array<Var, 8>& z,
                            const std::array<Var, 4>& b);

/// HyperST-LSTM-G cell with per-row generated W [B×D×H], U [B×H×H], b [B×H].
LstmState generated_lstm_step(Var x, const LstmState& prev, const std::array<Var, 4>& W,
                              const std::array<Var, 4>& U, const std::array<Var, 4>& b);

struct LstmLayer {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::array<std::size_t, 4> W{}, U{}, b{};

  static LstmLayer create(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                          std::uint64_t seed);
  LstmWeights weights(const BoundParams& p) const;
  std::array<Var, 4> biases(const BoundParams& p) const;
  ParamCounts count() const;
};

struct HyperLstmDLayer {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::array<std::size_t, 4> W{}, U{};
  std::vector<GenerationHead> z;  // 8 heads, z0..z7
  std::vector<GenerationHead> b;  // 4 heads, b_f..b_c

  static HyperLstmDLayer create(ParamSet& params, const std::string& prefix, std::size_t hidden_dim,
                                std::size_t in, std::size_t hidden, std::uint64_t seed);
  LstmWeights weights(const BoundParams& p) const;
  ParamCounts count() const;
};

struct HyperLstmGLayer {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::vector<GenerationHead> W;  // 4 heads -> [D×H]
  std::vector<GenerationHead> U;  // 4 heads -> [H×H]
  std::vector<GenerationHead> b;  // 4 heads -> [H]

  /// Heads start at the weights a plain LstmLayer with the same prefix and seed would draw.
  static HyperLstmGLayer create(ParamSet& params, const std::string& prefix, std::size_t hidden_dim,
                                std::size_t in, std::size_t hidden, std::uint64_t seed);
  ParamCounts count() const;
};

// ---------------------------------------------------------------------------
// HyperST-Conv.

/// X_out = (diag(z)·W') * X_in, computed as conv with W' followed by scaling output channels by z.
Var hyperst_conv_forward(Var x, Var z, Var w_prime, ops::Padding padding = ops::Padding::same);

/// X_out^{i,j} = diag(z^{i,j}) (W' * X_in^{<i,j>}); Z is [H_o×W_o×C_out].
Var location_hyperst_conv_forward(Var x, Var Z, Var w_prime, ops::Padding padding = ops::Padding::same);

struct ConvLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::size_t kernel = 0;
  std::optional<std::size_t> bias;

  static ConvLayer create(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                          std::size_t kh, std::size_t kw, bool with_bias, std::uint64_t seed);
  /// Plain convolution with "same" padding plus bias.
  Var forward(const BoundParams& p, Var x) const;
  std::size_t numel() const { return out * in * kh * kw + (bias ? out : 0); }
};

/// One z for the whole input (per object).
struct HyperConv {
  ConvLayer conv;  // W' and optional learned bias
  GenerationHead z;

  static HyperConv create(ParamSet& params, const std::string& name, std::size_t hidden_dim, std::size_t in,
                          std::size_t out, std::size_t kh, std::size_t kw, bool with_bias, bool head_bias,
                          std::uint64_t seed);
  /// hidden: [1×d].
  Var forward(const BoundParams& p, Var x, Var hidden) const;
  ParamCounts count() const;
};

/// One z per grid cell, generated from that cell's hidden vector.
struct LocationHyperConv {
  ConvLayer conv;
  GenerationHead z;

  static LocationHyperConv create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                                  std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, bool with_bias,
                                  std::uint64_t seed);
  /// x: [C_in×G×G]; cell_hidden: [G²×d], row r·G+c for cell (r, c).
  Var forward(const BoundParams& p, Var x, Var cell_hidden) const;
  ParamCounts count() const;
};

}  // namespace hyperst
