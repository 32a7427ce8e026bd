#include "hyperst/layers.hpp"

#include <cmath>

namespace hyperst {

using ops::Padding;

ParamCounts& ParamCounts::operator+=(const ParamCounts& o) {
  learned += o.learned;
  hypernet += o.hypernet;
  head_bias += o.head_bias;
  trunk += o.trunk;
  generated += o.generated;
  return *this;
}

namespace {

Tensor init_uniform(std::uint64_t seed, const std::string& name, Shape shape, std::size_t fan_in) {
  auto rng = named_rng(seed, name);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

void expect_shape(std::string_view op, std::string_view symbol, const Var& v, const Shape& want) {
  if (v.shape() != want) {
    throw DimensionError(std::string(op) + ": " + std::string(symbol) + " must be " + to_string(want) + ", got " +
                         to_string(v.shape()));
  }
}

Var add_bias(Var pre, Var b) { return b.shape().size() == 1 ? ops::add_along(pre, b, 1) : ops::add(pre, b); }

LstmState combine_gates(const LstmState& prev, Var pf, Var pi, Var po, Var pc) {
  Var f = ops::sigmoid(pf);
  Var i = ops::sigmoid(pi);
  Var o = ops::sigmoid(po);
  Var cand = ops::tanh(pc);
  Var c = ops::add(ops::mul(f, prev.c), ops::mul(i, cand));
  Var h = ops::mul(o, ops::tanh(c));
  return {h, c};
}

void check_state(std::string_view op, const Var& x, const LstmState& prev, std::size_t& batch, std::size_t& in,
                 std::size_t& hidden) {
  if (x.shape().size() != 2) throw DimensionError(std::string(op) + ": x_t must be [B×D], got " + to_string(x.shape()));
  batch = x.shape()[0];
  in = x.shape()[1];
  if (prev.h.shape().size() != 2 || prev.h.shape()[0] != batch) {
    throw DimensionError(std::string(op) + ": h must be [B×H] with B=" + std::to_string(batch) + ", got " +
                         to_string(prev.h.shape()));
  }
  hidden = prev.h.shape()[1];
  expect_shape(op, "c", prev.c, {batch, hidden});
}

std::string gate_symbol(char kind, std::size_t g) { return std::string(1, kind) + "_" + kGateNames[g]; }

}  // namespace

// ---------------------------------------------------------------------------

DenseLayer DenseLayer::create(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                              bool with_bias, std::uint64_t seed) {
  DenseLayer d;
  d.in = in;
  d.out = out;
  d.weight = params.add(name + ".weight", init_uniform(seed, name + ".weight", {in, out}, in));
  if (with_bias) d.bias = params.add(name + ".bias", Tensor::zeros({out}));
  return d;
}

Var DenseLayer::forward(const BoundParams& p, Var x) const {
  if (x.shape().size() != 2 || x.shape()[1] != in) {
    throw DimensionError("dense: input must be [B×" + std::to_string(in) + "], got " + to_string(x.shape()));
  }
  Var y = ops::matmul(x, p[weight]);
  return bias ? ops::add_along(y, p[*bias], 1) : y;
}

SpatialTrunk SpatialTrunk::create(ParamSet& params, const std::string& prefix, std::size_t input_dim,
                                  const std::vector<std::size_t>& widths, std::uint64_t seed) {
  SpatialTrunk t;
  t.input_dim = input_dim;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    t.layers.push_back(DenseLayer::create(params, prefix + "." + std::to_string(l), in, widths[l], true, seed));
    in = widths[l];
  }
  return t;
}

Var SpatialTrunk::embed(const BoundParams& p, Var s) const {
  if (s.shape().size() != 2 || s.shape()[1] != input_dim) {
    throw DimensionError("spatial_embed: attributes must be [B×" + std::to_string(input_dim) + "], got " +
                         to_string(s.shape()));
  }
  Var x = s;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = layers[l].forward(p, x);
    if (l + 1 < layers.size()) x = ops::tanh(x);
  }
  return x;
}

std::size_t SpatialTrunk::numel() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.numel();
  return n;
}

GenerationHead GenerationHead::create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                                      Shape target_shape, double bias_value, bool with_bias) {
  GenerationHead h;
  h.target = name;
  h.target_shape = std::move(target_shape);
  const std::size_t n = numel(h.target_shape);
  h.map.in = hidden_dim;
  h.map.out = n;
  h.map.weight = params.add(name + ".head.weight", Tensor::zeros({hidden_dim, n}));
  if (with_bias) h.map.bias = params.add(name + ".head.bias", Tensor({n}, bias_value));
  return h;
}

GenerationHead GenerationHead::create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                                      const Tensor& start_value) {
  GenerationHead h;
  h.target = name;
  h.target_shape = start_value.shape();
  const std::size_t n = start_value.numel();
  h.map.in = hidden_dim;
  h.map.out = n;
  h.map.weight = params.add(name + ".head.weight", Tensor::zeros({hidden_dim, n}));
  h.map.bias = params.add(name + ".head.bias", start_value.reshaped({n}));
  return h;
}

Var GenerationHead::generate(const BoundParams& p, Var hidden) const {
  if (hidden.shape().size() != 2 || hidden.shape()[1] != map.in) {
    throw DimensionError("generate(" + target + "): hidden must be [B×" + std::to_string(map.in) + "], got " +
                         to_string(hidden.shape()));
  }
  Var flat = map.forward(p, hidden);
  if (target_shape.size() == 1) return flat;
  Shape full{hidden.shape()[0]};
  full.insert(full.end(), target_shape.begin(), target_shape.end());
  return ops::reshape(flat, std::move(full));
}

ParamCounts GenerationHead::count() const {
  ParamCounts c;
  c.hypernet = map.in * map.out;
  c.head_bias = map.bias ? map.out : 0;
  c.generated = map.out;
  return c;
}

// ---------------------------------------------------------------------------

Var general_hyperst_forward(Var x, Var theta, std::optional<Var> bias) {
  if (theta.shape().size() != 3 || x.shape().size() != 2 || theta.shape()[0] != x.shape()[0] ||
      theta.shape()[1] != x.shape()[1]) {
    throw DimensionError("general_hyperst: theta " + to_string(theta.shape()) + " does not fit input " +
                         to_string(x.shape()));
  }
  Var y = ops::batched_matvec(x, theta);
  if (bias) {
    expect_shape("general_hyperst", "bias", *bias, y.shape());
    y = ops::add(y, *bias);
  }
  return y;
}

GeneralHyperDense GeneralHyperDense::create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                                            std::size_t in, std::size_t out, bool generate_bias,
                                            std::uint64_t seed) {
  GeneralHyperDense g;
  g.in = in;
  g.out = out;
  g.weight = GenerationHead::create(params, name + ".theta", hidden_dim,
                                    init_uniform(seed, name + ".weight", {in, out}, in));
  if (generate_bias) g.bias = GenerationHead::create(params, name + ".b", hidden_dim, Shape{out}, 0.0);
  return g;
}

Var GeneralHyperDense::forward(const BoundParams& p, Var x, Var hidden) const {
  Var theta = weight.generate(p, hidden);
  std::optional<Var> b;
  if (bias) b = bias->generate(p, hidden);
  return general_hyperst_forward(x, theta, b);
}

ParamCounts GeneralHyperDense::count() const {
  ParamCounts c = weight.count();
  if (bias) c += bias->count();
  return c;
}

// ---------------------------------------------------------------------------

Var hyperst_dense_forward(Var x, Var z, std::optional<Var> b, Var w_prime) {
  if (x.shape().size() != 2) throw DimensionError("hyperst_dense: x must be [B×N_in], got " + to_string(x.shape()));
  if (w_prime.shape().size() != 2 || w_prime.shape()[0] != x.shape()[1]) {
    throw DimensionError("hyperst_dense: W' must be [N_in×N_out] with N_in=" + std::to_string(x.shape()[1]) +
                         ", got " + to_string(w_prime.shape()));
  }
  expect_shape("hyperst_dense", "z", z, x.shape());
  Var y = ops::matmul(ops::mul(x, z), w_prime);
  if (b) {
    expect_shape("hyperst_dense", "b", *b, y.shape());
    y = ops::add(y, *b);
  }
  return y;
}

HyperDense HyperDense::create(ParamSet& params, const std::string& name, std::size_t hidden_dim, std::size_t in,
                              std::size_t out, bool generate_bias, bool head_bias, std::uint64_t seed) {
  HyperDense d;
  d.in = in;
  d.out = out;
  d.weight = params.add(name + ".W", init_uniform(seed, name + ".W", {in, out}, in));
  d.z = GenerationHead::create(params, name + ".z", hidden_dim, Shape{in}, 1.0, head_bias);
  if (generate_bias) d.b = GenerationHead::create(params, name + ".b", hidden_dim, Shape{out}, 0.0, head_bias);
  return d;
}

Var HyperDense::forward(const BoundParams& p, Var x, Var hidden) const {
  std::optional<Var> bias;
  if (b) bias = b->generate(p, hidden);
  return hyperst_dense_forward(x, z.generate(p, hidden), bias, p[weight]);
}

ParamCounts HyperDense::count() const {
  ParamCounts c = z.count();
  if (b) c += b->count();
  c.learned += in * out;
  return c;
}

// ---------------------------------------------------------------------------

LstmState lstm_step(Var x, const LstmState& prev, const LstmWeights& w, const std::array<Var, 4>& b) {
  std::size_t batch = 0, in = 0, hidden = 0;
  check_state("lstm_step", x, prev, batch, in, hidden);
  std::array<Var, 4> pre;
  for (std::size_t g = 0; g < 4; ++g) {
    expect_shape("lstm_step", gate_symbol('W', g), w.W[g], {in, hidden});
    expect_shape("lstm_step", gate_symbol('U', g), w.U[g], {hidden, hidden});
    if (b[g].shape() != Shape{hidden} && b[g].shape() != Shape{batch, hidden}) {
      throw DimensionError("lstm_step: " + gate_symbol('b', g) + " must be [H] or [B×H], got " +
                           to_string(b[g].shape()));
    }
    pre[g] = add_bias(ops::add(ops::matmul(x, w.W[g]), ops::matmul(prev.h, w.U[g])), b[g]);
  }
  return combine_gates(prev, pre[0], pre[1], pre[2], pre[3]);
}

LstmState hyperst_lstm_step(Var x, const LstmState& prev, const LstmWeights& w, const std::array<Var, 8>& z,
                            const std::array<Var, 4>& b) {
  std::size_t batch = 0, in = 0, hidden = 0;
  check_state("hyperst_lstm_step", x, prev, batch, in, hidden);
  std::array<Var, 4> pre;
  for (std::size_t g = 0; g < 4; ++g) {
    expect_shape("hyperst_lstm_step", gate_symbol('W', g), w.W[g], {in, hidden});
    expect_shape("hyperst_lstm_step", gate_symbol('U', g), w.U[g], {hidden, hidden});
    expect_shape("hyperst_lstm_step", "z" + std::to_string(2 * g), z[2 * g], {batch, in});
    expect_shape("hyperst_lstm_step", "z" + std::to_string(2 * g + 1), z[2 * g + 1], {batch, hidden});
    expect_shape("hyperst_lstm_step", gate_symbol('b', g), b[g], {batch, hidden});
    Var from_x = ops::matmul(ops::mul(x, z[2 * g]), w.W[g]);
    Var from_h = ops::matmul(ops::mul(prev.h, z[2 * g + 1]), w.U[g]);
    pre[g] = ops::add(ops::add(from_x, from_h), b[g]);
  }
  return combine_gates(prev, pre[0], pre[1], pre[2], pre[3]);
}

LstmState generated_lstm_step(Var x, const LstmState& prev, const std::array<Var, 4>& W,
                              const std::array<Var, 4>& U, const std::array<Var, 4>& b) {
  std::size_t batch = 0, in = 0, hidden = 0;
  check_state("generated_lstm_step", x, prev, batch, in, hidden);
  std::array<Var, 4> pre;
  for (std::size_t g = 0; g < 4; ++g) {
    expect_shape("generated_lstm_step", gate_symbol('W', g), W[g], {batch, in, hidden});
    expect_shape("generated_lstm_step", gate_symbol('U', g), U[g], {batch, hidden, hidden});
    expect_shape("generated_lstm_step", gate_symbol('b', g), b[g], {batch, hidden});
    pre[g] = ops::add(ops::add(ops::batched_matvec(x, W[g]), ops::batched_matvec(prev.h, U[g])), b[g]);
  }
  return combine_gates(prev, pre[0], pre[1], pre[2], pre[3]);
}

LstmLayer LstmLayer::create(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                            std::uint64_t seed) {
  LstmLayer l;
  l.in = in;
  l.hidden = hidden;
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string w = prefix + "." + gate_symbol('W', g);
    const std::string u = prefix + "." + gate_symbol('U', g);
    l.W[g] = params.add(w, init_uniform(seed, w, {in, hidden}, in));
    l.U[g] = params.add(u, init_uniform(seed, u, {hidden, hidden}, hidden));
    l.b[g] = params.add(prefix + "." + gate_symbol('b', g), Tensor::zeros({hidden}));
  }
  return l;
}

LstmWeights LstmLayer::weights(const BoundParams& p) const {
  LstmWeights w;
  for (std::size_t g = 0; g < 4; ++g) {
    w.W[g] = p[W[g]];
    w.U[g] = p[U[g]];
  }
  return w;
}

std::array<Var, 4> LstmLayer::biases(const BoundParams& p) const {
  return {p[b[0]], p[b[1]], p[b[2]], p[b[3]]};
}

ParamCounts LstmLayer::count() const {
  ParamCounts c;
  c.learned = 4 * (in * hidden + hidden * hidden + hidden);
  return c;
}

HyperLstmDLayer HyperLstmDLayer::create(ParamSet& params, const std::string& prefix, std::size_t hidden_dim,
                                        std::size_t in, std::size_t hidden, std::uint64_t seed) {
  HyperLstmDLayer l;
  l.in = in;
  l.hidden = hidden;
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string w = prefix + "." + gate_symbol('W', g);
    const std::string u = prefix + "." + gate_symbol('U', g);
    l.W[g] = params.add(w, init_uniform(seed, w, {in, hidden}, in));
    l.U[g] = params.add(u, init_uniform(seed, u, {hidden, hidden}, hidden));
  }
  for (std::size_t k = 0; k < 8; ++k) {
    const std::size_t dim = (k % 2 == 0) ? in : hidden;
    l.z.push_back(GenerationHead::create(params, prefix + ".z" + std::to_string(k), hidden_dim, Shape{dim}, 1.0));
  }
  for (std::size_t g = 0; g < 4; ++g) {
    l.b.push_back(
        GenerationHead::create(params, prefix + "." + gate_symbol('b', g), hidden_dim, Shape{hidden}, 0.0));
  }
  return l;
}

LstmWeights HyperLstmDLayer::weights(const BoundParams& p) const {
  LstmWeights w;
  for (std::size_t g = 0; g < 4; ++g) {
    w.W[g] = p[W[g]];
    w.U[g] = p[U[g]];
  }
  return w;
}

ParamCounts HyperLstmDLayer::count() const {
  ParamCounts c;
  for (const auto& h : z) c += h.count();
  for (const auto& h : b) c += h.count();
  c.learned += 4 * (in * hidden + hidden * hidden);
  return c;
}

HyperLstmGLayer HyperLstmGLayer::create(ParamSet& params, const std::string& prefix, std::size_t hidden_dim,
                                        std::size_t in, std::size_t hidden, std::uint64_t seed) {
  HyperLstmGLayer l;
  l.in = in;
  l.hidden = hidden;
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string w = prefix + "." + gate_symbol('W', g);
    const std::string u = prefix + "." + gate_symbol('U', g);
    l.W.push_back(GenerationHead::create(params, w, hidden_dim, init_uniform(seed, w, {in, hidden}, in)));
    l.U.push_back(GenerationHead::create(params, u, hidden_dim, init_uniform(seed, u, {hidden, hidden}, hidden)));
    l.b.push_back(
        GenerationHead::create(params, prefix + "." + gate_symbol('b', g), hidden_dim, Shape{hidden}, 0.0));
  }
  return l;
}

ParamCounts HyperLstmGLayer::count() const {
  ParamCounts c;
  for (const auto& h : W) c += h.count();
  for (const auto& h : U) c += h.count();
  for (const auto& h : b) c += h.count();
  return c;
}

// ---------------------------------------------------------------------------

Var hyperst_conv_forward(Var x, Var z, Var w_prime, Padding padding) {
  if (w_prime.shape().size() != 4) {
    throw DimensionError("hyperst_conv: W' must be [C_out×C_in×H×W], got " + to_string(w_prime.shape()));
  }
  expect_shape("hyperst_conv", "z", z, {w_prime.shape()[0]});
  return ops::scale_along(ops::conv2d(x, w_prime, padding), z, 0);
}

Var location_hyperst_conv_forward(Var x, Var Z, Var w_prime, Padding padding) {
  Var y = ops::conv2d(x, w_prime, padding);
  const Shape& ys = y.shape();
  const Shape want{ys[1], ys[2], ys[0]};
  if (Z.shape() != want) {
    throw DimensionError("location_hyperst_conv: Z must match the output grid " + to_string(want) + ", got " +
                         to_string(Z.shape()));
  }
  return ops::mul(y, ops::permute(Z, {2, 0, 1}));
}

ConvLayer ConvLayer::create(ParamSet& params, const std::string& name, std::size_t in, std::size_t out,
                            std::size_t kh, std::size_t kw, bool with_bias, std::uint64_t seed) {
  ConvLayer c;
  c.in = in;
  c.out = out;
  c.kh = kh;
  c.kw = kw;
  c.kernel = params.add(name + ".kernel", init_uniform(seed, name + ".kernel", {out, in, kh, kw}, in * kh * kw));
  if (with_bias) c.bias = params.add(name + ".bias", Tensor::zeros({out}));
  return c;
}

Var ConvLayer::forward(const BoundParams& p, Var x) const {
  Var y = ops::conv2d(x, p[kernel], Padding::same);
  return bias ? ops::add_along(y, p[*bias], 0) : y;
}

HyperConv HyperConv::create(ParamSet& params, const std::string& name, std::size_t hidden_dim, std::size_t in,
                            std::size_t out, std::size_t kh, std::size_t kw, bool with_bias, bool head_bias,
                            std::uint64_t seed) {
  HyperConv h;
  h.conv = ConvLayer::create(params, name, in, out, kh, kw, with_bias, seed);
  h.z = GenerationHead::create(params, name + ".z", hidden_dim, Shape{out}, 1.0, head_bias);
  return h;
}

Var HyperConv::forward(const BoundParams& p, Var x, Var hidden) const {
  expect_shape("hyperst_conv", "hidden", hidden, {1, z.map.in});
  Var zv = ops::reshape(z.generate(p, hidden), {conv.out});
  Var y = hyperst_conv_forward(x, zv, p[conv.kernel], Padding::same);
  return conv.bias ? ops::add_along(y, p[*conv.bias], 0) : y;
}

ParamCounts HyperConv::count() const {
  ParamCounts c = z.count();
  c.learned += conv.numel();
  return c;
}

LocationHyperConv LocationHyperConv::create(ParamSet& params, const std::string& name, std::size_t hidden_dim,
                                            std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                                            bool with_bias, std::uint64_t seed) {
  LocationHyperConv h;
  h.conv = ConvLayer::create(params, name, in, out, kh, kw, with_bias, seed);
  h.z = GenerationHead::create(params, name + ".z", hidden_dim, Shape{out}, 1.0);
  return h;
}

Var LocationHyperConv::forward(const BoundParams& p, Var x, Var cell_hidden) const {
  if (x.shape().size() != 3) throw DimensionError("location_hyperst_conv: x must be [C×H×W], got " + to_string(x.shape()));
  const std::size_t gh = x.shape()[1], gw = x.shape()[2];
  expect_shape("location_hyperst_conv", "cell_hidden", cell_hidden, {gh * gw, z.map.in});
  Var Z = ops::reshape(z.generate(p, cell_hidden), {gh, gw, conv.out});
  Var y = location_hyperst_conv_forward(x, Z, p[conv.kernel], Padding::same);
  return conv.bias ? ops::add_along(y, p[*conv.bias], 0) : y;
}

ParamCounts LocationHyperConv::count() const {
  ParamCounts c = z.count();
  c.learned += conv.numel();
  return c;
}

}  // namespace hyperst
