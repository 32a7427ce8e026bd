#include "hyperst/model.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "csv.hpp"

namespace hyperst {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<ModelKind, const char*>, 7> kKindNames{{
    {ModelKind::lstm, "lstm"},
    {ModelKind::st_lstm, "st-lstm"},
    {ModelKind::hyperst_lstm_d, "hyperst-lstm-d"},
    {ModelKind::hyperst_lstm_g, "hyperst-lstm-g"},
    {ModelKind::cnn, "cnn"},
    {ModelKind::st_cnn, "st-cnn"},
    {ModelKind::hyperst_cnn, "hyperst-cnn"},
}};

void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw std::invalid_argument(std::string("model spec: ") + what + " must be positive");
}

}  // namespace

std::string to_string(ModelKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (name == n) return k;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

bool is_grid_kind(ModelKind kind) {
  return kind == ModelKind::cnn || kind == ModelKind::st_cnn || kind == ModelKind::hyperst_cnn;
}

bool uses_spatial(ModelKind kind) { return kind != ModelKind::lstm && kind != ModelKind::cnn; }

void ModelSpec::validate() const {
  require_positive(spatial_dim, "spatial_dim");
  require_positive(temporal_dim, "temporal_dim");
  require_positive(label_dim, "label_dim");
  require_positive(window, "window");
  require_positive(horizon, "horizon");
  if (temporal_widths.empty()) throw std::invalid_argument("model spec: temporal_widths must be non-empty");
  for (auto w : temporal_widths) require_positive(w, "every temporal width");
  if (uses_spatial(kind)) {
    if (trunk_widths.empty()) throw std::invalid_argument("model spec: " + to_string(kind) + " needs trunk_widths");
    for (auto w : trunk_widths) require_positive(w, "every trunk width");
  }
  if (is_grid_kind(kind)) {
    if (grid == 0) throw std::invalid_argument("model spec: " + to_string(kind) + " needs a grid size G");
    if (kernel == 0 || kernel % 2 == 0) throw std::invalid_argument("model spec: kernel must be odd");
  }
}

std::size_t ModelSpec::output_size() const {
  return horizon * label_dim * (is_grid_kind(kind) ? grid * grid : 1);
}

json to_json(const ModelSpec& s) {
  return json{{"kind", to_string(s.kind)},       {"trunk_widths", s.trunk_widths},
              {"temporal_widths", s.temporal_widths}, {"spatial_dim", s.spatial_dim},
              {"temporal_dim", s.temporal_dim},  {"label_dim", s.label_dim},
              {"window", s.window},              {"horizon", s.horizon},
              {"grid", s.grid},                  {"kernel", s.kernel},
              {"head_bias", s.head_bias}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  if (j.contains("kind")) s.kind = parse_model_kind(j["kind"].get<std::string>());
  s.trunk_widths = j.value("trunk_widths", s.trunk_widths);
  s.temporal_widths = j.value("temporal_widths", s.temporal_widths);
  s.spatial_dim = j.value("spatial_dim", s.spatial_dim);
  s.temporal_dim = j.value("temporal_dim", s.temporal_dim);
  s.label_dim = j.value("label_dim", s.label_dim);
  s.window = j.value("window", s.window);
  s.horizon = j.value("horizon", s.horizon);
  s.grid = j.value("grid", s.grid);
  s.kernel = j.value("kernel", s.kernel);
  s.head_bias = j.value("head_bias", s.head_bias);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

Batch make_batch(const std::vector<SampleWindow>& windows, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto stack = [&](auto member) {
    const Tensor& first = windows[indices[0]].*member;
    Shape shape{indices.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor out(shape);
    const std::size_t n = first.numel();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const Tensor& t = windows[indices[b]].*member;
      if (t.shape() != first.shape()) throw DimensionError("make_batch: windows have different shapes");
      std::copy(t.raw(), t.raw() + n, out.raw() + b * n);
    }
    return out;
  };
  return {stack(&SampleWindow::spatial), stack(&SampleWindow::input), stack(&SampleWindow::label)};
}

Batch make_batch(const std::vector<SampleWindow>& windows) {
  std::vector<std::size_t> all(windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(windows, all);
}

// ---------------------------------------------------------------------------
// Recurrent networks: lstm, st-lstm, hyperst-lstm-d, hyperst-lstm-g.

namespace {

class RecurrentNet final : public Network {
 public:
  RecurrentNet(const ModelSpec& spec, ParamSet& params, std::uint64_t seed) : spec_(spec) {
    std::size_t d = 0;
    if (uses_spatial(spec.kind)) {
      trunk_ = SpatialTrunk::create(params, "trunk", spec.spatial_dim, spec.trunk_widths, seed);
      d = trunk_->output_dim();
    }
    std::size_t in = spec.temporal_dim;
    for (std::size_t l = 0; l < spec.temporal_widths.size(); ++l) {
      const std::string prefix = "lstm" + std::to_string(l);
      const std::size_t h = spec.temporal_widths[l];
      switch (spec.kind) {
        case ModelKind::hyperst_lstm_d:
          d_layers_.push_back(HyperLstmDLayer::create(params, prefix, d, in, h, seed));
          break;
        case ModelKind::hyperst_lstm_g:
          g_layers_.push_back(HyperLstmGLayer::create(params, prefix, d, in, h, seed));
          break;
        default:
          plain_layers_.push_back(LstmLayer::create(params, prefix, in, h, seed));
      }
      in = h;
    }
    const std::size_t head_in = in + (spec.kind == ModelKind::st_lstm ? d : 0);
    output_ = DenseLayer::create(params, "output", head_in, spec.output_size(), true, seed);
  }

  Var forward(const BoundParams& p, const Tensor& spatial, const Tensor& input) const override {
    Tape& tape = p.tape();
    const std::size_t batch = input.extent(0);
    const Shape want{batch, spec_.window, spec_.temporal_dim};
    if (input.shape() != want) {
      throw DimensionError("forecast: window must be " + to_string(want) + ", got " + to_string(input.shape()));
    }
    if (!input.all_finite()) throw NumericError("forecast: input window contains NaN or Inf");

    Var hidden;
    if (trunk_) {
      if (spatial.shape() != Shape{batch, spec_.spatial_dim}) {
        throw DimensionError("forecast: spatial attributes must be " + to_string(Shape{batch, spec_.spatial_dim}) +
                             ", got " + to_string(spatial.shape()));
      }
      hidden = trunk_->embed(p, tape.constant(spatial));
    }

    std::vector<Var> seq;
    seq.reserve(spec_.window);
    const std::size_t dt = spec_.temporal_dim;
    for (std::size_t t = 0; t < spec_.window; ++t) {
      Tensor x({batch, dt});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < dt; ++c) x.at(b, c) = input.at(b, t, c);
      seq.push_back(tape.constant(std::move(x)));
    }

    for (std::size_t l = 0; l < spec_.temporal_widths.size(); ++l) {
      const std::size_t h = spec_.temporal_widths[l];
      LstmState state{tape.constant(Tensor::zeros({batch, h})), tape.constant(Tensor::zeros({batch, h}))};
      std::vector<Var> out;
      out.reserve(seq.size());
      if (spec_.kind == ModelKind::hyperst_lstm_d) {
        const auto& layer = d_layers_[l];
        const LstmWeights w = layer.weights(p);
        std::array<Var, 8> z;
        std::array<Var, 4> b;
        for (std::size_t k = 0; k < 8; ++k) z[k] = layer.z[k].generate(p, hidden);
        for (std::size_t g = 0; g < 4; ++g) b[g] = layer.b[g].generate(p, hidden);
        for (const Var& x : seq) out.push_back((state = hyperst_lstm_step(x, state, w, z, b)).h);
      } else if (spec_.kind == ModelKind::hyperst_lstm_g) {
        const auto& layer = g_layers_[l];
        std::array<Var, 4> W, U, b;
        for (std::size_t g = 0; g < 4; ++g) {
          W[g] = layer.W[g].generate(p, hidden);
          U[g] = layer.U[g].generate(p, hidden);
          b[g] = layer.b[g].generate(p, hidden);
        }
        for (const Var& x : seq) out.push_back((state = generated_lstm_step(x, state, W, U, b)).h);
      } else {
        const auto& layer = plain_layers_[l];
        const LstmWeights w = layer.weights(p);
        const auto b = layer.biases(p);
        for (const Var& x : seq) out.push_back((state = lstm_step(x, state, w, b)).h);
      }
      seq = std::move(out);
    }
    Var last = seq.back();
    if (spec_.kind == ModelKind::st_lstm) last = ops::concat({last, hidden}, 1);
    return output_.forward(p, last);
  }

  ParamCounts count() const override {
    ParamCounts c;
    if (trunk_) c.trunk = trunk_->numel();
    for (const auto& l : plain_layers_) c += l.count();
    for (const auto& l : d_layers_) c += l.count();
    for (const auto& l : g_layers_) c += l.count();
    c.learned += output_.numel();
    return c;
  }

  const SpatialTrunk* trunk() const override { return trunk_ ? &*trunk_ : nullptr; }

  std::vector<std::pair<std::string, Var>> generate(const BoundParams& p, Var hidden) const override {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& l : d_layers_) {
      for (const auto& h : l.z) out.emplace_back(h.target, h.generate(p, hidden));
      for (const auto& h : l.b) out.emplace_back(h.target, h.generate(p, hidden));
    }
    for (const auto& l : g_layers_) {
      for (const auto* heads : {&l.W, &l.U, &l.b})
        for (const auto& h : *heads) out.emplace_back(h.target, h.generate(p, hidden));
    }
    return out;
  }

 private:
  ModelSpec spec_;
  std::optional<SpatialTrunk> trunk_;
  std::vector<LstmLayer> plain_layers_;
  std::vector<HyperLstmDLayer> d_layers_;
  std::vector<HyperLstmGLayer> g_layers_;
  DenseLayer output_;
};

// ---------------------------------------------------------------------------
// Grid networks: cnn, st-cnn, hyperst-cnn. The input window becomes w·D_T
// channels over the G×G grid; the 1×1 output conv emits h·D_L channels.

class GridNet final : public Network {
 public:
  GridNet(const ModelSpec& spec, ParamSet& params, std::uint64_t seed) : spec_(spec) {
    std::size_t d = 0;
    if (uses_spatial(spec.kind)) {
      trunk_ = SpatialTrunk::create(params, "trunk", spec.spatial_dim, spec.trunk_widths, seed);
      d = trunk_->output_dim();
    }
    std::size_t in = spec.window * spec.temporal_dim;
    for (std::size_t l = 0; l < spec.temporal_widths.size(); ++l) {
      const std::string name = "conv" + std::to_string(l);
      const std::size_t out = spec.temporal_widths[l];
      if (spec.kind == ModelKind::hyperst_cnn) {
        hyper_layers_.push_back(
            LocationHyperConv::create(params, name, d, in, out, spec.kernel, spec.kernel, true, seed));
      } else {
        plain_layers_.push_back(ConvLayer::create(params, name, in, out, spec.kernel, spec.kernel, true, seed));
      }
      in = out;
    }
    if (spec.kind == ModelKind::st_cnn) in += d;
    output_ = ConvLayer::create(params, "output", in, spec.horizon * spec.label_dim, 1, 1, true, seed);
  }

  Var forward(const BoundParams& p, const Tensor& spatial, const Tensor& input) const override {
    Tape& tape = p.tape();
    const std::size_t g = spec_.grid, n = g * g, dt = spec_.temporal_dim, w = spec_.window;
    const std::size_t batch = input.extent(0);
    const Shape want{batch, w, n, dt};
    if (input.shape() != want) {
      throw DimensionError("forecast: grid window must be " + to_string(want) + ", got " + to_string(input.shape()));
    }
    if (!input.all_finite()) throw NumericError("forecast: input window contains NaN or Inf");

    std::vector<Var> cell_hidden;
    if (trunk_) {
      const Shape swant{batch, n, spec_.spatial_dim};
      if (spatial.shape() != swant) {
        throw DimensionError("forecast: grid attributes must be " + to_string(swant) + ", got " +
                             to_string(spatial.shape()));
      }
      // Attributes are static, so a batch normally shares one S and needs one trunk pass.
      const std::size_t per = n * spec_.spatial_dim;
      bool shared = true;
      for (std::size_t b = 1; b < batch && shared; ++b)
        shared = std::equal(spatial.raw(), spatial.raw() + per, spatial.raw() + b * per);
      for (std::size_t b = 0; b < (shared ? 1 : batch); ++b) {
        Tensor s({n, spec_.spatial_dim}, std::vector<double>(spatial.raw() + b * per, spatial.raw() + (b + 1) * per));
        cell_hidden.push_back(trunk_->embed(p, tape.constant(std::move(s))));
      }
    }

    std::vector<Var> rows;
    rows.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor grid_in({w * dt, g, g});
      for (std::size_t k = 0; k < w; ++k)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < dt; ++c) grid_in[(k * dt + c) * n + i] = input.at(b, k, i, c);
      Var x = tape.constant(std::move(grid_in));
      Var hidden = trunk_ ? cell_hidden[cell_hidden.size() == 1 ? 0 : b] : Var{};
      for (std::size_t l = 0; l < spec_.temporal_widths.size(); ++l) {
        x = spec_.kind == ModelKind::hyperst_cnn ? hyper_layers_[l].forward(p, x, hidden)
                                                 : plain_layers_[l].forward(p, x);
        x = ops::tanh(x);
      }
      if (spec_.kind == ModelKind::st_cnn) {
        const std::size_t d = trunk_->output_dim();
        x = ops::concat({x, ops::reshape(ops::permute(hidden, {1, 0}), {d, g, g})}, 0);
      }
      Var y = output_.forward(p, x);  // [h·D_L × G × G]
      y = ops::permute(ops::reshape(y, {spec_.horizon, spec_.label_dim, n}), {0, 2, 1});
      rows.push_back(ops::reshape(y, {1, spec_.output_size()}));
    }
    return rows.size() == 1 ? rows[0] : ops::concat(rows, 0);
  }

  ParamCounts count() const override {
    ParamCounts c;
    if (trunk_) c.trunk = trunk_->numel();
    for (const auto& l : plain_layers_) c.learned += l.numel();
    for (const auto& l : hyper_layers_) c += l.count();
    c.learned += output_.numel();
    return c;
  }

  const SpatialTrunk* trunk() const override { return trunk_ ? &*trunk_ : nullptr; }

  std::vector<std::pair<std::string, Var>> generate(const BoundParams& p, Var hidden) const override {
    std::vector<std::pair<std::string, Var>> out;
    for (const auto& l : hyper_layers_) out.emplace_back(l.z.target, l.z.generate(p, hidden));
    return out;
  }

 private:
  ModelSpec spec_;
  std::optional<SpatialTrunk> trunk_;
  std::vector<ConvLayer> plain_layers_;
  std::vector<LocationHyperConv> hyper_layers_;
  ConvLayer output_;
};

}  // namespace

// ---------------------------------------------------------------------------

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  m.seed_ = seed;
  if (is_grid_kind(spec.kind)) {
    m.network_ = std::make_shared<GridNet>(spec, m.params_, seed);
  } else {
    m.network_ = std::make_shared<RecurrentNet>(spec, m.params_, seed);
  }
  m.normalizer_ = Normalizer::identity(spec.spatial_dim, spec.temporal_dim, spec.label_dim);
  return m;
}

Model Model::custom(ModelSpec spec, std::shared_ptr<const Network> network, ParamSet params) {
  Model m;
  m.spec_ = std::move(spec);
  m.network_ = std::move(network);
  m.params_ = std::move(params);
  m.normalizer_ = Normalizer::identity(m.spec_.spatial_dim, m.spec_.temporal_dim, m.spec_.label_dim);
  m.custom_ = true;
  return m;
}

Var Model::forward(const BoundParams& p, const Batch& batch) const {
  return network_->forward(p, batch.spatial, batch.input);
}

Tensor Model::predict(const Batch& batch) const {
  Tape tape;
  BoundParams p(tape, params_, BoundParams::Mode::inference);
  return forward(p, batch).value();
}

Tensor Model::forecast(const Tensor& s, const Tensor& window) const {
  Shape ss{1}, ws{1};
  ss.insert(ss.end(), s.shape().begin(), s.shape().end());
  ws.insert(ws.end(), window.shape().begin(), window.shape().end());
  Batch b{normalizer_.normalize_spatial(s).reshaped(ss), normalizer_.normalize_temporal(window).reshaped(ws),
          Tensor()};
  const Tensor y = predict(b);
  Shape out{spec_.horizon};
  if (is_grid_kind(spec_.kind)) out.push_back(spec_.grid * spec_.grid);
  out.push_back(spec_.label_dim);
  return normalizer_.denormalize_labels(y.reshaped(out));
}

std::map<std::string, Tensor> Model::generated_params(const Tensor& S) const {
  const SpatialTrunk* trunk = network_->trunk();
  if (!trunk) throw std::invalid_argument("generated_params: " + to_string(spec_.kind) + " has no spatial module");
  Tape tape;
  BoundParams p(tape, params_, BoundParams::Mode::inference);
  Var hidden = trunk->embed(p, tape.constant(normalizer_.normalize_spatial(S)));
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : network_->generate(p, hidden)) out.emplace(name, v.value());
  return out;
}

Tensor Model::embed(const Tensor& S) const {
  const SpatialTrunk* trunk = network_->trunk();
  if (!trunk) throw std::invalid_argument("embed: " + to_string(spec_.kind) + " has no spatial module");
  Tape tape;
  BoundParams p(tape, params_, BoundParams::Mode::inference);
  return trunk->embed(p, tape.constant(normalizer_.normalize_spatial(S))).value();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "hyperst-checkpoint";

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  if (model.is_custom()) throw std::invalid_argument("save_checkpoint: custom networks cannot be checkpointed");
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  std::size_t offset = 0;
  std::ofstream blob(dir / "weights.bin", std::ios::binary);
  if (!blob) throw std::runtime_error((dir / "weights.bin").string() + ": cannot open for writing");
  for (const auto& e : model.params()) {
    tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"offset", offset}});
    for (double v : e.value.data()) put_le(blob, v);
    offset += e.value.numel() * 8;
  }
  blob.close();
  json manifest{{"format", kCheckpointFormat},
                {"version", 1},
                {"spec", to_json(model.spec())},
                {"seed", model.seed()},
                {"normalization", to_json(model.normalizer())},
                {"tensors", tensors},
                {"total_bytes", offset}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error(manifest_path.string() + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": corrupt manifest: " + e.what());
  }
  if (j.value("format", std::string()) != kCheckpointFormat) {
    throw std::runtime_error(manifest_path.string() + ": not a checkpoint manifest");
  }
  Model model;
  try {
    model = Model::build(model_spec_from_json(j.at("spec")), j.at("seed").get<std::uint64_t>());
    model.set_normalizer(normalizer_from_json(j.at("normalization")));
  } catch (const std::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  const json& tensors = j.at("tensors");
  if (tensors.size() != model.params().size()) {
    throw std::runtime_error(manifest_path.string() + ": manifest lists " + std::to_string(tensors.size()) +
                             " tensors, model has " + std::to_string(model.params().size()));
  }

  const auto blob_path = dir / "weights.bin";
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error(blob_path.string() + ": cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  const std::size_t expected = j.at("total_bytes").get<std::size_t>();
  if (bytes.size() != expected || expected != model.params().total_numel() * 8) {
    throw std::runtime_error(blob_path.string() + ": size " + std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(model.params().total_numel() * 8));
  }

  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const json& t = tensors[i];
    const std::string name = t.at("name").get<std::string>();
    const Shape shape = t.at("shape").get<Shape>();
    Tensor& dst = model.params()[i];
    if (name != model.params().name(i) || shape != dst.shape()) {
      throw std::runtime_error(manifest_path.string() + ": tensor " + std::to_string(i) + " is '" + name + "' " +
                               to_string(shape) + ", model expects '" + model.params().name(i) + "' " +
                               to_string(dst.shape()));
    }
    if (t.at("offset").get<std::size_t>() != offset) {
      throw std::runtime_error(manifest_path.string() + ": bad offset for tensor '" + name + "'");
    }
    for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] = get_le(bytes.data() + offset + 8 * k);
    offset += dst.numel() * 8;
  }
  return model;
}

void export_embeddings(const Model& model, const Tensor& S, const std::filesystem::path& path) {
  const Tensor e = model.embed(S);
  const std::size_t d = e.extent(1);
  std::vector<std::string> header{"object_id"};
  for (std::size_t k = 0; k < d; ++k) header.push_back("e" + std::to_string(k));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  csv::Writer w(path, header);
  for (std::size_t i = 0; i < e.extent(0); ++i) {
    w.begin_row();
    w.field(static_cast<std::int64_t>(i));
    for (std::size_t k = 0; k < d; ++k) w.field(e.at(i, k));
    w.end_row();
  }
}

}  // namespace hyperst
