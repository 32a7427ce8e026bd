#include "hyperst/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "csv.hpp"
#include "hyperst/gradcheck.hpp"

namespace hyperst {

using nlohmann::json;

Var squared_error_loss(Var pred, Var label) {
  if (pred.shape() != label.shape()) {
    throw DimensionError("squared_error_loss: pred " + to_string(pred.shape()) + " vs label " +
                         to_string(label.shape()));
  }
  const double batch = static_cast<double>(pred.shape()[0]);
  Var diff = ops::sub(pred, label);
  return ops::scale(ops::sum(ops::mul(diff, diff)), 0.5 / batch);
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd-momentum"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd-momentum") return OptimizerKind::sgd_momentum;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (adam | sgd-momentum)");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train config: lr must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (max_epochs == 0) throw std::invalid_argument("train config: max_epochs must be positive");
  if (patience == 0) throw std::invalid_argument("train config: patience must be >= 1");
  if (!(clip > 0.0)) throw std::invalid_argument("train config: clip must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train config: momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train config: Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("train config: epsilon must be > 0");
}

json to_json(const TrainConfig& c) {
  return json{{"optimizer", to_string(c.optimizer)}, {"lr", c.lr},
              {"batch_size", c.batch_size},          {"max_epochs", c.max_epochs},
              {"patience", c.patience},              {"seed", c.seed},
              {"clip", c.clip},                      {"momentum", c.momentum},
              {"beta1", c.beta1},                    {"beta2", c.beta2},
              {"epsilon", c.epsilon},                {"windows_per_epoch", c.windows_per_epoch}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("optimizer")) c.optimizer = parse_optimizer_kind(j["optimizer"].get<std::string>());
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.clip = j.value("clip", c.clip);
  c.momentum = j.value("momentum", c.momentum);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.windows_per_epoch = j.value("windows_per_epoch", c.windows_per_epoch);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ParamSet& params) : cfg_(cfg) {
    for (const auto& e : params) {
      m_.push_back(Tensor::zeros(e.value.shape()));
      if (cfg.optimizer == OptimizerKind::adam) v_.push_back(Tensor::zeros(e.value.shape()));
    }
  }

  void step(ParamSet& params, const std::vector<Tensor>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto theta = params[i].data();
      const auto g = grads[i].data();
      auto m = m_[i].data();
      if (cfg_.optimizer == OptimizerKind::adam) {
        auto v = v_[i].data();
        for (std::size_t k = 0; k < theta.size(); ++k) {
          m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
          v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
          theta[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.epsilon);
        }
      } else {
        for (std::size_t k = 0; k < theta.size(); ++k) {
          m[k] = cfg_.momentum * m[k] + g[k];
          theta[k] -= cfg_.lr * m[k];
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double f = max_norm / norm;
  for (auto& g : grads)
    for (auto& v : g.data()) v *= f;
}

}  // namespace

TrainResult train(Model& model, const std::vector<SampleWindow>& train_set, const std::vector<SampleWindow>& val_set,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
  const auto start = std::chrono::steady_clock::now();

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch =
      cfg.windows_per_epoch == 0 ? train_set.size() : std::min(cfg.windows_per_epoch, train_set.size());

  Optimizer opt(cfg, model.params());
  ParamSet best = model.params();
  TrainResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < per_epoch; lo += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, per_epoch - lo);
      const Batch batch = make_batch(train_set, std::span<const std::size_t>(order).subspan(lo, n));
      Tape tape;
      BoundParams p(tape, model.params());
      Var pred = model.forward(p, batch);
      Var label = tape.constant(batch.label.reshaped(pred.shape()));
      Var loss = squared_error_loss(pred, label);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": loss is " +
                              std::to_string(value));
      }
      tape.backward(loss);
      auto grads = p.gradients();
      clip_global_norm(grads, cfg.clip);
      opt.step(model.params(), grads);
      loss_sum += value * static_cast<double>(n);
    }
    const SplitMetrics val = evaluate(model, val_set);
    if (!std::isfinite(val.mae)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": validation MAE is not finite");
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(per_epoch), val.mae, val.rmse});
    if (val.mae < result.best_val_mae) {
      result.best_val_mae = val.mae;
      result.best_epoch = epoch;
      best = model.params();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  model.params() = best;
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  csv::Writer w(path, {"epoch", "train_loss", "val_mae", "val_rmse"});
  for (const auto& r : history) {
    w.begin_row();
    w.field(static_cast<std::int64_t>(r.epoch));
    w.field(r.train_loss);
    w.field(r.val_mae);
    w.field(r.val_rmse);
    w.end_row();
  }
}

// ---------------------------------------------------------------------------

SplitMetrics metrics_from_errors(const Tensor& errors) {
  if (errors.rank() != 3) throw DimensionError("metrics: errors must be [windows×horizon×rest]");
  const std::size_t w = errors.extent(0), h = errors.extent(1), rest = errors.extent(2);
  SplitMetrics m;
  m.windows = w;
  m.mae_per_horizon.assign(h, 0.0);
  m.rmse_per_horizon.assign(h, 0.0);
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t r = 0; r < rest; ++r) {
        const double e = errors.at(i, k, r);
        m.mae_per_horizon[k] += std::abs(e);
        m.rmse_per_horizon[k] += e * e;
      }
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t k = 0; k < h; ++k) {
    abs_sum += m.mae_per_horizon[k];
    sq_sum += m.rmse_per_horizon[k];
    m.mae_per_horizon[k] /= static_cast<double>(w * rest);
    m.rmse_per_horizon[k] = std::sqrt(m.rmse_per_horizon[k] / static_cast<double>(w * rest));
  }
  m.mae = abs_sum / static_cast<double>(errors.numel());
  m.rmse = std::sqrt(sq_sum / static_cast<double>(errors.numel()));
  return m;
}

SplitMetrics evaluate(const Model& model, const std::vector<SampleWindow>& windows) {
  if (windows.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  constexpr std::size_t kChunk = 512;
  const Shape& label_shape = windows[0].label.shape();
  const std::size_t per = windows[0].label.numel();
  const std::size_t h = label_shape[0];
  Tensor errors({windows.size(), h, per / h});
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < windows.size(); lo += kChunk) {
    const std::size_t n = std::min(kChunk, windows.size() - lo);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), lo);
    const Batch batch = make_batch(windows, idx);
    const Tensor pred = model.normalizer().denormalize_labels(model.predict(batch).reshaped(batch.label.shape()));
    const Tensor label = model.normalizer().denormalize_labels(batch.label);
    for (std::size_t k = 0; k < pred.numel(); ++k) errors[lo * per + k] = pred[k] - label[k];
  }
  return metrics_from_errors(errors);
}

json to_json(const SplitMetrics& m) {
  return json{{"mae", m.mae},
              {"rmse", m.rmse},
              {"mae_per_horizon", m.mae_per_horizon},
              {"rmse_per_horizon", m.rmse_per_horizon},
              {"windows", m.windows}};
}

json to_json(const MetricsReport& r) {
  json j{{"epochs", r.epochs}, {"best_epoch", r.best_epoch}};
  for (const auto& [name, m] : r.splits) j[name] = to_json(m);
  return j;
}

// ---------------------------------------------------------------------------

bool GradCheckReport::passed() const { return worst() < tolerance; }

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& t : tensors) w = std::max(w, t.max_rel_error);
  return w;
}

std::string GradCheckReport::failures() const {
  std::ostringstream out;
  for (const auto& t : tensors)
    if (!(t.max_rel_error < tolerance)) out << t.name << " (" << t.max_rel_error << ") ";
  return out.str();
}

ModelSpec tiny_spec(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  s.spatial_dim = 3;
  s.temporal_dim = 2;
  s.label_dim = 1;
  s.trunk_widths = {3, 2};
  if (is_grid_kind(kind)) {
    s.grid = 2;
    s.kernel = 3;
    s.window = 2;
    s.horizon = 2;
    s.temporal_widths = {2};
  } else {
    s.window = 3;
    s.horizon = 2;
    s.temporal_widths = {3};
  }
  return s;
}

GradCheckReport grad_check(const ModelSpec& spec, double tolerance, std::uint64_t seed) {
  Model model = Model::build(spec, seed);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto rng = named_rng(seed ^ 0x9e3779b97f4a7c15ULL, model.params().name(i));
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& v : model.params()[i].data()) v += u(rng);
  }

  std::mt19937_64 rng(seed + 17);
  constexpr std::size_t kBatch = 2;
  Batch batch;
  if (is_grid_kind(spec.kind)) {
    const std::size_t n = spec.grid * spec.grid;
    const Tensor s = Tensor::normal({n, spec.spatial_dim}, 1.0, rng);
    batch.spatial = Tensor({kBatch, n, spec.spatial_dim});
    for (std::size_t b = 0; b < kBatch; ++b) std::copy(s.raw(), s.raw() + s.numel(), batch.spatial.raw() + b * s.numel());
    batch.input = Tensor::normal({kBatch, spec.window, n, spec.temporal_dim}, 1.0, rng);
    batch.label = Tensor::normal({kBatch, spec.horizon, n, spec.label_dim}, 1.0, rng);
  } else {
    batch.spatial = Tensor::normal({kBatch, spec.spatial_dim}, 1.0, rng);
    batch.input = Tensor::normal({kBatch, spec.window, spec.temporal_dim}, 1.0, rng);
    batch.label = Tensor::normal({kBatch, spec.horizon, spec.label_dim}, 1.0, rng);
  }
  const Tensor label = batch.label.reshaped({kBatch, spec.output_size()});

  auto loss_of = [&](const ParamSet& params) {
    Tape tape;
    BoundParams p(tape, params, BoundParams::Mode::inference);
    return squared_error_loss(model.forward(p, batch), tape.constant(label)).value().item();
  };

  Tape tape;
  BoundParams p(tape, model.params());
  Var loss = squared_error_loss(model.forward(p, batch), tape.constant(label));
  tape.backward(loss);
  const auto grads = p.gradients();

  GradCheckReport report;
  report.kind = to_string(spec.kind);
  report.tolerance = tolerance;
  ParamSet work = model.params();
  for (std::size_t i = 0; i < work.size(); ++i) {
    const Tensor original = work[i];
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& x) {
          work[i] = x;
          return loss_of(work);
        },
        original);
    work[i] = original;
    report.tensors.push_back({work.name(i), max_relative_error(grads[i], numeric)});
  }
  return report;
}

}  // namespace hyperst
