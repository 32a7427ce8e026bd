#include "hyperst/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "hyperst/gradcheck.hpp"
#include "hyperst/training.hpp"

namespace hyperst {

namespace {

using Inputs = std::vector<Tensor>;
using OpFn = std::function<Var(const std::vector<Var>&)>;
using MakeFn = std::function<Inputs(std::mt19937_64&)>;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor randn(Shape s, std::mt19937_64& rng) { return Tensor::normal(std::move(s), 1.0, rng); }

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

/// Scalar loss <out, r> recorded as its own op, so a fault armed on any library op never hides in the loss.
Var probe(Var out, const Tensor& r) {
  return out.tape().record("probe", Tensor::scalar(dot(out.value(), r)), {out}, [r](BackwardContext& ctx) {
    const double g = ctx.output_grad()[0];
    auto sink = ctx.sink(0);
    for (std::size_t k = 0; k < sink.size(); ++k) sink[k] += g * r[k];
  });
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

double op_grad_error(const OpFn& op, const Inputs& inputs, std::mt19937_64& rng) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Var out = op(leaves);
  const Tensor r = randn(out.shape(), rng);
  tape.backward(probe(out, r));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& x) {
          Tape t;
          std::vector<Var> v;
          for (std::size_t j = 0; j < inputs.size(); ++j) v.push_back(t.constant(j == k ? x : inputs[j]));
          return dot(op(v).value(), r);
        },
        inputs[k]);
    worst = std::max(worst, max_relative_error(leaves[k].grad(), numeric));
  }
  return worst;
}

Shape random_shape(std::mt19937_64& rng, std::size_t max_rank) {
  Shape s(pick(rng, 1, max_rank));
  for (auto& e : s) e = pick(rng, 1, 4);
  return s;
}

struct OpCase {
  std::string name;
  MakeFn make;
  OpFn op;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  const auto same2 = [](std::mt19937_64& rng) {
    const Shape s = random_shape(rng, 3);
    return Inputs{randn(s, rng), randn(s, rng)};
  };
  const auto one = [](std::mt19937_64& rng) { return Inputs{randn(random_shape(rng, 3), rng)}; };
  c.push_back({"matmul",
               [](std::mt19937_64& rng) {
                 const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
                 return Inputs{randn({m, k}, rng), randn({k, n}, rng)};
               },
               [](const std::vector<Var>& v) { return ops::matmul(v[0], v[1]); }});
  c.push_back({"add", same2, [](const std::vector<Var>& v) { return ops::add(v[0], v[1]); }});
  c.push_back({"sub", same2, [](const std::vector<Var>& v) { return ops::sub(v[0], v[1]); }});
  c.push_back({"mul", same2, [](const std::vector<Var>& v) { return ops::mul(v[0], v[1]); }});
  c.push_back({"sigmoid", one, [](const std::vector<Var>& v) { return ops::sigmoid(v[0]); }});
  c.push_back({"tanh", one, [](const std::vector<Var>& v) { return ops::tanh(v[0]); }});
  c.push_back({"scale", one, [](const std::vector<Var>& v) { return ops::scale(v[0], -1.7); }});
  c.push_back({"sum", one, [](const std::vector<Var>& v) { return ops::sum(v[0]); }});
  for (const char* name : {"scale_along", "add_along"}) {
    const bool is_scale = std::string(name) == "scale_along";
    c.push_back({name,
                 [](std::mt19937_64& rng) {
                   const Shape s = random_shape(rng, 3);
                   const std::size_t axis = pick(rng, 0, s.size() - 1);
                   Tensor x = randn(s, rng);
                   Tensor v = randn({s[axis]}, rng);
                   return Inputs{x, v, Tensor::scalar(static_cast<double>(axis))};
                 },
                 [is_scale](const std::vector<Var>& v) {
                   const auto axis = static_cast<std::size_t>(v[2].value().item());
                   return is_scale ? ops::scale_along(v[0], v[1], axis) : ops::add_along(v[0], v[1], axis);
                 }});
  }
  c.push_back({"reshape", one, [](const std::vector<Var>& v) { return ops::reshape(v[0], {v[0].value().numel()}); }});
  c.push_back({"permute",
               [](std::mt19937_64& rng) { return Inputs{randn({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)}, rng)}; },
               [](const std::vector<Var>& v) { return ops::permute(v[0], {2, 0, 1}); }});
  c.push_back({"concat",
               [](std::mt19937_64& rng) {
                 const std::size_t r = pick(rng, 1, 3), a = pick(rng, 1, 3), b = pick(rng, 1, 3);
                 return Inputs{randn({r, a}, rng), randn({r, b}, rng)};
               },
               [](const std::vector<Var>& v) { return ops::concat({v[0], v[1]}, 1); }});
  c.push_back({"conv2d",
               [](std::mt19937_64& rng) {
                 const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3), h = pick(rng, 3, 5), w = pick(rng, 3, 5);
                 const std::size_t k = pick(rng, 1, 3);
                 return Inputs{randn({ci, h, w}, rng), randn({co, ci, k, k}, rng),
                               Tensor::scalar(static_cast<double>(pick(rng, 0, 1)))};
               },
               [](const std::vector<Var>& v) {
                 const auto pad = v[2].value().item() > 0.5 ? ops::Padding::valid : ops::Padding::same;
                 return ops::conv2d(v[0], v[1], pad);
               }});
  c.push_back({"batched_matvec",
               [](std::mt19937_64& rng) {
                 const std::size_t b = pick(rng, 1, 3), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
                 return Inputs{randn({b, k}, rng), randn({b, k, n}, rng)};
               },
               [](const std::vector<Var>& v) { return ops::batched_matvec(v[0], v[1]); }});
  return c;
}

/// Direct-summation oracle: X_out^{i,j} = diag(Z[i,j]) (W' * X^{<i,j>}), same padding.
Tensor sliced_location_conv(const Tensor& x, const Tensor& Z, const Tensor& w) {
  const std::size_t ci = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const std::size_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const long ph = static_cast<long>((kh - 1) / 2), pw = static_cast<long>((kw - 1) / 2);
  Tensor out({co, h, wd});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wd; ++j)
      for (std::size_t o = 0; o < co; ++o) {
        double s = 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const long r = static_cast<long>(i + a) - ph, q = static_cast<long>(j + b) - pw;
              if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
              s += w.at(o, c, a, b) * x.at(c, static_cast<std::size_t>(r), static_cast<std::size_t>(q));
            }
        out.at(o, i, j) = Z.at(i, j, o) * s;
      }
  return out;
}

void randomize(ParamSet& params, std::uint64_t seed) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto rng = named_rng(seed, params.name(i));
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& v : params[i].data()) v += u(rng);
  }
}

Batch random_batch(const ModelSpec& s, std::size_t b, std::mt19937_64& rng) {
  Batch batch;
  if (is_grid_kind(s.kind)) {
    const std::size_t n = s.grid * s.grid;
    const Tensor one = randn({n, s.spatial_dim}, rng);
    batch.spatial = Tensor({b, n, s.spatial_dim});
    for (std::size_t k = 0; k < b; ++k) std::copy(one.raw(), one.raw() + one.numel(), batch.spatial.raw() + k * one.numel());
    batch.input = randn({b, s.window, n, s.temporal_dim}, rng);
    batch.label = randn({b, s.horizon, n, s.label_dim}, rng);
  } else {
    batch.spatial = randn({b, s.spatial_dim}, rng);
    batch.input = randn({b, s.window, s.temporal_dim}, rng);
    batch.label = randn({b, s.horizon, s.label_dim}, rng);
  }
  return batch;
}

std::filesystem::path scratch_dir(const std::string& tag) {
  std::random_device rd;
  auto p = std::filesystem::temp_directory_path() / ("hyperst-verify-" + tag + "-" + std::to_string(rd()));
  std::filesystem::create_directories(p);
  return p;
}

struct FaultGuard {
  explicit FaultGuard(const VerifyOptions& o) {
    if (o.fault_op) fault::arm(*o.fault_op, o.fault_factor);
  }
  ~FaultGuard() { fault::disarm(); }
};

}  // namespace

std::vector<CheckResult> run_verify_suite(const VerifyOptions& opt) {
  if (opt.fault_op) {
    const auto cases = op_cases();
    if (std::none_of(cases.begin(), cases.end(), [&](const OpCase& c) { return c.name == *opt.fault_op; })) {
      throw std::invalid_argument("verify: unknown op '" + *opt.fault_op + "' for fault injection");
    }
  }
  if (!(opt.tolerance > 0.0)) throw std::invalid_argument("verify: tolerance must be positive");
  FaultGuard guard(opt);
  std::vector<CheckResult> out;
  const auto record = [&](std::string module, std::string name, auto&& body) {
    CheckResult r{std::move(module), std::move(name), false, {}};
    try {
      body(r);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    out.push_back(std::move(r));
  };

  // tensor-core: every primitive against central differences.
  for (const auto& c : op_cases()) {
    record("tensor-core", "gradcheck:" + c.name, [&](CheckResult& r) {
      double worst = 0.0;
      for (std::size_t s = 0; s < opt.seeds; ++s) {
        std::mt19937_64 rng(s);
        const Inputs in = c.make(rng);
        // Trailing scalar inputs carry configuration (axis, padding) and are excluded from the check.
        const bool has_config = c.name == "scale_along" || c.name == "add_along" || c.name == "conv2d";
        const Inputs diff_in(in.begin(), in.end() - (has_config ? 1 : 0));
        const Tensor config = has_config ? in.back() : Tensor();
        const OpFn op = has_config ? OpFn([&](const std::vector<Var>& v) {
          std::vector<Var> all = v;
          all.push_back(v[0].tape().constant(config));
          return c.op(all);
        })
                                   : c.op;
        worst = std::max(worst, op_grad_error(op, diff_in, rng));
      }
      r.passed = worst < opt.tolerance;
      r.detail = "max rel error " + fmt(worst) + " over " + std::to_string(opt.seeds) + " seeds";
    });
  }

  // hyperst-layers
  record("hyperst-layers", "reduction:layers", [&](CheckResult& r) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      std::mt19937_64 rng(s);
      Tape t;
      const std::size_t b = 3, d = 2, h = 3, co = 4;
      Var x = t.constant(randn({b, d}, rng));
      Var w = t.constant(randn({d, h}, rng));
      worst = std::max(worst, max_abs_diff(hyperst_dense_forward(x, t.constant(Tensor::ones({b, d})), std::nullopt, w).value(),
                                           ops::matmul(x, w).value()));
      LstmWeights lw;
      std::array<Var, 4> bias, bias_rows;
      std::array<Var, 8> z;
      for (std::size_t g = 0; g < 4; ++g) {
        lw.W[g] = t.constant(randn({d, h}, rng));
        lw.U[g] = t.constant(randn({h, h}, rng));
        const Tensor bv = randn({h}, rng);
        bias[g] = t.constant(bv);
        Tensor rows({b, h});
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t k = 0; k < h; ++k) rows.at(i, k) = bv[k];
        bias_rows[g] = t.constant(rows);
      }
      for (std::size_t k = 0; k < 8; ++k) z[k] = t.constant(Tensor::ones({b, k % 2 ? h : d}));
      LstmState st{t.constant(randn({b, h}, rng)), t.constant(randn({b, h}, rng))};
      const auto a = hyperst_lstm_step(x, st, lw, z, bias_rows);
      const auto v = lstm_step(x, st, lw, bias);
      worst = std::max({worst, max_abs_diff(a.h.value(), v.h.value()), max_abs_diff(a.c.value(), v.c.value())});
      Var img = t.constant(randn({2, 5, 5}, rng));
      Var k = t.constant(randn({co, 2, 3, 3}, rng));
      const Tensor plain = ops::conv2d(img, k, ops::Padding::same).value();
      worst = std::max(worst, max_abs_diff(hyperst_conv_forward(img, t.constant(Tensor::ones({co})), k).value(), plain));
      worst = std::max(worst,
                       max_abs_diff(location_hyperst_conv_forward(img, t.constant(Tensor::ones({5, 5, co})), k).value(), plain));
    }
    r.passed = worst <= 1e-12;
    r.detail = "max abs diff " + fmt(worst);
  });

  record("hyperst-layers", "distributivity:conv", [&](CheckResult& r) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      std::mt19937_64 rng(100 + s);
      const std::size_t ci = pick(rng, 1, 8), co = pick(rng, 1, 8);
      Tape t;
      const Tensor x = randn({ci, 8, 8}, rng), w = randn({co, ci, 3, 3}, rng), z = randn({co}, rng);
      Tensor scaled = w;
      for (std::size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= z[i / (ci * 9)];
      const Tensor lhs = ops::conv2d(t.constant(x), t.constant(scaled), ops::Padding::same).value();
      const Tensor rhs = hyperst_conv_forward(t.constant(x), t.constant(z), t.constant(w)).value();
      const Tensor Z = randn({8, 8, co}, rng);
      const Tensor loc = location_hyperst_conv_forward(t.constant(x), t.constant(Z), t.constant(w)).value();
      worst = std::max({worst, max_abs_diff(lhs, rhs), max_abs_diff(loc, sliced_location_conv(x, Z, w))});
    }
    r.passed = worst <= 1e-10;
    r.detail = "max abs diff " + fmt(worst);
  });

  record("hyperst-layers", "param_counts:closed_forms", [&](CheckResult& r) {
    std::size_t configs = 0, bad = 0;
    for (std::size_t d : {1, 2, 4})
      for (std::size_t in : {1, 3, 8})
        for (std::size_t o : {1, 2, 16}) {
          ParamSet ps;
          const auto dense = HyperDense::create(ps, "hd", d, in, o, false, false, 0).count();
          const auto general = GeneralHyperDense::create(ps, "gd", d, in, o, false, 0).count();
          const auto conv = HyperConv::create(ps, "hc", d, in, o, 3, 3, false, false, 0).count();
          bad += dense.hypernet + dense.learned != closed_form::dense(d, in, o);
          bad += general.hypernet != closed_form::general_hypernet(d, in * o);
          bad += conv.hypernet + conv.learned != closed_form::conv(d, o, in, 3, 3);
          if (o > 1) bad += !(general.hypernet > dense.hypernet);
          ++configs;
        }
    r.passed = bad == 0;
    r.detail = std::to_string(configs) + " configurations, " + std::to_string(bad) + " mismatches";
  });

  record("hyperst-layers", "weight_sharing", [&](CheckResult& r) {
    Model m = Model::build(tiny_spec(ModelKind::hyperst_lstm_d), 3);
    randomize(m.params(), 4);
    std::mt19937_64 rng(5);
    Tensor S = randn({3, m.spec().spatial_dim}, rng);
    for (std::size_t k = 0; k < S.extent(1); ++k) S.at(2, k) = S.at(0, k);
    bool same = true;
    for (const auto& [name, g] : m.generated_params(S)) {
      const std::size_t per = g.numel() / 3;
      same = same && std::equal(g.raw(), g.raw() + per, g.raw() + 2 * per);
    }
    r.passed = same;
    r.detail = same ? "identical attributes give bit-identical generated parameters" : "generated parameters differ";
  });

  // models
  for (auto kind : {ModelKind::lstm, ModelKind::st_lstm, ModelKind::hyperst_lstm_d, ModelKind::hyperst_lstm_g,
                    ModelKind::cnn, ModelKind::st_cnn, ModelKind::hyperst_cnn}) {
    record("models", "gradcheck:" + to_string(kind), [&](CheckResult& r) {
      const auto rep = grad_check(tiny_spec(kind), opt.tolerance);
      r.passed = rep.passed();
      r.detail = "worst tensor error " + fmt(rep.worst()) + (r.passed ? "" : "; failing: " + rep.failures());
    });
  }

  for (auto [hyper, vanilla] : {std::pair{ModelKind::hyperst_lstm_d, ModelKind::lstm},
                                std::pair{ModelKind::hyperst_lstm_g, ModelKind::lstm},
                                std::pair{ModelKind::hyperst_cnn, ModelKind::cnn}}) {
    record("models", "reduction:" + to_string(hyper), [&](CheckResult& r) {
      ModelSpec hs = tiny_spec(hyper), vs = tiny_spec(vanilla);
      const Model a = Model::build(hs, 11), b = Model::build(vs, 11);
      std::mt19937_64 rng(12);
      double worst = 0.0;
      for (int k = 0; k < 10; ++k) {
        const Batch batch = random_batch(hs, 4, rng);
        worst = std::max(worst, max_abs_diff(a.predict(batch), b.predict(batch)));
      }
      r.passed = worst <= 1e-10;
      r.detail = "max abs diff vs " + to_string(vanilla) + ": " + fmt(worst);
    });
  }

  record("models", "checkpoint:round_trip", [&](CheckResult& r) {
    bool ok = true;
    for (auto kind : {ModelKind::hyperst_lstm_d, ModelKind::hyperst_cnn}) {
      Model m = Model::build(tiny_spec(kind), 21);
      randomize(m.params(), 22);
      const auto dir = scratch_dir("ckpt");
      save_checkpoint(m, dir);
      const Model back = load_checkpoint(dir);
      std::filesystem::remove_all(dir);
      std::mt19937_64 rng(23);
      const Batch batch = random_batch(m.spec(), 3, rng);
      ok = ok && back.predict(batch) == m.predict(batch);
    }
    r.passed = ok;
    r.detail = ok ? "bit-identical forecasts after save/load" : "forecasts differ after reload";
  });

  // data
  record("data", "dataset:round_trip", [&](CheckResult& r) {
    GeneratorConfig g;
    g.objects = 4;
    g.steps = 30;
    g.grid = 2;
    const Dataset ds = generate_synthetic(g);
    const auto dir = scratch_dir("data");
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir / "manifest.json");
    std::filesystem::remove_all(dir);
    r.passed = back.spatial == ds.spatial && back.temporal == ds.temporal && back.labels == ds.labels &&
               back.timestamps == ds.timestamps && back.grid == ds.grid;
    r.detail = r.passed ? "bit-identical tensors" : "tensors differ after reload";
  });

  record("data", "split:window_counts", [&](CheckResult& r) {
    GeneratorConfig g;
    g.objects = 3;
    g.steps = 100;
    const Dataset ds = generate_synthetic(g);
    const auto a = split_windows(ds, SplitSpec{{8, 1, 1}}, 6, 1);
    const auto b = split_windows(ds, SplitSpec{{7, 1, 2}}, 6, 1);
    r.passed = a.train.size() == 3 * 74 && a.val.size() == 3 * 4 && a.test.size() == 3 * 4 &&
               b.train.size() == 3 * 64 && b.val.size() == 3 * 4 && b.test.size() == 3 * 14;
    r.detail = "8:1:1 -> " + std::to_string(a.train.size()) + "/" + std::to_string(a.val.size()) + "/" +
               std::to_string(a.test.size()) + ", 7:1:2 -> " + std::to_string(b.train.size()) + "/" +
               std::to_string(b.val.size()) + "/" + std::to_string(b.test.size());
  });

  // training
  record("training", "metrics:rmse_ge_mae", [&](CheckResult& r) {
    GeneratorConfig g;
    g.objects = 3;
    g.steps = 100;
    const Dataset ds = generate_synthetic(g);
    ModelSpec s = tiny_spec(ModelKind::hyperst_lstm_d);
    s.spatial_dim = ds.spatial_dim();
    s.temporal_dim = ds.temporal_dim();
    s.window = 6;
    s.horizon = 1;
    const auto w = split_windows(ds, SplitSpec{}, 6, 1);
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Model m = Model::build(s, seed);
      randomize(m.params(), seed + 1);
      for (const auto* set : {&w.train, &w.val, &w.test}) {
        const auto met = evaluate(m, *set);
        ok = ok && met.rmse >= met.mae && met.mae >= 0.0;
      }
    }
    const auto hand = metrics_from_errors(Tensor({2, 1, 1}, {0.0, 2.0}));
    ok = ok && hand.mae == 1.0 && std::abs(hand.rmse - std::sqrt(2.0)) < 1e-15;
    r.passed = ok;
    r.detail = ok ? "RMSE >= MAE on every report" : "RMSE < MAE observed";
  });

  return out;
}

}  // namespace hyperst
