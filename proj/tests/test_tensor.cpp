#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "hyperst/gradcheck.hpp"
#include "hyperst/ops.hpp"
#include "oracles.hpp"

using namespace hyperst;

namespace {

Tensor column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(Tensor().shape(), Shape{1});
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}, 0.0), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_EQ(t.reshaped({3, 2}).numel(), 6u);
  EXPECT_THROW(t.item(), DimensionError);
}

TEST(Tensor, NamedRngIsDeterministicPerName) {
  auto a = named_rng(7, "lstm0.W_f");
  auto b = named_rng(7, "lstm0.W_f");
  auto c = named_rng(7, "lstm0.W_i");
  const auto x = a(), y = b(), z = c();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
}

// ---------------------------------------------------------------------------

TEST(Matmul, Examples) {
  Tape tape;
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor v = column({5, 6});
  EXPECT_EQ(ops::matmul(tape.constant(eye), tape.constant(v)).value(), v);

  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor got = ops::matmul(tape.constant(a), tape.constant(v)).value();
  EXPECT_EQ(got, column({17, 39}));
  EXPECT_EQ(got, oracle::matmul(a, v));

  const Tensor any = oracle::randn({3, 4}, 1);
  EXPECT_EQ(ops::matmul(tape.constant(Tensor::zeros({2, 3})), tape.constant(any)).value(), Tensor::zeros({2, 4}));
}

TEST(Matmul, RandomAgainstTripleLoop) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tape tape;
    const Tensor a = oracle::randn({3, 5}, s), b = oracle::randn({5, 2}, s + 100);
    EXPECT_LT(max_abs_diff(ops::matmul(tape.constant(a), tape.constant(b)).value(), oracle::matmul(a, b)), 1e-14);
  }
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape tape;
  try {
    ops::matmul(tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({4, 5})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, Examples) {
  Tape tape;
  EXPECT_DOUBLE_EQ(ops::sigmoid(tape.constant(Tensor::scalar(0))).value().item(), 0.5);
  EXPECT_DOUBLE_EQ(ops::tanh(tape.constant(Tensor::scalar(0))).value().item(), 0.0);
  const Tensor prod = ops::mul(tape.constant(Tensor::vector({1, 2, 3})), tape.constant(Tensor::vector({4, 5, 6}))).value();
  EXPECT_EQ(prod, Tensor::vector({4, 10, 18}));
}

TEST(Elementwise, ActivationRanges) {
  Tape tape;
  const Tensor x = oracle::randn({200}, 3, 5.0);
  const Tensor s = ops::sigmoid(tape.constant(x)).value();
  const Tensor t = ops::tanh(tape.constant(x)).value();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_GT(s[i], 0.0);
    EXPECT_LT(s[i], 1.0);
    EXPECT_GT(t[i], -1.0);
    EXPECT_LT(t[i], 1.0);
  }
}

TEST(Elementwise, NoImplicitBroadcast) {
  Tape tape;
  Var a = tape.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(ops::add(a, tape.constant(Tensor::zeros({3}))), DimensionError);
  EXPECT_THROW(ops::mul(a, tape.constant(Tensor::zeros({3, 2}))), DimensionError);
  // Broadcasting a vector needs a named axis whose extent matches.
  EXPECT_THROW(ops::scale_along(a, tape.constant(Tensor::zeros({3})), 0), DimensionError);
  EXPECT_NO_THROW(ops::scale_along(a, tape.constant(Tensor::zeros({3})), 1));
  EXPECT_THROW(ops::add_along(a, tape.constant(Tensor::zeros({2})), 2), DimensionError);
}

TEST(Elementwise, ScaleAlongMatchesLoop) {
  Tape tape;
  const Tensor x = oracle::randn({2, 3, 4}, 5), v = oracle::randn({3}, 6);
  const Tensor y = ops::scale_along(tape.constant(x), tape.constant(v), 1).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(y.at(i, j, k), x.at(i, j, k) * v[j]);
}

TEST(Permute, MovesAxes) {
  Tape tape;
  const Tensor x = oracle::randn({2, 3, 4}, 9);
  const Tensor y = ops::permute(tape.constant(x), {2, 0, 1}).value();
  ASSERT_EQ(y.shape(), (Shape{4, 2, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(y.at(k, i, j), x.at(i, j, k));
  EXPECT_THROW(ops::permute(tape.constant(x), {0, 0, 1}), DimensionError);
}

// ---------------------------------------------------------------------------

TEST(Conv2d, IdentityAndZeroKernels) {
  Tape tape;
  const Tensor x = oracle::randn({1, 4, 5}, 2);
  const Tensor one({1, 1, 1, 1}, 1.0);
  EXPECT_EQ(ops::conv2d(tape.constant(x), tape.constant(one), ops::Padding::valid).value(), x);
  EXPECT_EQ(ops::conv2d(tape.constant(x), tape.constant(one), ops::Padding::same).value(), x);
  const Tensor zero = Tensor::zeros({2, 1, 3, 3});
  EXPECT_EQ(ops::conv2d(tape.constant(x), tape.constant(zero), ops::Padding::same).value(), Tensor::zeros({2, 4, 5}));
}

TEST(Conv2d, ValidMatchesDirectSummation) {
  Tape tape;
  const Tensor x = oracle::randn({2, 5, 5}, 11), k = oracle::randn({3, 2, 3, 3}, 12);
  const Tensor y = ops::conv2d(tape.constant(x), tape.constant(k), ops::Padding::valid).value();
  ASSERT_EQ(y.shape(), (Shape{3, 3, 3}));
  EXPECT_LT(max_abs_diff(y, oracle::conv_valid(x, k)), 1e-13);
}

TEST(Conv2d, SameMatchesDirectSummation) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tape tape;
    const Tensor x = oracle::randn({3, 6, 5}, s), k = oracle::randn({2, 3, 3, 3}, s + 50);
    EXPECT_LT(max_abs_diff(ops::conv2d(tape.constant(x), tape.constant(k), ops::Padding::same).value(),
                           oracle::conv_same(x, k)),
              1e-13);
  }
}

TEST(Conv2d, IsCrossCorrelation) {
  // A kernel with a single 1 in its top-left corner shifts the image down-right under cross-correlation.
  Tape tape;
  Tensor k = Tensor::zeros({1, 1, 3, 3});
  k.at(0, 0, 0, 0) = 1.0;
  Tensor x = Tensor::zeros({1, 3, 3});
  x.at(0, 0, 0) = 7.0;
  const Tensor y = ops::conv2d(tape.constant(x), tape.constant(k), ops::Padding::same).value();
  EXPECT_EQ(y.at(0, 1, 1), 7.0);
  EXPECT_EQ(y.at(0, 0, 0), 0.0);
}

TEST(Conv2d, Errors) {
  Tape tape;
  EXPECT_THROW(ops::conv2d(tape.constant(Tensor::zeros({2, 4, 4})), tape.constant(Tensor::zeros({1, 3, 3, 3})),
                           ops::Padding::same),
               DimensionError);
  EXPECT_THROW(ops::conv2d(tape.constant(Tensor::zeros({1, 2, 2})), tape.constant(Tensor::zeros({1, 1, 3, 3})),
                           ops::Padding::valid),
               DimensionError);
}

// ---------------------------------------------------------------------------

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(oracle::randn({2, 3, 2}, 4));
  tape.backward(ops::sum(x));
  EXPECT_EQ(x.grad(), Tensor::ones({2, 3, 2}));
}

TEST(Backward, LeastSquaresMatchesFiniteDifferences) {
  const Tensor W = oracle::randn({4, 3}, 21), x = oracle::randn({4, 1}, 22), y = oracle::randn({3, 1}, 23);
  auto loss = [&](Tape& t, Var w) {
    Var r = ops::sub(ops::matmul(ops::permute(w, {1, 0}), t.constant(x)), t.constant(y));
    return ops::scale(ops::sum(ops::mul(r, r)), 0.5);
  };
  Tape tape;
  Var w = tape.leaf(W);
  tape.backward(loss(tape, w));
  const Tensor numeric = finite_diff_grad(
      [&](const Tensor& v) {
        Tape t;
        return loss(t, t.constant(v)).value().item();
      },
      W);
  EXPECT_LT(max_relative_error(w.grad(), numeric), 1e-6);
}

TEST(Backward, GradientReachesHypernetworkWeights) {
  // theta = reshape(s · omega) generates a 3×2 weight, then y = x · theta.
  const Tensor s = oracle::randn({1, 4}, 31), omega = oracle::randn({4, 6}, 32), x = oracle::randn({1, 3}, 33);
  const Tensor target = oracle::randn({1, 2}, 34);
  auto loss = [&](Tape& t, Var om) {
    Var theta = ops::reshape(ops::matmul(t.constant(s), om), {3, 2});
    Var r = ops::sub(ops::matmul(t.constant(x), theta), t.constant(target));
    return ops::scale(ops::sum(ops::mul(r, r)), 0.5);
  };
  Tape tape;
  Var om = tape.leaf(omega);
  tape.backward(loss(tape, om));
  const Tensor numeric = finite_diff_grad(
      [&](const Tensor& v) {
        Tape t;
        return loss(t, t.constant(v)).value().item();
      },
      omega);
  EXPECT_LT(max_relative_error(om.grad(), numeric), 1e-6);
  double norm = 0.0;
  for (double g : om.grad().data()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Backward, Errors) {
  Tape tape;
  Var x = tape.leaf(oracle::randn({2, 2}, 1));
  Var unused = tape.leaf(oracle::randn({3}, 2));
  EXPECT_THROW(tape.backward(ops::tanh(x)), DimensionError);
  tape.backward(ops::sum(x));
  EXPECT_EQ(unused.grad(), Tensor::zeros({3}));  // disconnected leaf: zero, not an error
  EXPECT_THROW(tape.backward(ops::sum(x)), std::logic_error);
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    Tape tape;
    Var a = tape.leaf(oracle::randn({3, 4}, 5));
    Var b = tape.leaf(oracle::randn({4, 2}, 6));
    Var y = ops::tanh(ops::matmul(ops::sigmoid(a), b));
    tape.backward(ops::sum(ops::mul(y, y)));
    return std::make_tuple(y.value(), a.grad(), b.grad());
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, NonFiniteValuesAreReportedWhenChecking) {
  Tape checked(Tape::Options{true});
  Tensor bad = Tensor::zeros({2});
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(checked.leaf(bad), NumericError);
  Var big = checked.leaf(Tensor::vector({1e308}));
  EXPECT_THROW(ops::scale(big, 10.0), NumericError);

  Tape unchecked(Tape::Options{false});
  EXPECT_NO_THROW(unchecked.leaf(bad));
}

TEST(Backward, FaultInjectionBreaksTheNamedOp) {
  const Tensor a = oracle::randn({2, 3}, 1), b = oracle::randn({3, 2}, 2);
  auto rel_error = [&] {
    Tape tape;
    Var va = tape.leaf(a);
    tape.backward(ops::sum(ops::matmul(va, tape.constant(b))));
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& v) {
          Tape t;
          return ops::sum(ops::matmul(t.constant(v), t.constant(b))).value().item();
        },
        a);
    return max_relative_error(va.grad(), numeric);
  };
  fault::arm("matmul", 1.5);
  EXPECT_GT(rel_error(), 1e-2);
  fault::arm("tanh", 1.5);
  EXPECT_LT(rel_error(), 1e-8);
  fault::disarm();
  EXPECT_LT(rel_error(), 1e-8);
}

// ---------------------------------------------------------------------------

TEST(FiniteDiff, KnownDerivatives) {
  const Tensor g = finite_diff_grad([](const Tensor& x) { return x[0] * x[0]; }, Tensor::scalar(3.0), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
  const Tensor s = finite_diff_grad(
      [](const Tensor& x) {
        double sum = 0.0;
        for (double v : x.data()) sum += oracle::sigmoid(v);
        return sum;
      },
      Tensor::zeros({4}), 1e-5);
  for (double v : s.data()) EXPECT_NEAR(v, 0.25, 1e-8);
}

TEST(FiniteDiff, Errors) {
  EXPECT_THROW(finite_diff_grad([](const Tensor&) { return std::nan(""); }, Tensor::zeros({2})), NumericError);
  EXPECT_THROW(finite_diff_grad([](const Tensor& x) { return x[0]; }, Tensor::zeros({1}), 0.0), std::invalid_argument);
  EXPECT_THROW(finite_diff_grad([](const Tensor& x) { return x[0]; }, Tensor::zeros({1}), -1e-5), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Every primitive against central differences, 100 random instances each.

namespace {

struct OpProperty {
  const char* name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
  std::function<Var(const std::vector<Var>&)> op;
};

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor normal(Shape s, std::mt19937_64& rng) { return Tensor::normal(std::move(s), 1.0, rng); }

std::vector<OpProperty> properties() {
  auto pair = [](std::mt19937_64& r) {
    const Shape s{draw(r, 1, 4), draw(r, 1, 4)};
    return std::vector<Tensor>{normal(s, r), normal(s, r)};
  };
  auto single = [](std::mt19937_64& r) { return std::vector<Tensor>{normal({draw(r, 1, 3), draw(r, 1, 4), 2}, r)}; };
  return {
      {"matmul",
       [](std::mt19937_64& r) {
         const std::size_t m = draw(r, 1, 4), k = draw(r, 1, 4), n = draw(r, 1, 4);
         return std::vector<Tensor>{normal({m, k}, r), normal({k, n}, r)};
       },
       [](const std::vector<Var>& v) { return ops::matmul(v[0], v[1]); }},
      {"add", pair, [](const std::vector<Var>& v) { return ops::add(v[0], v[1]); }},
      {"sub", pair, [](const std::vector<Var>& v) { return ops::sub(v[0], v[1]); }},
      {"mul", pair, [](const std::vector<Var>& v) { return ops::mul(v[0], v[1]); }},
      {"sigmoid", single, [](const std::vector<Var>& v) { return ops::sigmoid(v[0]); }},
      {"tanh", single, [](const std::vector<Var>& v) { return ops::tanh(v[0]); }},
      {"scale", single, [](const std::vector<Var>& v) { return ops::scale(v[0], 0.37); }},
      {"sum", single, [](const std::vector<Var>& v) { return ops::sum(v[0]); }},
      {"reshape", single, [](const std::vector<Var>& v) { return ops::reshape(v[0], {v[0].value().numel(), 1}); }},
      {"permute", single, [](const std::vector<Var>& v) { return ops::permute(v[0], {1, 2, 0}); }},
      {"scale_along",
       [](std::mt19937_64& r) {
         const Shape s{draw(r, 1, 3), draw(r, 1, 3), draw(r, 1, 3)};
         return std::vector<Tensor>{normal(s, r), normal({s[1]}, r)};
       },
       [](const std::vector<Var>& v) { return ops::scale_along(v[0], v[1], 1); }},
      {"add_along",
       [](std::mt19937_64& r) {
         const Shape s{draw(r, 1, 3), draw(r, 1, 3)};
         return std::vector<Tensor>{normal(s, r), normal({s[0]}, r)};
       },
       [](const std::vector<Var>& v) { return ops::add_along(v[0], v[1], 0); }},
      {"concat",
       [](std::mt19937_64& r) {
         const std::size_t c = draw(r, 1, 3);
         return std::vector<Tensor>{normal({draw(r, 1, 3), c}, r), normal({draw(r, 1, 3), c}, r)};
       },
       [](const std::vector<Var>& v) { return ops::concat({v[0], v[1]}, 0); }},
      {"conv2d_same",
       [](std::mt19937_64& r) {
         const std::size_t ci = draw(r, 1, 3), k = 2 * draw(r, 0, 1) + 1;
         return std::vector<Tensor>{normal({ci, draw(r, 2, 5), draw(r, 2, 5)}, r), normal({draw(r, 1, 3), ci, k, k}, r)};
       },
       [](const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], ops::Padding::same); }},
      {"conv2d_valid",
       [](std::mt19937_64& r) {
         const std::size_t ci = draw(r, 1, 3), k = draw(r, 1, 3);
         return std::vector<Tensor>{normal({ci, draw(r, 3, 5), draw(r, 3, 5)}, r), normal({draw(r, 1, 3), ci, k, k}, r)};
       },
       [](const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], ops::Padding::valid); }},
      {"batched_matvec",
       [](std::mt19937_64& r) {
         const std::size_t b = draw(r, 1, 3), k = draw(r, 1, 4), n = draw(r, 1, 4);
         return std::vector<Tensor>{normal({b, k}, r), normal({b, k, n}, r)};
       },
       [](const std::vector<Var>& v) { return ops::batched_matvec(v[0], v[1]); }},
  };
}

}  // namespace

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferencesOver100Seeds) {
  const OpProperty prop = properties()[GetParam()];
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed * 7919 + GetParam());
    const auto inputs = prop.inputs(rng);
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = prop.op(leaves);
    // Random linear functional so every output entry gets a distinct weight.
    const Tensor w = normal(out.shape(), rng);
    tape.backward(ops::sum(ops::mul(out, tape.constant(w))));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const Tensor numeric = finite_diff_grad(
          [&](const Tensor& x) {
            Tape t;
            std::vector<Var> vars;
            for (std::size_t j = 0; j < inputs.size(); ++j) vars.push_back(t.constant(j == k ? x : inputs[j]));
            return dot(prop.op(vars).value(), w);
          },
          inputs[k], 1e-5);
      worst = std::max(worst, max_relative_error(leaves[k].grad(), numeric));
    }
  }
  EXPECT_LT(worst, 1e-4) << prop.name;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, OpGradient, ::testing::Range<std::size_t>(0, 16),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return std::string(properties()[info.param].name);
                         });
