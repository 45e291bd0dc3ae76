#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "safenet/autodiff.hpp"
#include "safenet/errors.hpp"
#include "safenet/ops.hpp"
#include "test_support.hpp"

namespace safenet {
namespace {

using testing::projected;
using testing::random_tensor;

TEST(Tensor, ElementCountMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  t.set_requires_grad(true);
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(Matmul, IdentityIsNeutral) {
  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  Tape tape(false);
  EXPECT_TRUE(testing::bit_equal(ops::matmul(tape.constant(a), tape.constant(eye)).value(), a));
}

TEST(Matmul, HandEvaluatedProduct) {
  Tape tape(false);
  Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor({2, 1}, {1, 1}));
  const Tensor c = ops::matmul(a, b).value();
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 3.0);
  EXPECT_EQ(c[1], 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape(false);
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({4, 5}));
  try {
    ops::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(2);
  Tensor a = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({5, 2}, rng);
  auto f = [&](Tape& t) { return ops::sum(ops::matmul(t.parameter(a), t.constant(b))); };
  EXPECT_LT(grad_check(f, a), 1e-6);
}

TEST(Matmul, MatchesTripleLoopOnLargeShapes) {
  Rng rng(3);
  Tensor a = random_tensor({300, 70}, rng);
  Tensor b = random_tensor({70, 33}, rng);
  Tape tape(false);
  const Tensor c = ops::matmul(tape.constant(a), tape.constant(b)).value();
  EXPECT_LT(testing::max_abs_diff(c, testing::dense_matmul(a, b)), 1e-12);
}

TEST(Softmax, UniformRow) {
  Tape tape(false);
  const Tensor y = ops::softmax(tape.constant(Tensor({1, 3})), 1).value();
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tape tape(false);
  const Tensor y = ops::softmax(tape.constant(Tensor({1, 2}, {1000.0, 0.0})), 1).value();
  EXPECT_TRUE(y.all_finite());
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({3, 4, 7}, rng, -30.0, 30.0);
    Tape tape(false);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor y = ops::softmax(tape.constant(x), axis).value();
      const std::size_t n = x.dim(axis);
      const std::size_t inner = axis == 2 ? 1 : (axis == 1 ? 7 : 28);
      const std::size_t outer = x.size() / (n * inner);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          double s = 0.0;
          for (std::size_t k = 0; k < n; ++k) {
            const double v = y[(o * n + k) * inner + i];
            EXPECT_GE(v, 0.0);
            s += v;
          }
          EXPECT_NEAR(s, 1.0, 1e-12);
        }
      }
    }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor x = random_tensor({4, 6}, rng, -2.0, 2.0);
  EXPECT_LT(grad_check(projected(x, [](Var v) { return ops::softmax(v, 1); }, 9), x), 1e-6);
}

TEST(BatchNorm, TrainingModeStandardizesEachChannel) {
  Rng rng(6);
  Tensor x = random_tensor({4, 10, 3}, rng, -5.0, 5.0);
  ops::BatchNormStats stats(3);
  Tape tape(false);
  const Tensor y = ops::batch_norm(tape.constant(x), std::nullopt, std::nullopt, stats, true).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 40; ++r) mean += y[r * 3 + c];
    mean /= 40.0;
    for (std::size_t r = 0; r < 40; ++r) var += (y[r * 3 + c] - mean) * (y[r * 3 + c] - mean);
    var /= 40.0;
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(BatchNorm, ConstantChannelMapsToZero) {
  Tensor x({5, 2}, 3.25);
  ops::BatchNormStats stats(2);
  Tape tape(false);
  const Tensor y = ops::batch_norm(tape.constant(x), std::nullopt, std::nullopt, stats, true).value();
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, RunningStatsUseMomentum) {
  Tensor x({2, 1}, {1.0, 3.0});
  ops::BatchNormStats stats(1);
  Tape tape(false);
  ops::batch_norm(tape.constant(x), std::nullopt, std::nullopt, stats, true);
  EXPECT_NEAR(stats.running_mean[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, EvalModeIsFrozenAffineMap) {
  Rng rng(7);
  ops::BatchNormStats stats(3);
  stats.running_mean = Tensor({3}, {0.5, -1.0, 2.0});
  stats.running_var = Tensor({3}, {4.0, 0.25, 1.0});
  Tensor gamma({3}, {2.0, 1.0, -1.0});
  Tensor beta({3}, {0.1, 0.2, 0.3});
  Tensor x = random_tensor({6, 3}, rng);
  Tape tape(false);
  const Tensor y = ops::batch_norm(tape.constant(x), tape.constant(gamma), tape.constant(beta), stats, false).value();
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double expect =
          gamma[c] * (x.at(r, c) - stats.running_mean[c]) / std::sqrt(stats.running_var[c] + 1e-5) + beta[c];
      EXPECT_NEAR(y.at(r, c), expect, 1e-14);
    }
  }
  EXPECT_DOUBLE_EQ(stats.running_mean[0], 0.5);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(8);
  Tensor x = random_tensor({3, 4}, rng);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(tape.parameter(x)));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, LinearRegressionClosedForm) {
  Tensor w({1}, {0.7});
  w.set_requires_grad(true);
  const Tensor x({4, 1}, {1.0, -2.0, 0.5, 3.0});
  const Tensor y({4, 1}, {2.0, 1.0, -1.0, 0.0});
  Tape tape;
  Var pred = ops::linear(tape.constant(x), ops::reshape(tape.parameter(w), {1, 1}));
  tape.backward(ops::mse_loss(pred, tape.constant(y)));
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) expect += 2.0 * (w[0] * x[i] - y[i]) * x[i];
  EXPECT_NEAR(w.grad()[0], expect / 4.0, 1e-14);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape tape;
  Tensor x({2});
  x.set_requires_grad(true);
  EXPECT_THROW(tape.backward(tape.parameter(x)), DimensionError);
}

TEST(Backward, UnusedParameterGradientIsZero) {
  Tensor used({2}, 1.0), unused({2}, 1.0);
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape tape;
  tape.parameter(unused);
  tape.backward(ops::sum(tape.parameter(used)));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, VisitsEachNodeOnce) {
  Rng rng(9);
  Tensor x = random_tensor({3}, rng);
  x.set_requires_grad(true);
  Tape tape;
  Var a = tape.parameter(x);
  Var b = ops::mul(a, a);
  Var c = ops::add(b, a);
  tape.backward(ops::sum(c));
  EXPECT_EQ(tape.visited(), tape.size());
  EXPECT_THROW(tape.backward(ops::sum(c)), ContractError);
}

TEST(Backward, RepeatedRunsAreBitIdentical) {
  auto run = [] {
    Rng rng(10);
    Tensor w = random_tensor({8, 5}, rng);
    Tensor x = random_tensor({6, 8}, rng);
    w.set_requires_grad(true);
    Tape tape;
    Var h = ops::sigmoid(ops::linear(tape.constant(x), tape.parameter(w)));
    Var loss = ops::mean(ops::mul(h, h));
    tape.backward(loss);
    return std::make_pair(loss.value()[0], std::vector<double>(w.grad().begin(), w.grad().end()));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(GradCheck, SumOfSquaresIsExact) {
  Rng rng(11);
  Tensor x = random_tensor({10}, rng, -3.0, 3.0);
  auto f = [&](Tape& t) {
    Var v = t.parameter(x);
    return ops::sum(ops::mul(v, v));
  };
  EXPECT_LT(grad_check(f, x), 1e-8);
}

TEST(GradCheck, ZeroStepIsRejected) {
  Tensor x({2}, 1.0);
  auto f = [&](Tape& t) { return ops::sum(t.parameter(x)); };
  EXPECT_THROW(grad_check(f, x, 0.0), ContractError);
}

// Every differentiable operation against central differences at random points.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, EveryOperationMatchesFiniteDifferences) {
  const std::uint64_t seed = 100 + static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  Tensor x = random_tensor({2, 5, 3}, rng);
  const Tensor other = random_tensor({2, 5, 3}, rng);
  const Tensor row = random_tensor({3}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor kernel = random_tensor({3, 3, 2}, rng);
  const Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
  const Tensor beta = random_tensor({3}, rng);
  const Tensor labels_target = random_tensor({10, 3}, rng);
  const std::vector<int> labels = {0, 2, 1, 1, 0, 2, 2, 0, 1, 0};
  const double tol = 1e-3;

  struct Case {
    const char* name;
    std::function<Var(Var)> f;
  };
  const std::vector<Case> cases = {
      {"add", [&](Var v) { return ops::add(v, v.tape().constant(other)); }},
      {"sub", [&](Var v) { return ops::sub(v.tape().constant(other), v); }},
      {"mul", [&](Var v) { return ops::mul(v, v.tape().constant(other)); }},
      {"scale", [&](Var v) { return ops::scale(v, -1.7); }},
      {"add_broadcast", [&](Var v) { return ops::add_broadcast(v, v.tape().constant(row)); }},
      {"sigmoid", [&](Var v) { return ops::sigmoid(v); }},
      {"linear", [&](Var v) { return ops::linear(v, v.tape().constant(w)); }},
      {"conv1d", [&](Var v) { return ops::conv1d(v, v.tape().constant(kernel), 2, 4, 0); }},
      {"softmax", [&](Var v) { return ops::softmax(v, 1); }},
      {"batch_norm_train",
       [&](Var v) {
         static ops::BatchNormStats stats(3);
         return ops::batch_norm(v, v.tape().constant(gamma), v.tape().constant(beta), stats, true);
       }},
      {"batch_norm_eval",
       [&](Var v) {
         static ops::BatchNormStats stats(3);
         return ops::batch_norm(v, v.tape().constant(gamma), v.tape().constant(beta), stats, false);
       }},
      {"reshape", [&](Var v) { return ops::reshape(v, {6, 5}); }},
      {"mean_axis", [&](Var v) { return ops::mean_axis(v, 1); }},
      {"mean", [&](Var v) { return ops::mean(ops::mul(v, v)); }},
      {"mse_loss", [&](Var v) { return ops::mse_loss(ops::reshape(v, {10, 3}), v.tape().constant(labels_target)); }},
      {"cross_entropy", [&](Var v) { return ops::cross_entropy(ops::reshape(v, {10, 3}), labels); }},
      {"cosine_sq_loss",
       [&](Var v) { return ops::cosine_sq_loss(ops::reshape(v, {10, 3}), v.tape().constant(labels_target)); }},
      {"weighted_sum",
       [&](Var v) {
         const Var terms[] = {ops::mean(ops::mul(v, v)), ops::sum(v)};
         const double weights[] = {0.3, -2.0};
         return ops::weighted_sum(terms, weights);
       }},
  };
  for (const Case& c : cases) {
    EXPECT_LT(grad_check(projected(x, c.f, seed), x), tol) << c.name;
  }
}

TEST_P(OpGradient, ReluAwayFromTheKink) {
  Rng rng(200 + static_cast<std::uint64_t>(GetParam()));
  Tensor x = random_tensor({12}, rng);
  for (double& v : x.values()) v = v < 0 ? v - 0.1 : v + 0.1;
  EXPECT_LT(grad_check(projected(x, [](Var v) { return ops::relu(v); }, 3), x), 1e-6);
}

TEST_P(OpGradient, ConvolutionWeightGradient) {
  Rng rng(300 + static_cast<std::uint64_t>(GetParam()));
  const Tensor x = random_tensor({2, 9, 3}, rng);
  Tensor w = random_tensor({3, 3, 4}, rng);
  auto f = [&](Tape& t) {
    Rng r(7);
    Var y = ops::conv1d(t.constant(x), t.parameter(w), 1, 1, 1);
    return ops::sum(ops::mul(y, t.constant(random_tensor(y.shape(), r))));
  };
  EXPECT_LT(grad_check(f, w), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(RandomPoints, OpGradient, ::testing::Range(0, 5));

}  // namespace
}  // namespace safenet
