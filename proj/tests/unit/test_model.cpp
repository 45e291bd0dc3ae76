#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "safenet/config.hpp"
#include "safenet/errors.hpp"
#include "safenet/model.hpp"
#include "safenet/train.hpp"
#include "test_support.hpp"

namespace safenet::model {
namespace {

using testing::random_tensor;

SAFENetConfig tiny_config() {
  SAFENetConfig cfg;
  cfg.embed.c_in = 3;
  cfg.embed.d_model = 8;
  cfg.ssa.d_model = 8;
  cfg.ssa.n_heads = 2;
  cfg.tcn.channels = 8;
  cfg.safd.weight_hidden = 6;
  cfg.window = 10;
  cfg.n_joints = 2;
  cfg.n_subjects = 3;
  return cfg;
}

TCNConfig tcn_config(std::size_t d, bool residual, Activation act) {
  TCNConfig cfg;
  cfg.channels = d;
  cfg.residual = residual;
  cfg.activation = act;
  return cfg;
}

TEST(TCN, DeltaKernelsWithoutResidualAreIdentity) {
  Rng rng(1);
  TCN tcn(tcn_config(4, false, Activation::kIdentity), rng);
  for (TCN::Conv& conv : tcn.convs()) {
    std::fill(conv.w.values().begin(), conv.w.values().end(), 0.0);
    std::fill(conv.b.values().begin(), conv.b.values().end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) conv.w.at(2, i, i) = 1.0;
  }
  const Tensor x = random_tensor({15, 4}, rng);
  EXPECT_LT(testing::max_abs_diff(tcn.apply(x), x), 1e-15);
}

TEST(TCN, CausalForEveryCutPoint) {
  Rng rng(2);
  TCN tcn(TCNConfig{.channels = 6}, rng);
  const Tensor x = random_tensor({20, 6}, rng);
  const Tensor full = tcn.apply(x);
  for (std::size_t tau = 0; tau < 20; ++tau) {
    Tensor cut = x;
    for (std::size_t i = tau + 1; i < 20; ++i) {
      for (std::size_t c = 0; c < 6; ++c) cut.at(i, c) = 0.0;
    }
    const Tensor y = tcn.apply(cut);
    for (std::size_t i = 0; i <= tau; ++i) {
      for (std::size_t c = 0; c < 6; ++c) ASSERT_EQ(y.at(i, c), full.at(i, c)) << "tau " << tau;
    }
  }
}

TEST(TCN, PerturbationOnlyAffectsLaterSteps) {
  Rng rng(3);
  TCN tcn(TCNConfig{.channels = 6}, rng);
  const Tensor x = random_tensor({20, 6}, rng);
  Tensor bumped = x;
  bumped.at(9, 2) += 0.5;
  const Tensor a = tcn.apply(x), b = tcn.apply(bumped);
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(a.at(i, c), b.at(i, c));
  }
  EXPECT_GT(testing::max_abs_diff(a, b), 0.0);
}

TEST(TCN, ReceptiveFieldMatchesGradientSupport) {
  const TCNConfig cfg = tcn_config(4, false, Activation::kIdentity);
  EXPECT_EQ(cfg.receptive_field(), 1u + 2u * (3u - 1u) * (1u + 2u));
  Rng rng(4);
  TCN tcn(cfg, rng);
  const std::size_t t = 30;
  Tensor x = random_tensor({1, t, 4}, rng);
  x.set_requires_grad(true);
  Tensor mask({1, t, 4});
  for (std::size_t c = 0; c < 4; ++c) mask.at(0, t - 1, c) = 1.0;
  Tape tape;
  ForwardContext ctx{tape, true};
  tape.backward(ops::sum(ops::mul(tcn.forward(ctx, tape.parameter(x)), tape.constant(mask))));
  std::size_t first = t;
  for (std::size_t i = 0; i < t; ++i) {
    bool any = false;
    for (std::size_t c = 0; c < 4; ++c) any = any || x.grad()[i * 4 + c] != 0.0;
    if (any) first = std::min(first, i);
  }
  EXPECT_EQ(t - first, cfg.receptive_field());
}

TEST(TCNConfig, RejectsBadDilations) {
  TCNConfig cfg;
  cfg.dilations = {2, 1};
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg.dilations = {1, 1};
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = TCNConfig{};
  cfg.kernel = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(Encode, DefaultWidthAndPurity) {
  SAFENet net(SAFENetConfig{}, 1);
  Rng rng(5);
  const Tensor w = random_tensor({50, 5}, rng, -2.0, 2.0);
  const Tensor a = net.encode(w);
  EXPECT_EQ(a.shape(), (Shape{64}));
  EXPECT_TRUE(testing::bit_equal(a, net.encode(w)));
}

TEST(Encode, TimePermutationChangesFeature) {
  SAFENet net(SAFENetConfig{}, 2);
  Rng rng(6);
  const Tensor w = random_tensor({50, 5}, rng, -2.0, 2.0);
  Tensor reversed({50, 5});
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t c = 0; c < 5; ++c) reversed.at(i, c) = w.at(49 - i, c);
  }
  EXPECT_GT(testing::max_abs_diff(net.encode(w), net.encode(reversed)), 1e-6);
}

TEST(Encode, ChannelMismatchIsDimensionError) {
  SAFENet net(SAFENetConfig{}, 3);
  EXPECT_THROW(net.encode(Tensor({50, 4})), DimensionError);
}

TEST(SAFD, TelescopingReconstruction) {
  Rng rng(7);
  for (std::size_t iters : {1u, 2u, 4u}) {
    SAFD safd(SAFDConfig{.iterations = iters}, attention::SSAConfig{}, rng);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor x1 = random_tensor({64}, rng, -3.0, 3.0);
      const DecompositionOutput out = safd.decompose(x1);
      ASSERT_EQ(out.q_list.size(), iters);
      ASSERT_EQ(out.r_list.size(), iters);
      Tensor q_sum({64});
      for (const Tensor& q : out.q_list) {
        for (std::size_t i = 0; i < 64; ++i) q_sum[i] += q[i];
      }
      EXPECT_LT(testing::max_abs_diff(out.f_k, q_sum), 1e-9);
      EXPECT_TRUE(testing::bit_equal(out.f_b, out.r_list.back()));
      for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(q_sum[i] + out.r_list.back()[i], x1[i], 1e-9);
    }
  }
}

TEST(SAFD, ClosedGateLeavesEverythingBiological) {
  Rng rng(8);
  SAFD safd(SAFDConfig{.iterations = 3}, attention::SSAConfig{}, rng);
  for (WeightModule& w : safd.weight_modules()) {
    std::fill(w.w2.values().begin(), w.w2.values().end(), 0.0);
    std::fill(w.b2.values().begin(), w.b2.values().end(), -1000.0);
  }
  const Tensor x1 = random_tensor({64}, rng);
  const DecompositionOutput out = safd.decompose(x1);
  for (double v : out.f_k.values()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(testing::bit_equal(out.f_b, x1));
}

TEST(SAFD, SingleIterationUnrolls) {
  Rng rng(9);
  SAFD safd(SAFDConfig{.iterations = 1}, attention::SSAConfig{}, rng);
  const Tensor x1 = random_tensor({64}, rng);
  const Tensor p = safd.attention_blocks()[0].apply(x1);
  const Tensor w = safd.weight_modules()[0].apply(p);
  const DecompositionOutput out = safd.decompose(x1);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_NEAR(out.f_k[i], w[i] * p[i], 1e-12);
    EXPECT_NEAR(out.f_b[i], x1[i] - out.f_k[i], 1e-12);
  }
}

TEST(WeightModule, OutputsAreOpenUnitInterval) {
  Rng rng(10);
  WeightModule w(16, 8, rng);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor out = w.apply(random_tensor({16}, rng, -5.0, 5.0));
    for (double v : out.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(WeightModule, ZeroInputWithZeroBiasesIsHalf) {
  Rng rng(11);
  WeightModule w(16, 8, rng);
  std::fill(w.b1.values().begin(), w.b1.values().end(), 0.0);
  std::fill(w.b2.values().begin(), w.b2.values().end(), 0.0);
  const Tensor out = w.apply(Tensor({16}));
  for (double v : out.values()) EXPECT_EQ(v, 0.5);
}

TEST(WeightModule, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  WeightModule w(6, 4, rng);
  const Tensor p = random_tensor({3, 6}, rng);
  auto f = [&](Tape& tape) {
    ForwardContext ctx{tape, true};
    Var out = w.forward(ctx, tape.constant(p));
    Rng r(13, 0x70726f6a);
    return ops::sum(ops::mul(out, tape.constant(random_tensor(out.shape(), r))));
  };
  for (Tensor* t : {&w.w1, &w.b1, &w.w2, &w.b2}) EXPECT_LT(grad_check(f, *t), 1e-6);
}

TEST(Heads, ZeroFeaturesAndBiasGiveZeroOutputs) {
  SAFENet net(tiny_config(), 4);
  std::fill(net.reg_b().values().begin(), net.reg_b().values().end(), 0.0);
  std::fill(net.cls_b().values().begin(), net.cls_b().values().end(), 0.0);
  const auto [angles, logits] = net.heads(Tensor({8}), Tensor({8}));
  EXPECT_EQ(angles.shape(), (Shape{2}));
  EXPECT_EQ(logits.shape(), (Shape{3}));
  for (double v : angles.values()) EXPECT_EQ(v, 0.0);
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(Losses, MseHandExample) {
  Tape tape(false);
  EXPECT_DOUBLE_EQ(loss_mse(tape.constant(Tensor({1, 2}, {0, 0})), tape.constant(Tensor({1, 2}, {3, 4}))).value()[0],
                   12.5);
  const Tensor a({1, 2}, {1.5, -2.0});
  EXPECT_EQ(loss_mse(tape.constant(a), tape.constant(a)).value()[0], 0.0);
  EXPECT_THROW(loss_mse(tape.constant(Tensor({1, 2})), tape.constant(Tensor({1, 3}))), DimensionError);
}

TEST(Losses, MseInvariantToJointPermutation) {
  Rng rng(13);
  const Tensor p = random_tensor({4, 3}, rng), t = random_tensor({4, 3}, rng);
  Tensor pp({4, 3}), tp({4, 3});
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t j = 0; j < 3; ++j) {
      pp.at(b, j) = p.at(b, (j + 1) % 3);
      tp.at(b, j) = t.at(b, (j + 1) % 3);
    }
  }
  Tape tape(false);
  EXPECT_NEAR(loss_mse(tape.constant(p), tape.constant(t)).value()[0],
              loss_mse(tape.constant(pp), tape.constant(tp)).value()[0], 1e-15);
}

TEST(Losses, CrossEntropyExamples) {
  Tape tape(false);
  const std::vector<int> labels{5, 0};
  EXPECT_NEAR(loss_ce(tape.constant(Tensor({2, 8})), labels).value()[0], std::log(8.0), 1e-12);
  Tensor confident({1, 3}, {0.0, 800.0, 0.0});
  EXPECT_LT(loss_ce(tape.constant(confident), std::vector<int>{1}).value()[0], 1e-300);
  Rng rng(14);
  Tensor logits = random_tensor({1, 4}, rng);
  const double before = loss_ce(tape.constant(logits), std::vector<int>{2}).value()[0];
  for (double& v : logits.values()) v += 123.0;
  EXPECT_NEAR(loss_ce(tape.constant(logits), std::vector<int>{2}).value()[0], before, 1e-12);
  EXPECT_THROW(loss_ce(tape.constant(logits), std::vector<int>{4}), RangeError);
}

TEST(Losses, OrthogonalityExamplesForBothForms) {
  Tape tape(false);
  const double h = 1.0 / std::sqrt(2.0);
  for (OrthForm form : {OrthForm::kSquaredCosine, OrthForm::kSquaredInner}) {
    EXPECT_EQ(loss_orth(tape.constant(Tensor({1, 2}, {1, 0})), tape.constant(Tensor({1, 2}, {0, 1})), form).value()[0],
              0.0);
    EXPECT_NEAR(
        loss_orth(tape.constant(Tensor({1, 2}, {h, h})), tape.constant(Tensor({1, 2}, {h, h})), form).value()[0],
        1.0, 1e-12);
  }
  // (2,0) . (1,1) = 2; cos^2 = 1/2.
  const Tensor a({1, 2}, {2, 0}), b({1, 2}, {1, 1});
  EXPECT_NEAR(loss_orth(tape.constant(a), tape.constant(b), OrthForm::kSquaredInner).value()[0], 4.0, 1e-12);
  EXPECT_NEAR(loss_orth(tape.constant(a), tape.constant(b), OrthForm::kSquaredCosine).value()[0], 0.5, 1e-12);
}

TEST(Losses, OrthogonalityIsNonNegativeAndBatchAveraged) {
  Rng rng(15);
  Tape tape(false);
  for (OrthForm form : {OrthForm::kSquaredCosine, OrthForm::kSquaredInner}) {
    const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({5, 7}, rng);
    double expected = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        dot += a.at(i, j) * b.at(i, j);
        na += a.at(i, j) * a.at(i, j);
        nb += b.at(i, j) * b.at(i, j);
      }
      expected += (form == OrthForm::kSquaredInner ? dot * dot : dot * dot / (na * nb)) / 5.0;
    }
    const double got = loss_orth(tape.constant(a), tape.constant(b), form).value()[0];
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, expected, 1e-6 * std::max(1.0, expected));
  }
}

TEST(Losses, TotalIsWeightedSum) {
  EXPECT_NEAR(loss_total(2.0, 1.0, 0.4, 0.1, 1.0, 0.5), 1.4, 1e-15);
  EXPECT_EQ(loss_total(0.0, 0.0, 0.0, 0.1, 1.0, 0.5), 0.0);
  Tensor l_re({1}, {2.0});
  l_re.set_requires_grad(true);
  Tape tape;
  Var total = loss_total(tape.parameter(l_re), tape.constant(Tensor({1}, {1.0})), tape.constant(Tensor({1}, {0.4})),
                         0.1, 1.0, 0.5);
  EXPECT_NEAR(total.value()[0], 1.4, 1e-15);
  tape.backward(total);
  EXPECT_DOUBLE_EQ(l_re.grad()[0], 0.1);
}

TEST(Forward, BatchShapesAndEvalDeterminism) {
  SAFENet net(tiny_config(), 5);
  Rng rng(16);
  const Tensor x = random_tensor({4, 10, 3}, rng);
  auto run = [&] {
    Tape tape(false);
    ForwardContext ctx{tape};
    ForwardOutput out = net.forward(ctx, tape.constant(x));
    return std::pair{out.angles.value(), out.logits.value()};
  };
  const auto [a1, l1] = run();
  const auto [a2, l2] = run();
  EXPECT_EQ(a1.shape(), (Shape{4, 2}));
  EXPECT_EQ(l1.shape(), (Shape{4, 3}));
  EXPECT_TRUE(testing::bit_equal(a1, a2));
  EXPECT_TRUE(testing::bit_equal(l1, l2));
}

TEST(Forward, WithoutSafdHeadsReadPooledFeature) {
  SAFENetConfig cfg = tiny_config();
  cfg.safd_enabled = false;
  SAFENet net(cfg, 6);
  Rng rng(17);
  const Tensor x = random_tensor({1, 10, 3}, rng);
  Tape tape(false);
  ForwardContext ctx{tape};
  ForwardOutput out = net.forward(ctx, tape.constant(x));
  const auto [angles, logits] = net.heads(out.x1.value().reshaped({8}), out.x1.value().reshaped({8}));
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.angles.value()[j], angles[j], 1e-12);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.logits.value()[c], logits[c], 1e-12);
}

TEST(FullLoss, GradientMatchesFiniteDifferencesInPassThroughMode) {
  SAFENet net(tiny_config(), 7);
  Rng rng(18);
  const Tensor x = random_tensor({4, 10, 3}, rng);
  const Tensor y = random_tensor({4, 2}, rng);
  const std::vector<int> labels{0, 2, 1, 2};
  auto f = [&](Tape& tape) {
    ForwardContext ctx{tape, true, true};
    ForwardOutput out = net.forward(ctx, tape.constant(x));
    return net.loss(ctx, out, tape.constant(y), labels).total;
  };
  double worst = 0.0;
  std::string worst_name;
  net.visit([&](const std::string& name, Tensor& t, SlotKind kind) {
    if (kind != SlotKind::kParameter) return;
    const double err = grad_check(f, t);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  });
  EXPECT_LT(worst, 1e-3) << worst_name;
}

TEST(Checkpoint, RoundTripRestoresOutputsBitExactly) {
  const auto path = std::filesystem::temp_directory_path() / "safenet_test_ckpt.sfn";
  SAFENet a(tiny_config(), 8);
  save_checkpoint(a, path, nlohmann::json{{"seed", 8}});
  EXPECT_EQ(std::filesystem::file_size(path), checkpoint_size(a, nlohmann::json{{"seed", 8}}));
  EXPECT_EQ(config::echo(read_checkpoint_config(path)), config::echo(tiny_config()));
  SAFENet b(tiny_config(), 99);
  load_checkpoint(b, path);
  Rng rng(19);
  const Tensor w = random_tensor({10, 3}, rng);
  const Tensor xa = a.encode(w), xb = b.encode(w);
  EXPECT_TRUE(testing::bit_equal(xa, xb));
  const auto [ha, la] = a.heads(xa, xa);
  const auto [hb, lb] = b.heads(xb, xb);
  EXPECT_TRUE(testing::bit_equal(ha, hb));
  std::filesystem::remove(path);
}

TEST(Checkpoint, ConfigMismatchAndCorruptionAreRejected) {
  const auto path = std::filesystem::temp_directory_path() / "safenet_test_ckpt_bad.sfn";
  SAFENet a(tiny_config(), 9);
  save_checkpoint(a, path);
  SAFENetConfig other = tiny_config();
  other.gamma = 0.25;
  SAFENet b(other, 9);
  EXPECT_THROW(load_checkpoint(b, path), ContractError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "SFN1";
  }
  EXPECT_THROW(load_checkpoint(a, path), ParseError);
  std::filesystem::remove(path);
}

// Toy task: labels shift every channel, targets follow the channel means.
dsp::WindowedDataset toy_dataset(std::size_t n, Rng& rng) {
  dsp::WindowedDataset ds;
  ds.windows = Tensor({n, 10, 3});
  ds.targets = Tensor({n, 2});
  ds.length = 10;
  ds.step = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 3);
    ds.labels.push_back(label);
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = rng.normal() + 0.8 * (label - 1.0) * (c == 2 ? 1.0 : 0.0);
        ds.windows.at(i, t, c) = v;
        if (c == 0) m0 += v / 10.0;
        if (c == 1) m1 += v / 10.0;
      }
    }
    ds.targets.at(i, 0) = 2.0 * m0;
    ds.targets.at(i, 1) = m0 - m1;
  }
  return ds;
}

double mean_abs_cosine(SAFENet& net, const dsp::WindowedDataset& ds) {
  Tape tape(false);
  ForwardContext ctx{tape};
  ForwardOutput out = net.forward(ctx, tape.constant(ds.windows));
  const Tensor& k = out.parts.f_k.value();
  const Tensor& b = out.parts.f_b.value();
  const std::size_t n = k.dim(0), d = k.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, nk = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += k.at(i, j) * b.at(i, j);
      nk += k.at(i, j) * k.at(i, j);
      nb += b.at(i, j) * b.at(i, j);
    }
    total += std::abs(dot) / std::sqrt(nk * nb + 1e-300);
  }
  return total / double(n);
}

TEST(OrthogonalityProperty, LargeGammaReducesCosineOnToyTask) {
  int wins = 0;
  double with = 0.0, without = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(100 + seed);
    const dsp::WindowedDataset train_ds = toy_dataset(120, rng);
    const dsp::WindowedDataset val_ds = toy_dataset(30, rng);
    train::TrainConfig tc;
    tc.batch_size = 20;
    tc.epochs = 8;
    tc.lr = 5e-3;
    tc.patience = 100;
    double cos[2];
    for (int large = 0; large < 2; ++large) {
      SAFENetConfig cfg = tiny_config();
      cfg.gamma = large ? 5.0 : 0.0;
      SAFENet net(cfg, seed);
      train::fit(net, train_ds, val_ds, tc, seed);
      cos[large] = mean_abs_cosine(net, val_ds);
    }
    wins += cos[1] < cos[0];
    without += cos[0] / 5.0;
    with += cos[1] / 5.0;
  }
  EXPECT_GE(wins, 4);
  EXPECT_LT(with, without);
}

}  // namespace
}  // namespace safenet::model
