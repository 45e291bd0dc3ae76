#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "safenet/attention.hpp"
#include "safenet/errors.hpp"
#include "safenet/ops.hpp"
#include "test_support.hpp"

namespace safenet::attention {
namespace {

using testing::random_binary;
using testing::random_tensor;

TEST(PositionalEncoding, FirstRowAlternatesZeroOne) {
  const Tensor pe = positional_encoding(5, 8);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(pe.at(0, c), c % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEncoding, MatchesClosedForm) {
  const Tensor pe = positional_encoding(50, 64);
  for (std::size_t pos : {1u, 17u, 49u}) {
    for (std::size_t k = 0; k < 32; ++k) {
      const double angle = pos / std::pow(10000.0, 2.0 * k / 64.0);
      EXPECT_NEAR(pe.at(pos, 2 * k), std::sin(angle), 1e-12);
      EXPECT_NEAR(pe.at(pos, 2 * k + 1), std::cos(angle), 1e-12);
    }
  }
}

TEST(Embed, ZeroInputGivesPositionalEncoding) {
  Rng rng(1);
  DataEmbedding embed(EmbedConfig{}, rng);
  const Tensor e = embed.embed(Tensor({50, 5}));
  EXPECT_TRUE(testing::bit_equal(e, positional_encoding(50, 64)));
}

TEST(Embed, OutputLengthEqualsInputLength) {
  Rng rng(2);
  DataEmbedding embed(EmbedConfig{}, rng);
  for (std::size_t t : {1u, 2u, 3u, 17u, 50u}) {
    EXPECT_EQ(embed.embed(random_tensor({t, 5}, rng)).shape(), (Shape{t, 64}));
  }
}

TEST(Embed, ChannelMismatchIsDimensionError) {
  Rng rng(3);
  DataEmbedding embed(EmbedConfig{}, rng);
  EXPECT_THROW(embed.embed(Tensor({50, 4})), DimensionError);
}

TEST(Embed, ConvolutionIsSamePadded) {
  Rng rng(4);
  EmbedConfig cfg;
  cfg.c_in = 2;
  cfg.d_model = 4;
  DataEmbedding embed(cfg, rng);
  const Tensor x = random_tensor({6, 2}, rng);
  const Tensor e = embed.embed(x);
  const Tensor pe = positional_encoding(6, 4);
  const Tensor& w = embed.conv_weight();
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t o = 0; o < 4; ++o) {
      double s = pe.at(t, o);
      for (std::size_t k = 0; k < 3; ++k) {
        const long src = static_cast<long>(t + k) - 1;
        if (src < 0 || src >= 6) continue;
        for (std::size_t c = 0; c < 2; ++c) s += w.at(k, c, o) * x.at(static_cast<std::size_t>(src), c);
      }
      EXPECT_NEAR(e.at(t, o), s, 1e-12);
    }
  }
}

TEST(ProjectQKV, QueriesAreBinaryAndKeysLinear) {
  Rng rng(5);
  ProjectionWeights w(8);
  w.w_q = random_tensor({8, 8}, rng);
  w.w_v = random_tensor({8, 8}, rng);
  w.w_k = Tensor({8, 8});
  for (std::size_t i = 0; i < 8; ++i) w.w_k.at(i, i) = 1.0;
  const Tensor e = random_tensor({10, 8}, rng, -2.0, 2.0);
  const QKV qkv = project_qkv(w, snn::LIFConfig{}, e);
  for (double v : qkv.q_spike.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  EXPECT_TRUE(testing::bit_equal(qkv.k, e));
  EXPECT_LT(testing::max_abs_diff(qkv.v, testing::dense_matmul(e, w.w_v)), 1e-12);
}

TEST(ProjectQKV, ZeroEmbeddingGivesNoSpikes) {
  Rng rng(6);
  ProjectionWeights w(8);
  w.w_q = random_tensor({8, 8}, rng);
  const QKV qkv = project_qkv(w, snn::LIFConfig{}, Tensor({10, 8}));
  for (double v : qkv.q_spike.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpikeMatmul, WorkedExampleSumsSelectedKeys) {
  const Tensor q({1, 4}, {1, 0, 1, 0});
  const Tensor k_t({4, 1}, {-0.1, 0.5, -0.3, 0.2});
  const Tensor s = spike_matmul(q, k_t);
  EXPECT_EQ(s[0], -0.1 + -0.3);
  EXPECT_NEAR(s[0], -0.4, 1e-15);
}

TEST(SpikeMatmul, EmptyAndFullRows) {
  Rng rng(7);
  const Tensor k_t = random_tensor({5, 3}, rng);
  Tensor q({2, 5});
  for (std::size_t c = 0; c < 5; ++c) q.at(1, c) = 1.0;
  const Tensor s = spike_matmul(q, k_t);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(s.at(0, j), 0.0);
    double col = 0.0;
    for (std::size_t c = 0; c < 5; ++c) col += k_t.at(c, j);
    EXPECT_EQ(s.at(1, j), col);
  }
}

TEST(SpikeMatmul, NonBinaryQueryIsContractError) {
  EXPECT_THROW(spike_matmul(Tensor({1, 2}, {1.0, 0.5}), Tensor({2, 2})), ContractError);
}

TEST(SpikeMatmul, EqualsDenseProductExactly) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = 1 + rng.below(50), d = 1 + rng.below(64);
    const Tensor q = random_binary({t, d}, rng, rng.uniform());
    const Tensor k_t = random_tensor({d, t}, rng);
    EXPECT_TRUE(testing::bit_equal(spike_matmul(q, k_t), testing::dense_matmul(q, k_t)));
  }
}

Tensor dense_measure(const Tensor& q, const Tensor& k, std::size_t d) {
  const Tensor s = testing::dense_matmul(q, testing::transposed(k));
  const std::size_t t = q.dim(0), l = k.dim(0);
  Tensor m({t});
  for (std::size_t i = 0; i < t; ++i) {
    double mx = -INFINITY, mean = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      const double v = s.at(i, j) / std::sqrt(double(d));
      mx = std::max(mx, v);
      mean += v / double(l);
    }
    m[i] = mx - mean;
  }
  return m;
}

TEST(SparsityMeasure, IdenticalKeysGiveZero) {
  Rng rng(9);
  const Tensor q = random_binary({6, 4}, rng);
  Tensor k({6, 4});
  const Tensor row = random_tensor({4}, rng);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 4; ++c) k.at(i, c) = row[c];
  }
  const Tensor m = sparsity_measure(q, k, 4);
  for (double v : m.values()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(SparsityMeasure, PeakedRowBeatsUniformRow) {
  // Row 0 attends to one key strongly; row 1 sees identical scores.
  const Tensor q({2, 2}, {1, 0, 0, 1});
  const Tensor k({3, 2}, {5, 1, 0, 1, 0, 1});
  const Tensor m = sparsity_measure(q, k, 2);
  EXPECT_GT(m[0], m[1]);
  EXPECT_NEAR(m[1], 0.0, 1e-15);
}

TEST(SparsityMeasure, MatchesDenseOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t t = 1 + rng.below(50), d = 1 + rng.below(64);
    const Tensor q = random_binary({t, d}, rng);
    const Tensor k = random_tensor({t, d}, rng);
    EXPECT_LT(testing::max_abs_diff(sparsity_measure(q, k, d), dense_measure(q, k, d)), 1e-12);
  }
}

TEST(SelectActive, DescendingWithLowerIndexOnTies) {
  const Tensor m({6}, {0.5, 0.9, 0.5, 0.1, 0.9, 0.5});
  EXPECT_EQ(select_active(m, 4), (std::vector<std::size_t>{1, 4, 0, 2}));
  EXPECT_TRUE(select_active(m, 0).empty());
}

TEST(ActiveQueryCount, SamplingRule) {
  EXPECT_EQ(active_query_count(50, 5), 20u);  // 5 * ceil(ln 50) = 5 * 4
  EXPECT_EQ(active_query_count(10, 5), 10u);  // capped at t
  EXPECT_EQ(active_query_count(1, 5), 0u);    // ln 1 = 0
  EXPECT_THROW(active_query_count(0, 5), LengthError);
}

SSAConfig small_cfg(std::size_t d, std::size_t heads = 1) {
  SSAConfig cfg;
  cfg.d_model = d;
  cfg.n_heads = heads;
  return cfg;
}

TEST(SparseAttention, AllActiveEqualsDenseAttention) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = 1 + rng.below(50), d = 1 + rng.below(64);
    const Tensor q = random_binary({t, d}, rng);
    const Tensor k = random_tensor({t, d}, rng);
    const Tensor v = random_tensor({t, d}, rng);
    const Tensor out = sparse_attention(q, k, v, small_cfg(d), t);
    EXPECT_LT(testing::max_abs_diff(out, testing::dense_attention(q, k, v)), 1e-9);
  }
}

TEST(SparseAttention, AllLazyRowsAreValueMean) {
  Rng rng(12);
  const Tensor q = random_binary({9, 4}, rng);
  const Tensor k = random_tensor({9, 4}, rng);
  const Tensor v = random_tensor({9, 4}, rng);
  const Tensor out = sparse_attention(q, k, v, small_cfg(4), 0);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 9; ++j) mean += v.at(j, c) / 9.0;
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(out.at(i, c), mean, 1e-15);
  }
}

TEST(SparseAttention, ConstantValuesPassThrough) {
  Rng rng(13);
  const Tensor q = random_binary({30, 6}, rng);
  const Tensor k = random_tensor({30, 6}, rng, -3.0, 3.0);
  Tensor v({30, 6});
  for (std::size_t j = 0; j < 30; ++j) {
    for (std::size_t c = 0; c < 6; ++c) v.at(j, c) = 0.25 * static_cast<double>(c) - 0.5;
  }
  const Tensor out = sparse_attention(q, k, v, small_cfg(6));
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.at(i, c), v.at(0, c), 1e-14);
  }
}

TEST(SparseAttention, ActiveRowsFollowSparsityRanking) {
  Rng rng(14);
  const std::size_t t = 40, d = 8;
  const Tensor q = random_binary({t, d}, rng, 0.3);
  const Tensor k = random_tensor({t, d}, rng);
  const Tensor v = random_tensor({t, d}, rng);
  const std::size_t u = active_query_count(t, 2);
  SSAConfig cfg = small_cfg(d);
  cfg.sampling_factor = 2;
  const Tensor out = sparse_attention(q, k, v, cfg);
  const Tensor dense = testing::dense_attention(q, k, v);
  const std::vector<std::size_t> active = select_active(sparsity_measure(q, k, d), u);
  std::vector<bool> is_active(t, false);
  for (std::size_t i : active) is_active[i] = true;
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j < t; ++j) mean += v.at(j, c) / double(t);
      EXPECT_NEAR(out.at(i, c), is_active[i] ? dense.at(i, c) : mean, 1e-12);
    }
  }
}

TEST(SparseAttention, ProbabilityRowsSumToOne) {
  // With V = I, every active output row is its attention distribution.
  Rng rng(15);
  const std::size_t t = 12;
  const Tensor q = random_binary({t, t}, rng);
  const Tensor k = random_tensor({t, t}, rng, -4.0, 4.0);
  Tensor v({t, t});
  for (std::size_t i = 0; i < t; ++i) v.at(i, i) = 1.0;
  const Tensor out = sparse_attention(q, k, v, small_cfg(t), t);
  for (std::size_t i = 0; i < t; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t; ++j) s += out.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SparseAttention, EmptySequenceIsLengthError) {
  EXPECT_THROW(sparse_attention(Tensor({0, 4}), Tensor({0, 4}), Tensor({0, 4}), small_cfg(4)), LengthError);
}

TEST(SparseAttention, HeadsAttendIndependently) {
  Rng rng(16);
  const std::size_t t = 10, d = 8;
  const Tensor q = random_binary({t, d}, rng);
  const Tensor k = random_tensor({t, d}, rng);
  const Tensor v = random_tensor({t, d}, rng);
  const Tensor out = sparse_attention(q, k, v, small_cfg(d, 2), t);
  for (std::size_t h = 0; h < 2; ++h) {
    Tensor qh({t, 4}), kh({t, 4}), vh({t, 4});
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        qh.at(i, c) = q.at(i, h * 4 + c);
        kh.at(i, c) = k.at(i, h * 4 + c);
        vh.at(i, c) = v.at(i, h * 4 + c);
      }
    }
    const Tensor ref = testing::dense_attention(qh, kh, vh);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(i, h * 4 + c), ref.at(i, c), 1e-12);
    }
  }
}

SpikeCounts count_run(const Tensor& q, const Tensor& k, const Tensor& v, std::optional<std::size_t> u) {
  const std::size_t t = q.dim(0), d = q.dim(1);
  SpikeCounts counts;
  Tape tape(false);
  sparse_attention_op(tape.constant(q.reshaped({1, t, d})), tape.constant(k.reshaped({1, t, d})),
                      tape.constant(v.reshaped({1, t, d})), 1, 5, true, &counts, u);
  return counts;
}

TEST(SpikeCounting, AdditionsEqualActiveSpikesTimesKeys) {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t t = 2 + rng.below(40), d = 1 + rng.below(16);
    const Tensor q = random_binary({t, d}, rng, rng.uniform());
    const Tensor k = random_tensor({t, d}, rng);
    const Tensor v = random_tensor({t, d}, rng);
    const std::size_t u = active_query_count(t, 5);
    const SpikeCounts c = count_run(q, k, v, std::nullopt);
    std::uint64_t active_spikes = 0;
    for (std::size_t i : select_active(sparsity_measure(q, k, d), u)) {
      for (std::size_t col = 0; col < d; ++col) active_spikes += q.at(i, col) != 0.0;
    }
    EXPECT_EQ(c.score_additions, active_spikes * t);
    EXPECT_LE(c.score_additions, c.dense_score_macs);
    EXPECT_EQ(c.active_queries, u);
    EXPECT_EQ(c.total_queries, t);
  }
}

TEST(SpikeCounting, AllOnesAllActiveReachesDenseCount) {
  const Tensor q({6, 3}, 1.0);
  Rng rng(18);
  const SpikeCounts c = count_run(q, random_tensor({6, 3}, rng), random_tensor({6, 3}, rng), 6);
  EXPECT_EQ(c.score_additions, c.dense_score_macs);
  const SpikeCounts z = count_run(Tensor({6, 3}), random_tensor({6, 3}, rng), random_tensor({6, 3}, rng), 6);
  EXPECT_EQ(z.score_additions, 0u);
}

TEST(SparseAttention, ActiveSetInvariantToPositiveKeyScaling) {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor q = random_binary({30, 8}, rng);
    Tensor k = random_tensor({30, 8}, rng);
    const auto before = select_active(sparsity_measure(q, k, 8), 10);
    const double a = rng.uniform(0.1, 10.0);
    for (double& x : k.values()) x *= a;
    EXPECT_EQ(select_active(sparsity_measure(q, k, 8), 10), before);
  }
}

TEST(SparseAttentionGradient, KeyAndValuePathsMatchFiniteDifferences) {
  Rng rng(20);
  const std::size_t t = 12, d = 4;
  const Tensor q = random_binary({2, t, d}, rng);
  Tensor k = random_tensor({2, t, d}, rng);
  Tensor v = random_tensor({2, t, d}, rng);
  auto f = [&](Tape& tape) {
    Rng r(21);
    Var out = sparse_attention_op(tape.constant(q), tape.parameter(k), tape.parameter(v), 1, 2, true);
    return ops::sum(ops::mul(out, tape.constant(random_tensor(out.shape(), r))));
  };
  EXPECT_LT(grad_check(f, k), 1e-3);
  EXPECT_LT(grad_check(f, v), 1e-3);
}

TEST(SparseAttentionGradient, DenseQueryPathMatchesFiniteDifferences) {
  Rng rng(22);
  Tensor q = random_tensor({1, 10, 4}, rng);
  const Tensor k = random_tensor({1, 10, 4}, rng);
  const Tensor v = random_tensor({1, 10, 4}, rng);
  auto f = [&](Tape& tape) {
    Rng r(23);
    Var out = sparse_attention_op(tape.parameter(q), tape.constant(k), tape.constant(v), 2, 5, false, nullptr, 10);
    return ops::sum(ops::mul(out, tape.constant(random_tensor(out.shape(), r))));
  };
  EXPECT_LT(grad_check(f, q), 1e-6);
}

TEST(SSABlock, SingleStepIsResidualPlusValuePath) {
  Rng rng(24);
  SSABlock block(small_cfg(6), rng);
  const Tensor x = random_tensor({6}, rng);
  const Tensor out = block.apply(x);
  const Tensor v = testing::dense_matmul(x.reshaped({1, 6}), block.projection().w_v);
  const Tensor proj = testing::dense_matmul(v, block.output_weight());
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out[c], x[c] + proj[c], 1e-12);
}

TEST(SSABlock, ZeroWeightsReturnInput) {
  Rng rng(25);
  SSABlock block(small_cfg(6), rng);
  block.visit("", [](const std::string&, Tensor& t, SlotKind kind) {
    if (kind == SlotKind::kParameter) std::fill(t.values().begin(), t.values().end(), 0.0);
  });
  const Tensor x = random_tensor({7, 6}, rng);
  EXPECT_TRUE(testing::bit_equal(block.apply(x), x));
}

TEST(SSABlock, PreservesShape) {
  Rng rng(26);
  SSABlock block(SSAConfig{}, rng);
  for (std::size_t t : {1u, 7u, 50u}) {
    EXPECT_EQ(block.apply(random_tensor({t, 64}, rng)).shape(), (Shape{t, 64}));
  }
  EXPECT_EQ(block.apply(random_tensor({64}, rng)).shape(), (Shape{64}));
}

TEST(SSAConfig, RejectsInvalidHeadSplit) {
  SSAConfig cfg = small_cfg(6, 4);
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = small_cfg(6);
  cfg.sampling_factor = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
}

}  // namespace
}  // namespace safenet::attention
