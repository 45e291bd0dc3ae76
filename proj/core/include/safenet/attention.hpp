#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "safenet/layer.hpp"
#include "safenet/ops.hpp"
#include "safenet/random.hpp"
#include "safenet/snn.hpp"
#include "safenet/tensor.hpp"

namespace safenet::attention {

struct EmbedConfig {
  std::size_t c_in = 5;
  std::size_t d_model = 64;
  std::size_t conv_kernel = 3;  // odd, same-length output

  void validate() const;
};

struct SSAConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 1;
  // u = min(t, sampling_factor * ceil(ln t)) active queries per head.
  std::size_t sampling_factor = 5;
  snn::LIFConfig lif;

  void validate() const;
};

// pe[pos][2k] = sin(pos / 10000^(2k/d)), pe[pos][2k+1] = cos(pos / 10000^(2k/d)).
Tensor positional_encoding(std::size_t t, std::size_t d);

// Number of active queries for a sequence of length t.
std::size_t active_query_count(std::size_t t, std::size_t sampling_factor);

// scores[i][j] = sum of k_t[c][j] over the c with q_spike[i][c] == 1, using
// additions only. Throws ContractError for a non-binary q_spike.
Tensor spike_matmul(const Tensor& q_spike, const Tensor& k_t);

// M_i = max_j(s_ij / sqrt(d)) - mean_j(s_ij / sqrt(d)) over spike_matmul scores.
Tensor sparsity_measure(const Tensor& q_spike, const Tensor& k, std::size_t d);

// Indices of the u largest entries of m, descending, lower index first on ties.
std::vector<std::size_t> select_active(const Tensor& m, std::size_t u);

// Sparse attention over one sequence. Active rows are softmax(s_i / sqrt(d_h)) V,
// lazy rows the column mean of V. `force_u` overrides the active count.
Tensor sparse_attention(const Tensor& q_spike, const Tensor& k, const Tensor& v, const SSAConfig& cfg,
                        std::optional<std::size_t> force_u = std::nullopt);

// Differentiable batched form over q, k, v [B x t x d]. Active-query ranking
// is routing and carries no gradient. With binary_queries the scores are
// gathered from spikes; otherwise q is multiplied densely.
Var sparse_attention_op(Var q, Var k, Var v, std::size_t n_heads, std::size_t sampling_factor,
                        bool binary_queries, SpikeCounts* counts = nullptr,
                        std::optional<std::size_t> force_u = std::nullopt);

class DataEmbedding {
 public:
  DataEmbedding(const EmbedConfig& cfg, Rng& rng);

  const EmbedConfig& config() const { return cfg_; }
  // x[B x t x c] -> [B x t x d]: same-padded convolution (no bias) plus positions.
  Var forward(ForwardContext& ctx, Var x);
  // Single window I[t x c] -> E[t x d].
  Tensor embed(const Tensor& window);

  Tensor& conv_weight() { return conv_w_; }  // [K x c x d]
  void visit(const std::string& prefix, const SlotVisitor& visitor);

 private:
  EmbedConfig cfg_;
  Tensor conv_w_;
};

struct ProjectionWeights {
  Tensor w_q, w_k, w_v;  // [d x d], applied as x * W
  Tensor bn_gamma, bn_beta;
  ops::BatchNormStats bn_stats;

  explicit ProjectionWeights(std::size_t d);
};

struct QKV {
  Tensor q_spike, k, v;
};

// Q = LIF(BN(E W_Q)) with frozen BN statistics, K = E W_K, V = E W_V.
QKV project_qkv(ProjectionWeights& w, const snn::LIFConfig& lif, const Tensor& e);

class SSABlock {
 public:
  SSABlock(const SSAConfig& cfg, Rng& rng);

  const SSAConfig& config() const { return cfg_; }
  // x[B x t x d] -> x + Attention(Q, K, V) W_out.
  Var forward(ForwardContext& ctx, Var x);
  // Inference on a sequence [t x d] or a single vector [d] (t = 1).
  Tensor apply(const Tensor& x);

  ProjectionWeights& projection() { return proj_; }
  Tensor& output_weight() { return w_out_; }
  void visit(const std::string& prefix, const SlotVisitor& visitor);

 private:
  SSAConfig cfg_;
  ProjectionWeights proj_;
  Tensor w_out_;
};

}  // namespace safenet::attention
