#include "safenet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "kernels.hpp"
#include "safenet/errors.hpp"

namespace safenet::attention {

void EmbedConfig::validate() const {
  if (c_in == 0) throw ContractError("embed: c_in must be positive");
  if (d_model == 0) throw ContractError("embed: d_model must be positive");
  if (conv_kernel % 2 == 0) throw ContractError("embed: conv_kernel must be odd");
}

void SSAConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ContractError("ssa: d_model must be a positive multiple of n_heads");
  }
  if (sampling_factor < 1) throw ContractError("ssa: sampling_factor must be >= 1");
  lif.validate();
}

Tensor positional_encoding(std::size_t t, std::size_t d) {
  Tensor pe({t, d});
  for (std::size_t pos = 0; pos < t; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / freq;
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < d) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

std::size_t active_query_count(std::size_t t, std::size_t sampling_factor) {
  if (t == 0) throw LengthError("attention: empty sequence");
  const auto log_ceil = static_cast<std::size_t>(std::ceil(std::log(static_cast<double>(t))));
  return std::min(t, sampling_factor * log_ceil);
}

std::vector<std::size_t> select_active(const Tensor& m, std::size_t u) {
  std::vector<std::size_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
  idx.resize(std::min(u, idx.size()));
  return idx;
}

namespace {

void require_binary(const double* q, std::size_t rows, std::size_t cols, std::size_t ld) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = q[i * ld + c];
      if (x != 0.0 && x != 1.0) throw ContractError("spike_matmul: query matrix is not binary");
    }
  }
}

// One (sample, head) slice: q, k, v are row-major with row stride ld and dh
// live columns. Produces the slice of out and the routing needed by backward.
struct HeadCache {
  std::vector<std::size_t> active;  // query rows, ascending
  std::vector<double> probs;        // [active.size() x t]
};

// scores[t x t] of the slice; gather-accumulate when binary.
void head_scores(const double* q, const double* k, std::size_t ld, std::size_t t, std::size_t dh,
                 bool binary, std::vector<double>& k_t, double* scores) {
  std::fill(scores, scores + t * t, 0.0);
  if (binary) {
    k_t.assign(dh * t, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
      for (std::size_t c = 0; c < dh; ++c) k_t[c * t + j] = k[j * ld + c];
    }
    for (std::size_t i = 0; i < t; ++i) {
      double* row = scores + i * t;
      for (std::size_t c = 0; c < dh; ++c) {
        if (q[i * ld + c] == 0.0) continue;
        const double* kr = k_t.data() + c * t;
        for (std::size_t j = 0; j < t; ++j) row[j] += kr[j];
      }
    }
  } else {
    kernels::gemm_nt(t, dh, t, q, ld, k, ld, scores, t);
  }
}

HeadCache attend_head(const double* q, const double* k, const double* v, std::size_t ld, std::size_t t,
                      std::size_t dh, std::size_t u, bool binary, double* out, SpikeCounts* counts) {
  std::vector<double> k_t;
  std::vector<double> scores(t * t);
  head_scores(q, k, ld, t, dh, binary, k_t, scores.data());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor measure({t});
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = scores.data() + i * t;
    double mx = row[0] * scale;
    double total = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      mx = std::max(mx, row[j] * scale);
      total += row[j] * scale;
    }
    measure[i] = mx - total / static_cast<double>(t);
  }

  HeadCache cache;
  cache.active = select_active(measure, u);
  std::sort(cache.active.begin(), cache.active.end());
  std::vector<bool> is_active(t, false);
  for (std::size_t i : cache.active) is_active[i] = true;

  cache.probs.assign(cache.active.size() * t, 0.0);
  for (std::size_t a = 0; a < cache.active.size(); ++a) {
    const double* row = scores.data() + cache.active[a] * t;
    double* p = cache.probs.data() + a * t;
    double mx = row[0] * scale;
    for (std::size_t j = 1; j < t; ++j) mx = std::max(mx, row[j] * scale);
    double z = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      p[j] = std::exp(row[j] * scale - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < t; ++j) p[j] /= z;
    double* o = out + cache.active[a] * ld;
    for (std::size_t j = 0; j < t; ++j) {
      const double w = p[j];
      const double* vr = v + j * ld;
      for (std::size_t c = 0; c < dh; ++c) o[c] += w * vr[c];
    }
  }

  const std::size_t lazy = t - cache.active.size();
  if (lazy > 0) {
    std::vector<double> v_mean(dh, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
      for (std::size_t c = 0; c < dh; ++c) v_mean[c] += v[j * ld + c];
    }
    for (double& x : v_mean) x /= static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i) {
      if (is_active[i]) continue;
      std::copy(v_mean.begin(), v_mean.end(), out + i * ld);
    }
  }

  if (counts != nullptr) {
    std::uint64_t spikes = 0;
    std::uint64_t active_spikes = 0;
    for (std::size_t i = 0; i < t; ++i) {
      std::uint64_t row_nnz = 0;
      for (std::size_t c = 0; c < dh; ++c) row_nnz += q[i * ld + c] != 0.0 ? 1 : 0;
      spikes += row_nnz;
      if (is_active[i]) active_spikes += row_nnz;
    }
    counts->query_spikes += spikes;
    counts->query_elements += t * dh;
    counts->score_additions += active_spikes * t;
    counts->lazy_additions += lazy > 0 ? t * dh : 0;
    counts->apply_macs += cache.active.size() * t * dh;
    counts->dense_score_macs += t * t * dh;
    counts->active_queries += cache.active.size();
    counts->total_queries += t;
  }
  return cache;
}

}  // namespace

Tensor spike_matmul(const Tensor& q_spike, const Tensor& k_t) {
  if (q_spike.rank() != 2 || k_t.rank() != 2 || q_spike.dim(1) != k_t.dim(0)) {
    throw DimensionError("spike_matmul: " + shape_string(q_spike.shape()) + " x " + shape_string(k_t.shape()));
  }
  const std::size_t t = q_spike.dim(0);
  const std::size_t d = q_spike.dim(1);
  const std::size_t n = k_t.dim(1);
  require_binary(q_spike.data(), t, d, d);
  Tensor scores({t, n});
  for (std::size_t i = 0; i < t; ++i) {
    double* row = scores.data() + i * n;
    for (std::size_t c = 0; c < d; ++c) {
      if (q_spike.at(i, c) == 0.0) continue;
      const double* kr = k_t.data() + c * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += kr[j];
    }
  }
  return scores;
}

Tensor sparsity_measure(const Tensor& q_spike, const Tensor& k, std::size_t d) {
  if (k.rank() != 2) throw DimensionError("sparsity_measure: K must be 2-D");
  Tensor k_t({k.dim(1), k.dim(0)});
  kernels::transpose(k.dim(0), k.dim(1), k.data(), k_t.data());
  const Tensor s = spike_matmul(q_spike, k_t);
  const std::size_t t = s.dim(0);
  const std::size_t n = s.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor m({t});
  for (std::size_t i = 0; i < t; ++i) {
    double mx = s.at(i, 0) * scale;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      mx = std::max(mx, s.at(i, j) * scale);
      total += s.at(i, j) * scale;
    }
    m[i] = mx - total / static_cast<double>(n);
  }
  return m;
}

Tensor sparse_attention(const Tensor& q_spike, const Tensor& k, const Tensor& v, const SSAConfig& cfg,
                        std::optional<std::size_t> force_u) {
  cfg.validate();
  if (q_spike.rank() != 2 || q_spike.shape() != k.shape() || k.shape() != v.shape()) {
    throw DimensionError("sparse_attention: Q, K, V must share one [t x d] shape");
  }
  if (q_spike.dim(0) == 0) throw LengthError("sparse_attention: empty sequence");
  if (q_spike.dim(1) != cfg.d_model) throw DimensionError("sparse_attention: width differs from d_model");
  Tape tape(false);
  const Shape batched{1, q_spike.dim(0), q_spike.dim(1)};
  Var out = sparse_attention_op(tape.constant(q_spike.reshaped(batched)), tape.constant(k.reshaped(batched)),
                                tape.constant(v.reshaped(batched)), cfg.n_heads, cfg.sampling_factor, true,
                                nullptr, force_u);
  return out.value().reshaped(q_spike.shape());
}

Var sparse_attention_op(Var q, Var k, Var v, std::size_t n_heads, std::size_t sampling_factor,
                        bool binary_queries, SpikeCounts* counts, std::optional<std::size_t> force_u) {
  const Shape& qs = q.shape();
  if (qs.size() != 3 || k.shape() != qs || v.shape() != qs) {
    throw DimensionError("sparse_attention_op: Q, K, V must share one [B x t x d] shape, got " +
                         shape_string(qs) + ", " + shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  const std::size_t batch = qs[0];
  const std::size_t t = qs[1];
  const std::size_t d = qs[2];
  if (t == 0) throw LengthError("sparse_attention_op: empty sequence");
  if (n_heads == 0 || d % n_heads != 0) throw DimensionError("sparse_attention_op: d not divisible by heads");
  const std::size_t dh = d / n_heads;
  const std::size_t u = std::min(t, force_u.value_or(active_query_count(t, sampling_factor)));
  if (binary_queries) require_binary(q.value().data(), batch * t, d, d);

  Tensor out(qs);
  auto caches = std::make_shared<std::vector<HeadCache>>(batch * n_heads);
  const double* qv = q.value().data();
  const double* kv = k.value().data();
  const double* vv = v.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = b * t * d + h * dh;
      (*caches)[b * n_heads + h] =
          attend_head(qv + off, kv + off, vv + off, d, t, dh, u, binary_queries, out.data() + off, counts);
    }
  }

  return q.tape().record(
      std::move(out), {q, k, v},
      [iq = q.id(), ik = k.id(), iv = v.id(), batch, t, d, dh, n_heads, caches](Tape& tp, std::size_t s) {
        const bool gq = tp.needs_grad(iq);
        const bool gk = tp.needs_grad(ik);
        const bool gv = tp.needs_grad(iv);
        if (!gq && !gk && !gv) return;
        const double* g = tp.grad(s).data();
        const double* qv = tp.value(iq).data();
        const double* kv = tp.value(ik).data();
        const double* vv = tp.value(iv).data();
        double* dq = gq ? tp.grad_mut(iq).data() : nullptr;
        double* dk = gk ? tp.grad_mut(ik).data() : nullptr;
        double* dv = gv ? tp.grad_mut(iv).data() : nullptr;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> ds(t);
        std::vector<double> lazy_sum(dh);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const HeadCache& cache = (*caches)[b * n_heads + h];
            const std::size_t off = b * t * d + h * dh;
            const double* gh = g + off;
            std::vector<bool> is_active(t, false);
            for (std::size_t i : cache.active) is_active[i] = true;

            if (gv && cache.active.size() < t) {
              std::fill(lazy_sum.begin(), lazy_sum.end(), 0.0);
              for (std::size_t i = 0; i < t; ++i) {
                if (is_active[i]) continue;
                for (std::size_t c = 0; c < dh; ++c) lazy_sum[c] += gh[i * d + c];
              }
              for (std::size_t j = 0; j < t; ++j) {
                for (std::size_t c = 0; c < dh; ++c) dv[off + j * d + c] += lazy_sum[c] / static_cast<double>(t);
              }
            }

            for (std::size_t a = 0; a < cache.active.size(); ++a) {
              const std::size_t i = cache.active[a];
              const double* p = cache.probs.data() + a * t;
              const double* gi = gh + i * d;
              double dot = 0.0;
              for (std::size_t j = 0; j < t; ++j) {
                const double* vr = vv + off + j * d;
                double dp = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dp += gi[c] * vr[c];
                ds[j] = dp;
                dot += p[j] * dp;
                if (gv) {
                  double* dvr = dv + off + j * d;
                  for (std::size_t c = 0; c < dh; ++c) dvr[c] += p[j] * gi[c];
                }
              }
              for (std::size_t j = 0; j < t; ++j) ds[j] = p[j] * (ds[j] - dot) * scale;
              if (gq) {
                double* dqi = dq + off + i * d;
                for (std::size_t j = 0; j < t; ++j) {
                  const double* kr = kv + off + j * d;
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds[j] * kr[c];
                }
              }
              if (gk) {
                const double* qi = qv + off + i * d;
                for (std::size_t j = 0; j < t; ++j) {
                  double* dkr = dk + off + j * d;
                  for (std::size_t c = 0; c < dh; ++c) dkr[c] += ds[j] * qi[c];
                }
              }
            }
          }
        }
      });
}

DataEmbedding::DataEmbedding(const EmbedConfig& cfg, Rng& rng) : cfg_(cfg), conv_w_({cfg.conv_kernel, cfg.c_in, cfg.d_model}) {
  cfg_.validate();
  init_uniform(conv_w_, cfg.conv_kernel * cfg.c_in, rng);
}

Var DataEmbedding::forward(ForwardContext& ctx, Var x) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[2] != cfg_.c_in) {
    throw DimensionError("embed: expected [B x t x " + std::to_string(cfg_.c_in) + "], got " + shape_string(xs));
  }
  const std::size_t half = cfg_.conv_kernel / 2;
  Var conv = ops::conv1d(x, ctx.tape.parameter(conv_w_), 1, half, half);
  return ops::add_broadcast(conv, ctx.tape.constant(positional_encoding(xs[1], cfg_.d_model)));
}

Tensor DataEmbedding::embed(const Tensor& window) {
  if (window.rank() != 2) throw DimensionError("embed: window must be [t x c]");
  Tape tape(false);
  ForwardContext ctx{tape};
  Var e = forward(ctx, tape.constant(window.reshaped({1, window.dim(0), window.dim(1)})));
  return e.value().reshaped({window.dim(0), cfg_.d_model});
}

void DataEmbedding::visit(const std::string& prefix, const SlotVisitor& visitor) {
  visitor(prefix + "conv_w", conv_w_, SlotKind::kParameter);
}

ProjectionWeights::ProjectionWeights(std::size_t d)
    : w_q({d, d}), w_k({d, d}), w_v({d, d}), bn_gamma({d}, 1.0), bn_beta({d}, 0.0), bn_stats(d) {
  bn_gamma.set_requires_grad(true);
  bn_beta.set_requires_grad(true);
}

QKV project_qkv(ProjectionWeights& w, const snn::LIFConfig& lif, const Tensor& e) {
  if (e.rank() != 2 || e.dim(1) != w.w_q.dim(0)) {
    throw DimensionError("project_qkv: E " + shape_string(e.shape()) + " vs W " + shape_string(w.w_q.shape()));
  }
  Tape tape(false);
  Var x = tape.constant(e.reshaped({1, e.dim(0), e.dim(1)}));
  Var qn = ops::batch_norm(ops::linear(x, tape.parameter(w.w_q)), tape.parameter(w.bn_gamma),
                           tape.parameter(w.bn_beta), w.bn_stats, false);
  Var qs = snn::lif_layer(qn, lif);
  return QKV{qs.value().reshaped(e.shape()), ops::linear(x, tape.parameter(w.w_k)).value().reshaped(e.shape()),
             ops::linear(x, tape.parameter(w.w_v)).value().reshaped(e.shape())};
}

SSABlock::SSABlock(const SSAConfig& cfg, Rng& rng) : cfg_(cfg), proj_(cfg.d_model), w_out_({cfg.d_model, cfg.d_model}) {
  cfg_.validate();
  init_uniform(proj_.w_q, cfg.d_model, rng);
  init_uniform(proj_.w_k, cfg.d_model, rng);
  init_uniform(proj_.w_v, cfg.d_model, rng);
  init_uniform(w_out_, cfg.d_model, rng);
}

Var SSABlock::forward(ForwardContext& ctx, Var x) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[2] != cfg_.d_model) {
    throw DimensionError("ssa_block: expected [B x t x " + std::to_string(cfg_.d_model) + "], got " +
                         shape_string(xs));
  }
  Tape& tape = ctx.tape;
  Var q = ops::batch_norm(ops::linear(x, tape.parameter(proj_.w_q)), tape.parameter(proj_.bn_gamma),
                          tape.parameter(proj_.bn_beta), proj_.bn_stats, ctx.training);
  if (!ctx.spiking_passthrough) q = snn::lif_layer(q, cfg_.lif);
  Var k = ops::linear(x, tape.parameter(proj_.w_k));
  Var v = ops::linear(x, tape.parameter(proj_.w_v));
  Var a = sparse_attention_op(q, k, v, cfg_.n_heads, cfg_.sampling_factor, !ctx.spiking_passthrough, ctx.counts);
  return ops::add(x, ops::linear(a, tape.parameter(w_out_)));
}

Tensor SSABlock::apply(const Tensor& x) {
  Shape batched;
  if (x.rank() == 1) {
    batched = {1, 1, x.dim(0)};
  } else if (x.rank() == 2) {
    batched = {1, x.dim(0), x.dim(1)};
  } else {
    throw DimensionError("ssa_block: expected [t x d] or [d], got " + shape_string(x.shape()));
  }
  Tape tape(false);
  ForwardContext ctx{tape};
  return forward(ctx, tape.constant(x.reshaped(batched))).value().reshaped(x.shape());
}

void SSABlock::visit(const std::string& prefix, const SlotVisitor& visitor) {
  visitor(prefix + "w_q", proj_.w_q, SlotKind::kParameter);
  visitor(prefix + "w_k", proj_.w_k, SlotKind::kParameter);
  visitor(prefix + "w_v", proj_.w_v, SlotKind::kParameter);
  visitor(prefix + "bn_gamma", proj_.bn_gamma, SlotKind::kParameter);
  visitor(prefix + "bn_beta", proj_.bn_beta, SlotKind::kParameter);
  visitor(prefix + "w_out", w_out_, SlotKind::kParameter);
  visitor(prefix + "bn_mean", proj_.bn_stats.running_mean, SlotKind::kBuffer);
  visitor(prefix + "bn_var", proj_.bn_stats.running_var, SlotKind::kBuffer);
}

}  // namespace safenet::attention
