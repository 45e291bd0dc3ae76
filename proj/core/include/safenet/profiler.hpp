#pragma once

#include <cstdint>
#include <string>

#include "safenet/layer.hpp"
#include "safenet/model.hpp"
#include "safenet/tensor.hpp"

namespace safenet::profiler {

struct CostReport {
  std::size_t params = 0;
  std::size_t model_size_bytes = 0;  // serialized checkpoint
  double flops = 0.0;                // dense, per sample
  double effective_macs = 0.0;       // spike-aware, per sample
  double latency_s = 0.0;            // mean per-sample inference time
  double latency_var = 0.0;          // variance of the per-sample time across repeats
  double power_w = 0.0;              // 4.6 * flops / T, verbatim
  double power_w_annotated = 0.0;    // 4.6 pJ per MAC over T, in watts
  double spike_rate = 0.0;           // nonzero fraction of spiking queries
  std::string note;
};

// Learnable element count.
std::size_t count_params(model::SAFENet& net);

// Dense per-sample operation count for a window of `t` steps. Linear layers
// cost 2mkn, convolutions 2 t k c_in c_out, attention scores and the value
// product are counted dense, and every elementwise, softmax or normalization
// step costs one operation per element.
double count_flops(const model::SAFENetConfig& cfg, std::size_t t);

// Dense operations of the attention scores and value product alone.
double attention_dense_flops(const model::SAFENetConfig& cfg, std::size_t t);

struct EffectiveMacs {
  double per_sample = 0.0;
  SpikeCounts counts;  // summed over the batch
};

// Runs `windows` [B x t x c] in eval mode with spike counting. Non-spiking work
// is charged at half its FLOPs; the attention contributes its measured
// additions, value products and lazy-row means.
EffectiveMacs effective_macs(model::SAFENet& net, const Tensor& windows);

// 4.6 * mac / latency_s. Throws RangeError unless latency_s > 0.
double power_estimate(double mac, double latency_s);
// Same ratio scaled by 4.6 pJ per MAC, in watts.
double power_estimate_annotated(double mac, double latency_s);

struct Latency {
  double mean_s = 0.0;  // per sample
  double var_s = 0.0;
};

// Times eval-mode forward passes of `windows` on a single worker thread.
// Requires repeats >= 10 and warmup >= 3.
Latency measure_latency(model::SAFENet& net, const Tensor& windows, std::size_t repeats = 20,
                        std::size_t warmup = 3);

// Full report for `windows` as the measurement batch.
CostReport profile(model::SAFENet& net, const Tensor& windows, std::size_t repeats = 20, std::size_t warmup = 3);

}  // namespace safenet::profiler
