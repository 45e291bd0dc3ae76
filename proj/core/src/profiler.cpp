#include "safenet/profiler.hpp"

#include <chrono>
#include <cmath>

#include <omp.h>

#include "safenet/errors.hpp"

namespace safenet::profiler {

namespace {

constexpr double kPowerCoefficient = 4.6;
constexpr double kJoulesPerMac = 4.6e-12;

double ssa_flops(double t, double d, double heads) {
  const double projections = 3 * 2 * t * d * d;
  const double norm_and_spike = 2 * t * d;
  const double scores_and_apply = 2 * (2 * t * t * d);
  const double softmax = heads * t * t;
  const double output = 2 * t * d * d;
  const double residual = t * d;
  return projections + norm_and_spike + scores_and_apply + softmax + output + residual;
}

// Restores the OpenMP thread count on scope exit.
class SingleThread {
 public:
  SingleThread() : saved_(omp_get_max_threads()) { omp_set_num_threads(1); }
  ~SingleThread() { omp_set_num_threads(saved_); }
  SingleThread(const SingleThread&) = delete;
  SingleThread& operator=(const SingleThread&) = delete;

 private:
  int saved_;
};

void run_eval(model::SAFENet& net, const Tensor& windows, SpikeCounts* counts) {
  Tape tape(false);
  ForwardContext ctx{tape};
  ctx.counts = counts;
  net.forward(ctx, tape.constant(windows));
}

void check_windows(const model::SAFENet& net, const Tensor& windows) {
  if (windows.rank() != 3 || windows.dim(0) == 0) {
    throw DimensionError("profiler: expected a non-empty [B x t x c] batch, got " + shape_string(windows.shape()));
  }
  if (windows.dim(2) != net.config().embed.c_in) throw DimensionError("profiler: channel count mismatch");
}

}  // namespace

std::size_t count_params(model::SAFENet& net) { return net.parameter_count(); }

double count_flops(const model::SAFENetConfig& cfg, std::size_t t_steps) {
  const double t = static_cast<double>(t_steps);
  const double d = static_cast<double>(cfg.ssa.d_model);
  const double c = static_cast<double>(cfg.embed.c_in);
  const double heads = static_cast<double>(cfg.ssa.n_heads);
  const double relu = cfg.tcn.activation == model::Activation::kRelu ? 1.0 : 0.0;
  if (t_steps == 0) return 0.0;

  double total = 2 * t * static_cast<double>(cfg.embed.conv_kernel) * c * d + t * d;

  const double k = static_cast<double>(cfg.tcn.kernel);
  double tcn = 0.0;
  for (std::size_t b = 0; b < cfg.tcn.dilations.size(); ++b) {
    tcn += 2 * (2 * t * k * d * d + t * d + relu * t * d);
    if (cfg.tcn.residual) tcn += t * d;
  }
  total += static_cast<double>(cfg.encoder_layers) * (ssa_flops(t, d, heads) + tcn);

  total += t * d;
  if (cfg.pooled_norm) total += d;

  if (cfg.safd_enabled) {
    const double h = static_cast<double>(cfg.safd.weight_hidden);
    const double weight_module = (2 * d * h + 2 * h) + (2 * h * d + 2 * d);
    const double per_iter = ssa_flops(1, d, heads) + weight_module + 2 * d;
    const double iters = static_cast<double>(cfg.safd.iterations);
    total += iters * per_iter + (iters - 1) * d;
  }

  const double n = static_cast<double>(cfg.n_joints);
  const double classes = static_cast<double>(cfg.n_subjects);
  total += 2 * d * n + n + 2 * d * classes + classes;
  return total;
}

double attention_dense_flops(const model::SAFENetConfig& cfg, std::size_t t_steps) {
  const double t = static_cast<double>(t_steps);
  const double d = static_cast<double>(cfg.ssa.d_model);
  double total = static_cast<double>(cfg.encoder_layers) * 4 * t * t * d;
  if (cfg.safd_enabled) total += static_cast<double>(cfg.safd.iterations) * 4 * d;
  return total;
}

EffectiveMacs effective_macs(model::SAFENet& net, const Tensor& windows) {
  check_windows(net, windows);
  EffectiveMacs out;
  run_eval(net, windows, &out.counts);
  const std::size_t t = windows.dim(1);
  const double batch = static_cast<double>(windows.dim(0));
  const double dense_rest = count_flops(net.config(), t) - attention_dense_flops(net.config(), t);
  const double spiking = static_cast<double>(out.counts.score_additions + out.counts.apply_macs +
                                             out.counts.lazy_additions);
  out.per_sample = dense_rest / 2 + spiking / batch;
  return out;
}

double power_estimate(double mac, double latency_s) {
  if (!(latency_s > 0.0)) throw RangeError("power_estimate: latency must be > 0");
  return kPowerCoefficient * mac / latency_s;
}

double power_estimate_annotated(double mac, double latency_s) {
  if (!(latency_s > 0.0)) throw RangeError("power_estimate: latency must be > 0");
  return kJoulesPerMac * mac / latency_s;
}

Latency measure_latency(model::SAFENet& net, const Tensor& windows, std::size_t repeats, std::size_t warmup) {
  if (repeats < 10) throw ContractError("measure_latency: repeats must be >= 10");
  if (warmup < 3) throw ContractError("measure_latency: warmup must be >= 3");
  check_windows(net, windows);
  SingleThread pin;
  for (std::size_t i = 0; i < warmup; ++i) run_eval(net, windows, nullptr);

  const double batch = static_cast<double>(windows.dim(0));
  std::vector<double> samples(repeats);
  for (double& s : samples) {
    const auto start = std::chrono::steady_clock::now();
    run_eval(net, windows, nullptr);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    s = elapsed.count() / batch;
  }
  Latency out;
  for (double s : samples) out.mean_s += s;
  out.mean_s /= static_cast<double>(repeats);
  for (double s : samples) out.var_s += (s - out.mean_s) * (s - out.mean_s);
  out.var_s /= static_cast<double>(repeats - 1);
  return out;
}

CostReport profile(model::SAFENet& net, const Tensor& windows, std::size_t repeats, std::size_t warmup) {
  check_windows(net, windows);
  CostReport r;
  r.params = count_params(net);
  r.model_size_bytes = model::checkpoint_size(net);
  r.flops = count_flops(net.config(), windows.dim(1));
  const EffectiveMacs em = effective_macs(net, windows);
  r.effective_macs = em.per_sample;
  if (em.counts.query_elements > 0) {
    r.spike_rate = static_cast<double>(em.counts.query_spikes) / static_cast<double>(em.counts.query_elements);
  }
  const Latency lat = measure_latency(net, windows, repeats, warmup);
  r.latency_s = lat.mean_s;
  r.latency_var = lat.var_s;
  r.power_w = power_estimate(r.flops, r.latency_s);
  r.power_w_annotated = power_estimate_annotated(r.effective_macs, r.latency_s);
  r.note =
      "power_w applies P = 4.6 * MAC / T with MAC = FLOPs and T in seconds, unscaled; its unit does not "
      "reconcile with published watt figures. power_w_annotated charges 4.6 pJ per effective MAC.";
  return r;
}

}  // namespace safenet::profiler
