#include "safenet/snn.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "safenet/errors.hpp"

namespace safenet::snn {

void LIFConfig::validate() const {
  if (!(tau >= 1.0)) throw ContractError("LIF tau must be >= 1");
  if (!(v_threshold > v_rest)) throw ContractError("LIF threshold must exceed the resting potential");
}

LIFState initial_state(const LIFConfig& cfg, const Shape& shape) {
  return LIFState{Tensor(shape, cfg.v_rest)};
}

StepResult lif_step(const LIFConfig& cfg, const LIFState& state, const Tensor& x) {
  if (state.v.shape() != x.shape()) {
    throw DimensionError("lif_step: state " + shape_string(state.v.shape()) + " vs input " +
                         shape_string(x.shape()));
  }
  StepResult out{Tensor(x.shape()), LIFState{Tensor(x.shape())}};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = state.v[i];
    const double h = v + (x[i] - (v - cfg.v_rest)) / cfg.tau;
    const bool fired = h >= cfg.v_threshold;
    out.spikes[i] = fired ? 1.0 : 0.0;
    out.state.v[i] = fired ? cfg.v_reset : h;
  }
  return out;
}

Tensor lif_sequence(const LIFConfig& cfg, const Tensor& x_seq) {
  if (x_seq.rank() == 0) throw DimensionError("lif_sequence: input has no time axis");
  const std::size_t steps = x_seq.dim(0);
  Shape unit_shape(x_seq.shape().begin() + 1, x_seq.shape().end());
  if (unit_shape.empty()) unit_shape.push_back(1);
  const std::size_t units = numel(unit_shape);

  Tensor spikes(x_seq.shape());
  LIFState state = initial_state(cfg, unit_shape);
  Tensor frame(unit_shape);
  for (std::size_t t = 0; t < steps; ++t) {
    std::copy_n(x_seq.data() + t * units, units, frame.data());
    StepResult r = lif_step(cfg, state, frame);
    std::copy_n(r.spikes.data(), units, spikes.data() + t * units);
    state = std::move(r.state);
  }
  return spikes;
}

double surrogate_spike_grad(const LIFConfig& cfg, double u) {
  const double a = cfg.surrogate_alpha;
  const double z = std::numbers::pi / 2.0 * a * u;
  return a / (2.0 * (1.0 + z * z));
}

Tensor surrogate_spike_grad(const LIFConfig& cfg, const Tensor& u) {
  Tensor out(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = surrogate_spike_grad(cfg, u[i]);
  return out;
}

Var lif_layer(Var x, const LIFConfig& cfg) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("lif_layer: expected [outer x T x ...], got " + shape_string(xs));
  const std::size_t outer = xs[0];
  const std::size_t steps = xs[1];
  const std::size_t inner = x.size() / (outer * steps);

  const double* xv = x.value().data();
  Tensor spikes(xs);
  // Pre-reset potentials, kept for the backward pass.
  std::vector<double> charge(x.size());
  std::vector<double> v(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(v.begin(), v.end(), cfg.v_rest);
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t base = (o * steps + t) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = v[i] + (xv[base + i] - (v[i] - cfg.v_rest)) / cfg.tau;
        const bool fired = h >= cfg.v_threshold;
        charge[base + i] = h;
        spikes[base + i] = fired ? 1.0 : 0.0;
        v[i] = fired ? cfg.v_reset : h;
      }
    }
  }
  return x.tape().record(
      std::move(spikes), {x},
      [ix = x.id(), cfg, outer, steps, inner, charge = std::move(charge)](Tape& t, std::size_t s) {
        if (!t.needs_grad(ix)) return;
        const double* g = t.grad(s).data();
        const double* sp = t.value(s).data();
        double* dx = t.grad_mut(ix).data();
        const double leak = 1.0 - 1.0 / cfg.tau;
        std::vector<double> dv(inner);
        for (std::size_t o = 0; o < outer; ++o) {
          std::fill(dv.begin(), dv.end(), 0.0);
          for (std::size_t t = steps; t-- > 0;) {
            const std::size_t base = (o * steps + t) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const double dh = g[base + i] * surrogate_spike_grad(cfg, charge[base + i] - cfg.v_threshold) +
                                dv[i] * (1.0 - sp[base + i]);
              dx[base + i] += dh / cfg.tau;
              dv[i] = dh * leak;
            }
          }
        }
      });
}

}  // namespace safenet::snn
