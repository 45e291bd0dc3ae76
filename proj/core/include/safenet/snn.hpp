#pragma once

#include <cstddef>

#include "safenet/autodiff.hpp"
#include "safenet/tensor.hpp"

namespace safenet::snn {

// Leaky integrate-and-fire parameters. tau is dimensionless: one simulation
// step per input sample.
struct LIFConfig {
  double tau = 2.0;
  double v_threshold = 0.3;
  double v_rest = 0.0;
  double v_reset = 0.0;
  double surrogate_alpha = 2.0;

  // Throws ContractError unless tau >= 1 and v_threshold > v_rest.
  void validate() const;
};

struct LIFState {
  Tensor v;  // membrane potential per unit
};

struct StepResult {
  Tensor spikes;  // exactly 0.0 or 1.0
  LIFState state;
};

// Resting state for `shape`.
LIFState initial_state(const LIFConfig& cfg, const Shape& shape);

// One explicit-Euler step: H = v + (x - (v - v_rest)) / tau, S = [H >= v_th],
// v' = S ? v_reset : H.
StepResult lif_step(const LIFConfig& cfg, const LIFState& state, const Tensor& x);

// Runs lif_step along axis 0 of x_seq[T x ...] from the resting state.
Tensor lif_sequence(const LIFConfig& cfg, const Tensor& x_seq);

// Arctan pseudo-derivative of the Heaviside firing function at u = H - v_th:
// alpha / (2 (1 + (pi/2 * alpha * u)^2)).
double surrogate_spike_grad(const LIFConfig& cfg, double u);
Tensor surrogate_spike_grad(const LIFConfig& cfg, const Tensor& u);

// Differentiable spiking layer over x[outer x T x inner], time along axis 1.
// Forward is exactly binary; backward runs through time with the surrogate
// derivative and treats the reset as a constant.
Var lif_layer(Var x, const LIFConfig& cfg);

}  // namespace safenet::snn
