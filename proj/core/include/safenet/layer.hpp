#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "safenet/autodiff.hpp"
#include "safenet/random.hpp"

namespace safenet {

// Operation counts gathered by the spiking attention kernel when a forward
// pass runs in instrumented mode.
struct SpikeCounts {
  std::uint64_t score_additions = 0;   // gather-accumulate adds over active queries
  std::uint64_t lazy_additions = 0;    // column means of V that fill lazy rows
  std::uint64_t apply_macs = 0;        // P V products of the active rows
  std::uint64_t dense_score_macs = 0;  // what a dense Q K^T would have cost
  std::uint64_t query_spikes = 0;      // nonzero entries of the spiking queries
  std::uint64_t query_elements = 0;
  std::uint64_t active_queries = 0;
  std::uint64_t total_queries = 0;

  SpikeCounts& operator+=(const SpikeCounts& other);
};

struct ForwardContext {
  Tape& tape;
  bool training = false;
  // Replace every spiking layer by the identity (used for gradient checks);
  // spiking attention then multiplies real-valued queries densely.
  bool spiking_passthrough = false;
  SpikeCounts* counts = nullptr;
};

enum class SlotKind { kParameter, kBuffer };

// Enumerates named tensors of a layer in a fixed order. Parameters are
// learnable; buffers are running statistics that travel with checkpoints.
using SlotVisitor = std::function<void(const std::string& name, Tensor& tensor, SlotKind kind)>;

// Fills t with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and marks it learnable.
void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

}  // namespace safenet
