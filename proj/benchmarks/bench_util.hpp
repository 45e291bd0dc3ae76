#pragma once

#include "safenet/random.hpp"
#include "safenet/tensor.hpp"

namespace safenet::bench {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_binary(Shape shape, Rng& rng, double p_one) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform() < p_one ? 1.0 : 0.0;
  return t;
}

}  // namespace safenet::bench
