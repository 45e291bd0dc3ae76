#include "safenet/layer.hpp"

#include <cmath>

namespace safenet {

SpikeCounts& SpikeCounts::operator+=(const SpikeCounts& other) {
  score_additions += other.score_additions;
  lazy_additions += other.lazy_additions;
  apply_macs += other.apply_macs;
  dense_score_macs += other.dense_score_macs;
  query_spikes += other.query_spikes;
  query_elements += other.query_elements;
  active_queries += other.active_queries;
  total_queries += other.total_queries;
  return *this;
}

void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : t.values()) x = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
}

}  // namespace safenet
