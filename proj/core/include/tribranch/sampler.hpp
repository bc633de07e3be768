#pragma once

#include <cstdint>
#include <vector>

#include "tribranch/elastic_grid.hpp"
#include "tribranch/rng.hpp"

namespace tribranch {

enum class SamplerMode { probabilistic, round_robin };

struct SamplerConfig {
  SamplerMode mode = SamplerMode::probabilistic;
  double width_skew = 3.0;  // s_w >= 1
  double depth_skew = 3.0;  // s_d >= 1
  std::uint64_t seed = 0;
};

// The skewed sampling distribution uses its own orientation: index 0 is the
// *smallest* width / depth, which receives the largest probability. These
// map between that orientation and SubNetId (where 0 is the largest).
SubNetId from_sampler_index(const ElasticGrid& grid, int small_i, int small_j);
std::pair<int, int> to_sampler_index(const ElasticGrid& grid, SubNetId id);

/// Probability of the sub-network at sampler indices (small_i, small_j).
///
/// p = w(i) h(j) / Z with w(i) = (s_w - 1)(W - i)/W + 1 over the W + 1
/// widths, h(j) likewise over depths, Z the sum over the grid. An axis with a
/// single value contributes a constant factor 1.
double sample_prob(const SamplerConfig& cfg, const ElasticGrid& grid, int small_i, int small_j);

/// Draws the elastic sub-network for each training step.
///
/// Probabilistic mode draws i.i.d. from sample_prob. Round-robin mode walks a
/// shuffled permutation of all ids and reshuffles at every cycle boundary.
class SubNetSampler {
 public:
  SubNetSampler(ElasticGrid grid, SamplerConfig cfg);

  SubNetId next();

  const ElasticGrid& grid() const { return grid_; }
  const SamplerConfig& config() const { return cfg_; }
  std::uint64_t draws() const { return draws_; }

 private:
  ElasticGrid grid_;
  SamplerConfig cfg_;
  Rng rng_;
  std::vector<double> cdf_;          // sampler orientation, row-major (i, j)
  std::vector<SubNetId> cycle_;
  std::size_t cursor_ = 0;
  std::uint64_t draws_ = 0;
};

}  // namespace tribranch
