#include "tribranch/sampler.hpp"

#include "tribranch/errors.hpp"

namespace tribranch {

namespace {

double skew_factor(double skew, int steps, int idx) {
  if (steps == 0) return 1.0;
  return (skew - 1.0) * static_cast<double>(steps - idx) / static_cast<double>(steps) + 1.0;
}

}  // namespace

SubNetId from_sampler_index(const ElasticGrid& grid, int small_i, int small_j) {
  return {grid.width_count() - 1 - small_i, grid.depth_count() - 1 - small_j};
}

std::pair<int, int> to_sampler_index(const ElasticGrid& grid, SubNetId id) {
  return {grid.width_count() - 1 - id.i, grid.depth_count() - 1 - id.j};
}

double sample_prob(const SamplerConfig& cfg, const ElasticGrid& grid, int small_i, int small_j) {
  if (cfg.width_skew < 1.0 || cfg.depth_skew < 1.0) throw ParameterError("sampler skews must be >= 1");
  const int w_steps = grid.width_count() - 1;
  const int d_steps = grid.depth_count() - 1;
  if (small_i < 0 || small_i > w_steps || small_j < 0 || small_j > d_steps) {
    throw RangeError("sampler index (" + std::to_string(small_i) + ", " + std::to_string(small_j) +
                     ") outside the grid");
  }
  // The normalizer factorizes into the product of the two axis sums.
  double zw = 0.0, zd = 0.0;
  for (int i = 0; i <= w_steps; ++i) zw += skew_factor(cfg.width_skew, w_steps, i);
  for (int j = 0; j <= d_steps; ++j) zd += skew_factor(cfg.depth_skew, d_steps, j);
  return skew_factor(cfg.width_skew, w_steps, small_i) / zw * (skew_factor(cfg.depth_skew, d_steps, small_j) / zd);
}

SubNetSampler::SubNetSampler(ElasticGrid grid, SamplerConfig cfg)
    : grid_(std::move(grid)), cfg_(cfg), rng_(cfg.seed) {
  grid_.validate();
  if (cfg_.mode == SamplerMode::probabilistic) {
    double acc = 0.0;
    for (int i = 0; i < grid_.width_count(); ++i) {
      for (int j = 0; j < grid_.depth_count(); ++j) {
        acc += sample_prob(cfg_, grid_, i, j);
        cdf_.push_back(acc);
      }
    }
  } else {
    cycle_ = enumerate(grid_);
    cursor_ = cycle_.size();
  }
}

SubNetId SubNetSampler::next() {
  ++draws_;
  if (cfg_.mode == SamplerMode::probabilistic) {
    const double u = rng_.uniform() * cdf_.back();
    std::size_t k = 0;
    while (k + 1 < cdf_.size() && u >= cdf_[k]) ++k;
    const int d = grid_.depth_count();
    return from_sampler_index(grid_, static_cast<int>(k) / d, static_cast<int>(k) % d);
  }
  if (cursor_ == cycle_.size()) {
    rng_.shuffle(std::span<SubNetId>(cycle_));
    cursor_ = 0;
  }
  return cycle_[cursor_++];
}

}  // namespace tribranch
