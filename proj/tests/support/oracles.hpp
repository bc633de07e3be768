#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the slicing plan, the SK routine or the KoLeo op they check.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tribranch/elastic_grid.hpp"
#include "tribranch/graph.hpp"
#include "tribranch/model_spec.hpp"
#include "tribranch/param_store.hpp"
#include "tribranch/rng.hpp"

namespace oracle {

using tribranch::BackboneSpec;
using tribranch::ElasticGrid;
using tribranch::ParamStore;
using tribranch::SubNetId;
using tribranch::Tensor;

// floor((L - 1) k / (l - 1)) computed with plain integer arithmetic; all
// blocks when l == L.
std::vector<int> block_ids(int depth_max, int depth);

// Standalone spec of a lattice point, derived from the grid directly.
BackboneSpec sub_spec(const BackboneSpec& parent, const ElasticGrid& grid, SubNetId id);

/// Copies a sub-network out of `parent` with explicit element loops: every
/// tensor of the standalone spec is the leading block of its parent tensor,
/// weights of width-reducing linear maps multiplied by D_max / D_i. Blocks of
/// the elastic stages are renumbered densely. With `heads`, the head fc1
/// input columns are taken and scaled the same way.
template <typename T>
ParamStore<T> loop_subnet(const ParamStore<T>& parent, const ElasticGrid& grid, SubNetId id, bool heads = false);

// Random tensor with entries uniform in [-scale, scale].
template <typename T>
Tensor<T> random_tensor(const tribranch::Shape& shape, tribranch::Rng& rng, double scale = 1.0);

// Perturbs every parameter of the store by N(0, scale^2) noise so tests do
// not run on the structured initial values (unit norms, zero biases).
template <typename T>
void jitter_params(ParamStore<T>& store, std::uint64_t seed, double scale);

struct FdResult {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

/// Central finite differences of a scalar loss at `count` random
/// coordinates whose analytic gradient magnitude exceeds `min_grad`.
/// rel_error = |a - f| / max(|a|, |f|).
std::vector<FdResult> fd_check(ParamStore<double>& store,
                               const std::function<tribranch::Var<double>(tribranch::Graph<double>&)>& loss,
                               std::size_t count, std::uint64_t seed, double h = 1e-5, double min_grad = 1e-5);

// -(1/B) sum_i log(max(min_{j != i} ||z_i - z_j||, floor)) by double loops on
// rows that are normalized here first.
double koleo(const std::vector<std::vector<double>>& rows, double floor = 1e-8);

/// Sinkhorn with explicit scaling vectors: Q = diag(r) K diag(c) with
/// K = exp((l - rowmax) / eps); r is set so rows sum to one, then each round
/// sets c so columns sum to B / P and r so rows sum to one again.
std::vector<std::vector<double>> sinkhorn(const std::vector<std::vector<double>>& logits, int iters, double eps);

/// Closed form of t_{k+1} = mu_k t_k + (1 - mu_k) s_k:
/// t_n = (prod mu) t_0 + sum_k (1 - mu_k) s_k prod_{m > k} mu_m.
double ema_closed_form(double t0, const std::vector<double>& students, const std::vector<double>& mus);

}  // namespace oracle
