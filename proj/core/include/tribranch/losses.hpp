#pragma once

#include <span>
#include <vector>

#include "tribranch/extract.hpp"
#include "tribranch/graph.hpp"

namespace tribranch {

struct LossWeights {
  double lambda = 0.8;  // intact vs elastic balance
  double gamma = 0.1;   // KoLeo weight

  void validate() const;  // ConfigError naming loss.lambda / loss.gamma
};

inline constexpr double kBottleneckEps = 1e-6;
inline constexpr double kKoleoDistanceFloor = 1e-8;
inline constexpr double kLogFloor = 1e-12;

/// Projection head `head` of the view: fc1 -> GELU -> fc2 -> GELU -> fc3 ->
/// L2 normalize (eps 1e-6) -> prototypes (no bias, rows L2-normalized). The view's fc1 slice
/// adapts the head to the sub-network's feature width; every later layer is
/// the intact layer. Returns logits [B, P].
template <typename T>
Var<T> head_forward(Graph<T>& g, const SubNetView<T>& view, int head, Var<T> features);

/// Sinkhorn-Knopp centering of teacher logits [B, P] into target
/// probabilities. K = exp(logits / eps) is row-normalized, then `n_iter`
/// rounds of column scaling to B/P followed by row normalization; rows of the
/// result sum to 1. The initial row normalization makes the output exactly
/// invariant to per-row logit shifts. Throws ParameterError on non-finite
/// logits, eps <= 0 or n_iter < 0.
template <typename T>
Tensor<T> sk_center(const Tensor<T>& logits, int n_iter, T eps);

// Teacher distribution without centering: softmax(logits / tau).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T tau);

/// Intact-student distillation: CE(p_a, p_b1) + mean_i CE(p_a, p_{l_i1}).
/// Each CE is averaged over the batch rows.
template <typename T>
Var<T> loss_intact(const Tensor<T>& p_a, Var<T> p_b1, std::span<const Var<T>> locals_b1);

template <typename T>
struct ElasticLoss {
  Var<T> cross_view;  // CE(p_a, p_b2) + mean_i CE(p_a, p_{l_i2})
  Var<T> same_view;   // CE(p_b1, p_b2) + mean_i CE(p_{l_i1}, p_{l_i2}), targets detached
};

template <typename T>
ElasticLoss<T> loss_elastic(const Tensor<T>& p_a, Var<T> p_b1, Var<T> p_b2, std::span<const Var<T>> locals_b1,
                            std::span<const Var<T>> locals_b2);

template <typename T>
struct HeadLoss {
  Var<T> intact;
  Var<T> es1;
  Var<T> es2;  // invalid when same-view distillation is disabled
};

/// (1/H) sum_h [lambda L_IS + (1 - lambda)(L_ES1 + L_ES2)] + gamma * koleo.
/// `koleo` may be null.
template <typename T>
Var<T> loss_total(std::span<const HeadLoss<T>> heads, const LossWeights& w, const Var<T>* koleo);

// -(1/B) sum_i log d_i over rows already L2-normalized, d_i the distance to
// the nearest other row (floored at 1e-8). Throws ParameterError when B < 2.
template <typename T>
Var<T> koleo_single(Var<T> z);

// KoLeo of both student branches, each row-normalized first.
template <typename T>
Var<T> koleo(Var<T> z_b1, Var<T> z_b2);

}  // namespace tribranch
