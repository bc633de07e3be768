#include "tribranch/losses.hpp"

#include <cmath>
#include <limits>

#include "tribranch/ops.hpp"

namespace tribranch {

void LossWeights::validate() const {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("loss.lambda", "must lie in (0, 1)");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("loss.gamma", "must be a finite value >= 0");
}

template <typename T>
Var<T> head_forward(Graph<T>& g, const SubNetView<T>& view, int head, Var<T> features) {
  const std::string pre = head_prefix(head);
  auto layer = [&](Var<T> x, const std::string& name) {
    Var<T> b = view.leaf(g, pre + name + ".bias");
    return ops::linear(x, view.leaf(g, pre + name + ".weight"), &b);
  };
  Var<T> h = ops::gelu(layer(features, ".fc1"));
  h = ops::gelu(layer(h, ".fc2"));
  h = ops::l2_normalize(layer(h, ".fc3"), static_cast<T>(kBottleneckEps));
  // prototypes are weight-normalized rows, so logits are cosines in [-1, 1]
  const Var<T> proto = ops::l2_normalize(view.leaf(g, pre + ".proto.weight"), static_cast<T>(kBottleneckEps));
  return ops::linear<T>(h, proto, nullptr);
}

template <typename T>
Tensor<T> sk_center(const Tensor<T>& logits, int n_iter, T eps) {
  if (logits.rank() != 2) throw DimensionError("sk_center expects [B, P] logits, got " + shape_str(logits.shape()));
  if (!(eps > T(0))) throw ParameterError("sk_center eps must be positive");
  if (n_iter < 0) throw ParameterError("sk_center n_iter must be >= 0");
  if (!all_finite(logits)) throw ParameterError("sk_center received non-finite logits");
  const std::size_t B = logits.dim(0), P = logits.dim(1);
  Tensor<T> k(logits.shape());
  auto normalize_rows = [&] {
    for (std::size_t b = 0; b < B; ++b) {
      T s = 0;
      for (std::size_t p = 0; p < P; ++p) s += k.at(b, p);
      for (std::size_t p = 0; p < P; ++p) k.at(b, p) /= s;
    }
  };
  for (std::size_t b = 0; b < B; ++b) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t p = 0; p < P; ++p) m = std::max(m, logits.at(b, p));
    for (std::size_t p = 0; p < P; ++p) k.at(b, p) = std::exp((logits.at(b, p) - m) / eps);
  }
  normalize_rows();
  const T col_target = static_cast<T>(B) / static_cast<T>(P);
  std::vector<T> col(P);
  for (int it = 0; it < n_iter; ++it) {
    std::fill(col.begin(), col.end(), T(0));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t p = 0; p < P; ++p) col[p] += k.at(b, p);
    }
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t p = 0; p < P; ++p) k.at(b, p) *= col_target / col[p];
    }
    normalize_rows();
  }
  return k;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T tau) {
  Graph<T> g;
  return ops::softmax(g.constant(logits), tau).value();
}

namespace {

template <typename T>
Var<T> local_mean(std::vector<Var<T>> terms) {
  Var<T> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return ops::scale(acc, T(1) / static_cast<T>(terms.size()));
}

}  // namespace

template <typename T>
Var<T> loss_intact(const Tensor<T>& p_a, Var<T> p_b1, std::span<const Var<T>> locals_b1) {
  Var<T> global = ops::cross_entropy(p_a, p_b1, static_cast<T>(kLogFloor));
  if (locals_b1.empty()) return global;
  std::vector<Var<T>> terms;
  for (const auto& l : locals_b1) terms.push_back(ops::cross_entropy(p_a, l, static_cast<T>(kLogFloor)));
  return ops::add(global, local_mean(std::move(terms)));
}

template <typename T>
ElasticLoss<T> loss_elastic(const Tensor<T>& p_a, Var<T> p_b1, Var<T> p_b2, std::span<const Var<T>> locals_b1,
                            std::span<const Var<T>> locals_b2) {
  if (locals_b1.size() != locals_b2.size()) throw DimensionError("intact and elastic local view counts differ");
  const T floor = static_cast<T>(kLogFloor);
  ElasticLoss<T> out;
  out.cross_view = ops::cross_entropy(p_a, p_b2, floor);
  out.same_view = ops::cross_entropy(ops::detach(p_b1), p_b2, floor);
  if (!locals_b2.empty()) {
    std::vector<Var<T>> cross, same;
    for (std::size_t i = 0; i < locals_b2.size(); ++i) {
      cross.push_back(ops::cross_entropy(p_a, locals_b2[i], floor));
      same.push_back(ops::cross_entropy(ops::detach(locals_b1[i]), locals_b2[i], floor));
    }
    out.cross_view = ops::add(out.cross_view, local_mean(std::move(cross)));
    out.same_view = ops::add(out.same_view, local_mean(std::move(same)));
  }
  return out;
}

template <typename T>
Var<T> loss_total(std::span<const HeadLoss<T>> heads, const LossWeights& w, const Var<T>* koleo_term) {
  if (heads.empty()) throw ParameterError("loss_total needs at least one head");
  const T lambda = static_cast<T>(w.lambda);
  Var<T> acc;
  for (const auto& h : heads) {
    Var<T> elastic = h.es2.valid() ? ops::add(h.es1, h.es2) : h.es1;
    Var<T> term = ops::add(ops::scale(h.intact, lambda), ops::scale(elastic, T(1) - lambda));
    acc = acc.valid() ? ops::add(acc, term) : term;
  }
  acc = ops::scale(acc, T(1) / static_cast<T>(heads.size()));
  if (koleo_term && w.gamma != 0.0) acc = ops::add(acc, ops::scale(*koleo_term, static_cast<T>(w.gamma)));
  return acc;
}

template <typename T>
Var<T> koleo_single(Var<T> z) {
  if (z.shape().size() != 2) throw DimensionError("koleo expects [B, D] features, got " + shape_str(z.shape()));
  const std::size_t B = z.dim(0);
  if (B < 2) throw ParameterError("koleo needs at least two samples");
  Var<T> sim = ops::matmul(z, z, false, true);
  // Nearest neighbour (largest similarity, self excluded) fixed from the values.
  Tensor<T> pick(Shape{B, B});
  const Tensor<T>& s = sim.value();
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < B; ++j) {
      if (j != i && s.at(i, j) > s.at(i, best)) best = j;
    }
    pick.at(i, best) = T(1);
  }
  Var<T> nearest = ops::sum_last(ops::scale_by(sim, pick));
  Var<T> d2 = ops::add_scalar(ops::scale(nearest, T(-2)), T(2));
  const T floor = static_cast<T>(kKoleoDistanceFloor * kKoleoDistanceFloor);
  return ops::scale(ops::mean(ops::log(d2, floor)), T(-0.5));
}

template <typename T>
Var<T> koleo(Var<T> z_b1, Var<T> z_b2) {
  const T eps = static_cast<T>(kBottleneckEps);
  return ops::add(koleo_single(ops::l2_normalize(z_b1, eps)), koleo_single(ops::l2_normalize(z_b2, eps)));
}

#define TRIBRANCH_INSTANTIATE(T)                                                                         \
  template Var<T> head_forward(Graph<T>&, const SubNetView<T>&, int, Var<T>);                            \
  template Tensor<T> sk_center(const Tensor<T>&, int, T);                                                \
  template Tensor<T> softmax_rows(const Tensor<T>&, T);                                                  \
  template Var<T> loss_intact(const Tensor<T>&, Var<T>, std::span<const Var<T>>);                        \
  template ElasticLoss<T> loss_elastic(const Tensor<T>&, Var<T>, Var<T>, std::span<const Var<T>>,        \
                                       std::span<const Var<T>>);                                         \
  template Var<T> loss_total(std::span<const HeadLoss<T>>, const LossWeights&, const Var<T>*);           \
  template Var<T> koleo_single(Var<T>);                                                                  \
  template Var<T> koleo(Var<T>, Var<T>);

TRIBRANCH_INSTANTIATE(float)
TRIBRANCH_INSTANTIATE(double)
#undef TRIBRANCH_INSTANTIATE

}  // namespace tribranch
