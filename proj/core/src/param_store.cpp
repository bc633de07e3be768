#include "tribranch/param_store.hpp"

#include <cmath>

#include "tribranch/rng.hpp"

namespace tribranch {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
Tensor<T> init_tensor(const std::string& name, const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  if (ends_with(name, ".bias")) return t;
  if (shape.size() == 1) {
    t.fill(T(1));  // norm scale
    return t;
  }
  if (shape.size() == 4) {
    const double fan_out = static_cast<double>(shape[0] * shape[2] * shape[3]);
    const double std = std::sqrt(2.0 / fan_out);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal() * std);
    return t;
  }
  for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
  return t;
}

}  // namespace

template <typename T>
ParamStore<T> make_store(const BackboneSpec& spec, const ElasticGrid& grid, const HeadConfig& heads,
                         std::uint64_t seed, bool with_heads) {
  spec.validate();
  grid.validate();
  ParamStore<T> store(spec, grid, heads);
  Rng rng(seed);
  for (const auto& [name, shape] : backbone_param_shapes(spec)) store.add(name, init_tensor<T>(name, shape, rng));
  if (with_heads) {
    for (const auto& [name, shape] : head_param_shapes(heads, spec.feature_dim())) {
      store.add(name, init_tensor<T>(name, shape, rng));
    }
  }
  return store;
}

template ParamStore<float> make_store(const BackboneSpec&, const ElasticGrid&, const HeadConfig&, std::uint64_t, bool);
template ParamStore<double> make_store(const BackboneSpec&, const ElasticGrid&, const HeadConfig&, std::uint64_t, bool);

}  // namespace tribranch
