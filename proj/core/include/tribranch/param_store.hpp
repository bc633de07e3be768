#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tribranch/elastic_grid.hpp"
#include "tribranch/errors.hpp"
#include "tribranch/graph.hpp"
#include "tribranch/model_spec.hpp"

namespace tribranch {

/// Named parameters of the intact network (backbone and heads) plus the
/// metadata needed to interpret them. All branches read from one store; the
/// teacher keeps its own copy.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Parameter<T>>;

  ParamStore() = default;
  ParamStore(BackboneSpec spec, ElasticGrid grid, HeadConfig heads)
      : spec_(std::move(spec)), grid_(std::move(grid)), heads_(std::move(heads)) {}

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = params_.try_emplace(name, std::move(value));
    if (!inserted) throw ParameterError("duplicate parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ParameterError("no parameter named '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  const BackboneSpec& spec() const { return spec_; }
  const ElasticGrid& grid() const { return grid_; }
  const HeadConfig& heads() const { return heads_; }
  bool has_heads() const { return contains(head_prefix(0) + ".fc1.weight"); }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.fill(T(0));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }

 private:
  BackboneSpec spec_;
  ElasticGrid grid_;
  HeadConfig heads_;
  Map params_;
};

/// Builds a freshly initialized store: truncated-normal(0.02) linear and
/// embedding weights, fan-out Kaiming convolutions, zero biases, unit norms.
/// With `with_heads` false only the backbone is created.
template <typename T>
ParamStore<T> make_store(const BackboneSpec& spec, const ElasticGrid& grid, const HeadConfig& heads,
                         std::uint64_t seed, bool with_heads = true);

}  // namespace tribranch
