#pragma once

#include <map>
#include <string>
#include <vector>

#include "tribranch/elastic_grid.hpp"
#include "tribranch/graph.hpp"
#include "tribranch/param_store.hpp"

namespace tribranch {

template <typename T>
using SlicePlan = std::map<std::string, SliceSpec<T>>;

/// Geometry of a resolved sub-network.
struct ResolvedArch {
  Family family = Family::vit;
  int width = 0;                             // stage-1 width D_i
  std::vector<int> stage_widths;             // token dims (transformers) / mid widths (ResNet)
  std::vector<int> stage_heads;              // attention heads per stage (transformers)
  std::vector<std::vector<int>> stage_blocks;  // active original block ids per stage
  int feature_dim = 0;                       // pooled feature width fed to the heads
};

// Throws GridError when the grid does not describe the spec's lattice.
void check_grid_matches(const BackboneSpec& spec, const ElasticGrid& grid);

// Active block ids of one stage: all blocks at full depth, evenly spaced ids
// otherwise.
std::vector<int> active_blocks(int depth_max, int depth);

ResolvedArch resolve_arch(const BackboneSpec& spec, const ElasticGrid& grid, SubNetId id);

// Backbone spec of the standalone sub-network (blocks renumbered densely).
BackboneSpec sub_spec(const BackboneSpec& spec, const ElasticGrid& grid, SubNetId id);

/// Per-module slicing rules. Each returns the plan entries for one module;
/// `width` is the module's (stage) width and `alpha` = D_max / D_i.
namespace slicing {

// Q/K/V projections [:d, :d]*alpha (rows are head-major, so this keeps the
// first d/head_dim heads), biases [:d]; output projection [:d, :d]*alpha and
// bias [:d].
template <typename T>
SlicePlan<T> msa(const std::string& block, int width, T alpha);

// fc1 [:d*s, :d]*alpha, bias [:d*s]; fc2 [:d, :d*s]*alpha, bias [:d].
template <typename T>
SlicePlan<T> mlp(const std::string& block, int width, int ratio, T alpha);

// weight [:d], bias [:d], never scaled.
template <typename T>
SlicePlan<T> layer_norm(const std::string& norm, int width);

// One Swin stage: every active block as MSA/MLP/LN, plus the patch-merging
// layer after the stage (norm [:4d], reduction [:2d, :4d]*alpha).
template <typename T>
SlicePlan<T> swin_stage(const BackboneSpec& spec, int stage, const std::vector<int>& blocks, int width, T alpha);

// One ResNet bottleneck: conv1 [:d] (unscaled), conv2 [:d, :d]*alpha,
// conv3 [:, :d]*alpha, mid norms [:d]; output channels untouched.
template <typename T>
SlicePlan<T> resnet_block(const BackboneSpec& spec, int stage, int block, int mid_width, T alpha);

// Elastic head: fc1 input columns [:, :f]*alpha; every other head layer is
// the intact layer itself.
template <typename T>
SlicePlan<T> head_first_layer(const HeadConfig& heads, int head, int hidden, int feature_dim, int full_feature_dim,
                              T alpha);

}  // namespace slicing

/// A sub-network resolved against a parameter store.
///
/// The view owns only a slicing plan; parameter storage stays in the store,
/// so gradients recorded through `leaf` land in the intact parameters. A view
/// must not outlive its store.
template <typename T>
class SubNetView {
 public:
  SubNetView(ParamStore<T>& store, SubNetId id, ResolvedArch arch, T alpha, SlicePlan<T> plan)
      : store_(&store), id_(id), arch_(std::move(arch)), alpha_(alpha), plan_(std::move(plan)) {}

  SubNetId id() const { return id_; }
  const ResolvedArch& arch() const { return arch_; }
  T alpha() const { return alpha_; }
  const SlicePlan<T>& plan() const { return plan_; }
  ParamStore<T>& store() const { return *store_; }

  bool trainable() const { return trainable_; }
  void set_trainable(bool t) { trainable_ = t; }

  const SliceSpec<T>& slice(const std::string& name) const;
  bool contains(const std::string& name) const { return plan_.count(name) != 0; }

  // Graph leaf for one parameter of the sub-network.
  Var<T> leaf(Graph<T>& g, const std::string& name) const {
    return g.parameter(store_->at(name), slice(name), trainable_);
  }

  // Sliced and scaled copy of one parameter.
  Tensor<T> materialized(const std::string& name) const { return take_prefix(store_->at(name).value, slice(name)); }

  // True when every entry is the full tensor with alpha 1.
  bool is_identity() const;

 private:
  ParamStore<T>* store_;
  SubNetId id_;
  ResolvedArch arch_;
  T alpha_;
  SlicePlan<T> plan_;
  bool trainable_ = true;
};

/// Resolves sub-network `id` of `grid` against `store` (backbone and, when
/// present, heads). RangeError when the id is outside the grid.
template <typename T>
SubNetView<T> materialize(ParamStore<T>& store, const ElasticGrid& grid, SubNetId id);

// Full network view: every parameter, identity slices.
template <typename T>
SubNetView<T> intact_view(ParamStore<T>& store) {
  return materialize(store, store.grid(), SubNetId{0, 0});
}

/// Deep copy of the viewed backbone with alpha baked into the weights and
/// blocks renumbered, as a standalone single-point store.
template <typename T>
ParamStore<T> bake(const SubNetView<T>& view);

// Renames original block ids to dense ranks; identity when nothing is dropped.
std::string renumbered_name(const std::string& name, const BackboneSpec& spec, const ResolvedArch& arch);

}  // namespace tribranch
