#include "tribranch/extract.hpp"

#include <algorithm>
#include <numeric>

namespace tribranch {

namespace {

std::size_t u(int v) { return static_cast<std::size_t>(v); }

template <typename T>
void merge_into(SlicePlan<T>& dst, SlicePlan<T>&& src) {
  for (auto& [k, v] : src) dst.insert_or_assign(k, std::move(v));
}

template <typename T>
void full_entry(SlicePlan<T>& plan, const std::string& name, const Shape& shape) {
  plan.insert_or_assign(name, SliceSpec<T>{shape, T(1)});
}

}  // namespace

void check_grid_matches(const BackboneSpec& spec, const ElasticGrid& grid) {
  grid.validate();
  if (grid.head_dim != spec.head_dim || grid.num_heads != spec.num_heads) {
    throw GridError("grid width lattice (" + std::to_string(grid.num_heads) + " x " + std::to_string(grid.head_dim) +
                    ") does not match the backbone (" + std::to_string(spec.num_heads) + " x " +
                    std::to_string(spec.head_dim) + ")");
  }
  const auto stages = spec.elastic_stages();
  if (spec.family == Family::resnet) {
    if (grid.depth_table.empty() || grid.depth_table.front().size() != stages.size()) {
      throw GridError("ResNet grids need a depth table with one column per elastic stage");
    }
    for (std::size_t k = 0; k < stages.size(); ++k) {
      if (grid.depth_table.front()[k] != spec.blocks_in_stage(stages[k])) {
        throw GridError("depth table entry 0 must equal the full stage depths");
      }
    }
    return;
  }
  if (!grid.depth_table.empty()) throw GridError("transformer grids use depth_max/depth_steps, not a depth table");
  if (grid.depth_max != spec.blocks_in_stage(stages.front())) {
    throw GridError("grid depth_max " + std::to_string(grid.depth_max) + " does not match the elastic stage depth " +
                    std::to_string(spec.blocks_in_stage(stages.front())));
  }
}

std::vector<int> active_blocks(int depth_max, int depth) {
  if (depth == depth_max) {
    std::vector<int> all(u(depth_max));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  return block_ids(depth_max, depth);
}

ResolvedArch resolve_arch(const BackboneSpec& spec, const ElasticGrid& grid, SubNetId id) {
  check_grid_matches(spec, grid);
  ResolvedArch arch;
  arch.family = spec.family;
  arch.width = width_of(grid, id.i);
  const std::vector<int> depths = stage_depths_of(grid, id.j);
  const std::vector<int> elastic = spec.elastic_stages();
  for (int s = 0; s < spec.stage_count(); ++s) {
    const int w = spec.stage_width(arch.width, s);
    arch.stage_widths.push_back(w);
    arch.stage_heads.push_back(spec.family == Family::resnet ? 0 : w / spec.head_dim);
    const int full = spec.blocks_in_stage(s);
    int depth = full;
    for (std::size_t k = 0; k < elastic.size(); ++k) {
      if (elastic[k] == s) depth = depths[k];
    }
    arch.stage_blocks.push_back(active_blocks(full, depth));
  }
  arch.feature_dim = spec.family == Family::resnet ? spec.feature_dim() : arch.stage_widths.back();
  return arch;
}

BackboneSpec sub_spec(const BackboneSpec& spec, const ElasticGrid& grid, SubNetId id) {
  const ResolvedArch arch = resolve_arch(spec, grid, id);
  BackboneSpec out = spec;
  out.num_heads = arch.width / spec.head_dim;
  if (spec.family == Family::resnet) {
    out.stem_width = spec.resnet_stem_width();
    out.out_width = spec.resnet_out_width(0);
  }
  if (spec.family == Family::vit) {
    out.depth = static_cast<int>(arch.stage_blocks[0].size());
  } else {
    for (int s = 0; s < spec.stage_count(); ++s) out.stage_depths[u(s)] = static_cast<int>(arch.stage_blocks[u(s)].size());
  }
  return out;
}

namespace slicing {

template <typename T>
SlicePlan<T> msa(const std::string& block, int width, T alpha) {
  SlicePlan<T> plan;
  const std::size_t d = u(width);
  for (const char* proj : {".attn_q", ".attn_k", ".attn_v", ".attn_proj"}) {
    plan[block + proj + ".weight"] = {Shape{d, d}, alpha};
    plan[block + proj + ".bias"] = {Shape{d}, T(1)};
  }
  return plan;
}

template <typename T>
SlicePlan<T> mlp(const std::string& block, int width, int ratio, T alpha) {
  SlicePlan<T> plan;
  const std::size_t d = u(width), h = u(width * ratio);
  plan[block + ".mlp_fc1.weight"] = {Shape{h, d}, alpha};
  plan[block + ".mlp_fc1.bias"] = {Shape{h}, T(1)};
  plan[block + ".mlp_fc2.weight"] = {Shape{d, h}, alpha};
  plan[block + ".mlp_fc2.bias"] = {Shape{d}, T(1)};
  return plan;
}

template <typename T>
SlicePlan<T> layer_norm(const std::string& norm, int width) {
  return {{norm + ".weight", {Shape{u(width)}, T(1)}}, {norm + ".bias", {Shape{u(width)}, T(1)}}};
}

template <typename T>
SlicePlan<T> swin_stage(const BackboneSpec& spec, int stage, const std::vector<int>& blocks, int width, T alpha) {
  SlicePlan<T> plan;
  const std::string pre = "swin." + std::to_string(stage);
  for (int k : blocks) {
    const std::string b = pre + "." + std::to_string(k);
    merge_into(plan, layer_norm<T>(b + ".norm1", width));
    merge_into(plan, msa<T>(b, width, alpha));
    merge_into(plan, layer_norm<T>(b + ".norm2", width));
    merge_into(plan, mlp<T>(b, width, spec.mlp_ratio, alpha));
  }
  if (stage + 1 < spec.stage_count()) {
    merge_into(plan, layer_norm<T>(pre + ".merge.norm", 4 * width));
    plan[pre + ".merge.reduction.weight"] = {Shape{u(2 * width), u(4 * width)}, alpha};
  }
  return plan;
}

template <typename T>
SlicePlan<T> resnet_block(const BackboneSpec& spec, int stage, int block, int mid_width, T alpha) {
  const std::size_t out = u(spec.resnet_out_width(stage));
  std::size_t in = out;
  if (block == 0) in = stage == 0 ? u(spec.resnet_stem_width()) : u(spec.resnet_out_width(stage - 1));
  const std::size_t d = u(mid_width);
  const std::string b = "resnet." + std::to_string(stage) + "." + std::to_string(block);
  SlicePlan<T> plan;
  plan[b + ".conv1.weight"] = {Shape{d, in, 1, 1}, T(1)};
  merge_into(plan, layer_norm<T>(b + ".norm1", mid_width));
  plan[b + ".conv2.weight"] = {Shape{d, d, 3, 3}, alpha};
  merge_into(plan, layer_norm<T>(b + ".norm2", mid_width));
  plan[b + ".conv3.weight"] = {Shape{out, d, 1, 1}, alpha};
  merge_into(plan, layer_norm<T>(b + ".norm3", static_cast<int>(out)));
  if (block == 0) plan[b + ".shortcut.weight"] = {Shape{out, in, 1, 1}, T(1)};
  return plan;
}

template <typename T>
SlicePlan<T> head_first_layer(const HeadConfig& heads, int head, int hidden, int feature_dim, int full_feature_dim,
                              T alpha) {
  SlicePlan<T> plan;
  const std::string pre = head_prefix(head);
  const std::size_t hid = u(hidden), bot = u(heads.bottleneck);
  plan[pre + ".fc1.weight"] = {Shape{hid, u(feature_dim)}, feature_dim == full_feature_dim ? T(1) : alpha};
  plan[pre + ".fc1.bias"] = {Shape{hid}, T(1)};
  plan[pre + ".fc2.weight"] = {Shape{hid, hid}, T(1)};
  plan[pre + ".fc2.bias"] = {Shape{hid}, T(1)};
  plan[pre + ".fc3.weight"] = {Shape{bot, hid}, T(1)};
  plan[pre + ".fc3.bias"] = {Shape{bot}, T(1)};
  plan[pre + ".proto.weight"] = {Shape{u(heads.prototypes.at(u(head))), bot}, T(1)};
  return plan;
}

}  // namespace slicing

template <typename T>
const SliceSpec<T>& SubNetView<T>::slice(const std::string& name) const {
  auto it = plan_.find(name);
  if (it == plan_.end()) throw ParameterError("parameter '" + name + "' is not part of this sub-network");
  return it->second;
}

template <typename T>
bool SubNetView<T>::is_identity() const {
  for (const auto& [name, s] : plan_) {
    if (!s.is_identity(store_->at(name).value.shape())) return false;
  }
  return true;
}

template <typename T>
SubNetView<T> materialize(ParamStore<T>& store, const ElasticGrid& grid, SubNetId id) {
  const BackboneSpec& spec = store.spec();
  if (!(grid == store.grid())) throw GridError("grid does not match the store's grid");
  ResolvedArch arch = resolve_arch(spec, grid, id);
  const T alpha = static_cast<T>(spec.max_width()) / static_cast<T>(arch.width);
  const std::size_t d = u(arch.width);
  const std::size_t cpp = u(spec.in_channels * spec.patch_size * spec.patch_size);
  SlicePlan<T> plan;

  switch (spec.family) {
    case Family::vit: {
      const std::size_t tokens = store.at("vit.pos_embed").value.dim(0);
      plan["vit.patch_embed.weight"] = {Shape{d, cpp}, T(1)};
      plan["vit.patch_embed.bias"] = {Shape{d}, T(1)};
      plan["vit.cls_token"] = {Shape{1, d}, T(1)};
      plan["vit.pos_embed"] = {Shape{tokens, d}, T(1)};
      for (int k : arch.stage_blocks[0]) {
        const std::string b = "vit." + std::to_string(k);
        merge_into(plan, slicing::layer_norm<T>(b + ".norm1", arch.width));
        merge_into(plan, slicing::msa<T>(b, arch.width, alpha));
        merge_into(plan, slicing::layer_norm<T>(b + ".norm2", arch.width));
        merge_into(plan, slicing::mlp<T>(b, arch.width, spec.mlp_ratio, alpha));
      }
      merge_into(plan, slicing::layer_norm<T>("vit.norm", arch.width));
      break;
    }
    case Family::swin: {
      const std::size_t tokens = store.at("swin.pos_embed").value.dim(0);
      plan["swin.patch_embed.weight"] = {Shape{d, cpp}, T(1)};
      plan["swin.patch_embed.bias"] = {Shape{d}, T(1)};
      plan["swin.pos_embed"] = {Shape{tokens, d}, T(1)};
      for (int s = 0; s < spec.stage_count(); ++s) {
        merge_into(plan, slicing::swin_stage<T>(spec, s, arch.stage_blocks[u(s)], arch.stage_widths[u(s)], alpha));
      }
      merge_into(plan, slicing::layer_norm<T>("swin.norm", arch.feature_dim));
      break;
    }
    case Family::resnet: {
      full_entry(plan, "resnet.stem.conv.weight", store.at("resnet.stem.conv.weight").value.shape());
      merge_into(plan, slicing::layer_norm<T>("resnet.stem.norm", spec.resnet_stem_width()));
      for (int s = 0; s < spec.stage_count(); ++s) {
        for (int k : arch.stage_blocks[u(s)]) {
          merge_into(plan, slicing::resnet_block<T>(spec, s, k, arch.stage_widths[u(s)], alpha));
        }
      }
      break;
    }
  }

  if (store.has_heads()) {
    const HeadConfig& heads = store.heads();
    for (int h = 0; h < heads.count(); ++h) {
      merge_into(plan, slicing::head_first_layer<T>(heads, h, heads.hidden, arch.feature_dim, spec.feature_dim(), alpha));
    }
  }
  return SubNetView<T>(store, id, std::move(arch), alpha, std::move(plan));
}

std::string renumbered_name(const std::string& name, const BackboneSpec& spec, const ResolvedArch& arch) {
  // family.[stage.]block.rest
  auto next_field = [&](std::size_t from) {
    const std::size_t dot = name.find('.', from);
    return std::pair{name.substr(from, dot == std::string::npos ? std::string::npos : dot - from), dot};
  };
  auto is_number = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  auto [fam, dot0] = next_field(0);
  if (dot0 == std::string::npos || fam.rfind("head", 0) == 0) return name;
  std::size_t stage = 0;
  std::size_t pos = dot0 + 1;
  if (spec.family != Family::vit) {
    auto [st, dot1] = next_field(pos);
    if (!is_number(st) || dot1 == std::string::npos) return name;
    stage = std::stoul(st);
    pos = dot1 + 1;
  }
  auto [blk, dot2] = next_field(pos);
  if (!is_number(blk) || dot2 == std::string::npos || stage >= arch.stage_blocks.size()) return name;
  const auto& blocks = arch.stage_blocks[stage];
  const auto it = std::find(blocks.begin(), blocks.end(), std::stoi(blk));
  if (it == blocks.end()) return name;
  return name.substr(0, pos) + std::to_string(it - blocks.begin()) + name.substr(dot2);
}

template <typename T>
ParamStore<T> bake(const SubNetView<T>& view) {
  const ParamStore<T>& src = view.store();
  const BackboneSpec spec = sub_spec(src.spec(), src.grid(), view.id());
  ElasticGrid grid;
  grid.head_dim = spec.head_dim;
  grid.num_heads = spec.num_heads;
  if (spec.family == Family::resnet) {
    std::vector<int> depths;
    for (int s : spec.elastic_stages()) depths.push_back(spec.blocks_in_stage(s));
    grid.depth_table = {depths};
  } else {
    grid.depth_max = spec.blocks_in_stage(spec.elastic_stages().front());
  }
  ParamStore<T> out(spec, grid, HeadConfig{0, 0, {}});
  for (const auto& [name, slice] : view.plan()) {
    if (name.rfind("head", 0) == 0) continue;
    out.add(renumbered_name(name, src.spec(), view.arch()), view.materialized(name));
  }
  return out;
}

#define TRIBRANCH_INSTANTIATE(T)                                                                              \
  template class SubNetView<T>;                                                                               \
  template SubNetView<T> materialize(ParamStore<T>&, const ElasticGrid&, SubNetId);                           \
  template ParamStore<T> bake(const SubNetView<T>&);                                                          \
  template SlicePlan<T> slicing::msa(const std::string&, int, T);                                             \
  template SlicePlan<T> slicing::mlp(const std::string&, int, int, T);                                        \
  template SlicePlan<T> slicing::layer_norm(const std::string&, int);                                         \
  template SlicePlan<T> slicing::swin_stage(const BackboneSpec&, int, const std::vector<int>&, int, T);       \
  template SlicePlan<T> slicing::resnet_block(const BackboneSpec&, int, int, int, T);                         \
  template SlicePlan<T> slicing::head_first_layer(const HeadConfig&, int, int, int, int, T);

TRIBRANCH_INSTANTIATE(float)
TRIBRANCH_INSTANTIATE(double)
#undef TRIBRANCH_INSTANTIATE

}  // namespace tribranch
