#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tribranch/tensor.hpp"

namespace tribranch {

enum class Family { vit, swin, resnet };

std::string to_string(Family f);
Family family_from_string(const std::string& s);  // throws ParameterError

/// Geometry of a width/depth-parameterized backbone.
///
/// `head_dim * num_heads` is the maximum width: the token dimension for ViT,
/// the stage-1 token dimension for Swin (doubling per stage), and the stage-1
/// bottleneck mid width for ResNet (doubling per stage, block outputs are 4x
/// the mid width).
struct BackboneSpec {
  Family family = Family::vit;
  int image_size = 16;  // global crop size; positional tables are built for it
  int patch_size = 4;   // transformers only
  int in_channels = 3;
  int head_dim = 8;
  int num_heads = 4;
  int depth = 4;  // ViT block count
  int mlp_ratio = 4;
  std::vector<int> stage_depths;  // Swin / ResNet blocks per stage
  int window = 4;                 // Swin attention window (tokens per side)
  double drop_path = 0.0;
  double ln_eps = 1e-6;
  // ResNet only; 0 means derived from the max width. Baked sub-networks keep
  // the parent's stem and block-output widths while their mid widths shrink.
  int stem_width = 0;
  int out_width = 0;  // stage-0 block output channels

  int max_width() const { return head_dim * num_heads; }
  int stage_count() const { return family == Family::vit ? 1 : static_cast<int>(stage_depths.size()); }
  int blocks_in_stage(int s) const { return family == Family::vit ? depth : stage_depths.at(static_cast<std::size_t>(s)); }
  // Stage width for a given stage-1 width (token dim or mid width).
  int stage_width(int base, int s) const { return family == Family::vit ? base : base << s; }
  int feature_dim() const;
  int resnet_stem_width() const { return stem_width > 0 ? stem_width : max_width(); }
  int resnet_out_width(int s) const { return (out_width > 0 ? out_width : 4 * max_width()) << s; }
  int tokens_per_side(int image) const { return image / patch_size; }

  // Stages whose depth is elastic: ViT {0}, Swin {2} (the last stage when
  // there are fewer than three), ResNet {1, 2}.
  std::vector<int> elastic_stages() const;

  void validate() const;  // throws ConfigError naming the field

  bool operator==(const BackboneSpec&) const = default;
};

struct HeadConfig {
  int hidden = 2048;
  int bottleneck = 256;
  std::vector<int> prototypes = {8192, 16384, 32768, 65536};

  int count() const { return static_cast<int>(prototypes.size()); }
  bool operator==(const HeadConfig&) const = default;
};

using ShapeList = std::vector<std::pair<std::string, Shape>>;

// Canonical parameter names and shapes of the full backbone.
ShapeList backbone_param_shapes(const BackboneSpec& spec);

// Head names are "head{h}.{fc1,fc2,fc3,proto}.{weight,bias}".
ShapeList head_param_shapes(const HeadConfig& heads, int feature_dim);

std::string head_prefix(int h);

}  // namespace tribranch
