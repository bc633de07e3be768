#pragma once

// Small backbones with every lattice axis exercised.

#include "tribranch/elastic_grid.hpp"
#include "tribranch/model_spec.hpp"
#include "tribranch/trainer.hpp"

namespace toys {

inline tribranch::BackboneSpec vit() {
  tribranch::BackboneSpec s;
  s.family = tribranch::Family::vit;
  s.image_size = 16;
  s.patch_size = 4;
  s.head_dim = 8;
  s.num_heads = 4;
  s.depth = 4;
  return s;
}

inline tribranch::ElasticGrid vit_grid() { return tribranch::ElasticGrid{8, 4, 2, 4, 2, {}}; }

inline tribranch::BackboneSpec swin() {
  tribranch::BackboneSpec s;
  s.family = tribranch::Family::swin;
  s.image_size = 16;
  s.patch_size = 2;
  s.head_dim = 4;
  s.num_heads = 4;
  s.stage_depths = {2, 4};
  s.window = 4;
  s.mlp_ratio = 2;
  return s;
}

inline tribranch::ElasticGrid swin_grid() { return tribranch::ElasticGrid{4, 4, 2, 4, 2, {}}; }

inline tribranch::BackboneSpec resnet() {
  tribranch::BackboneSpec s;
  s.family = tribranch::Family::resnet;
  s.image_size = 8;
  s.head_dim = 4;
  s.num_heads = 4;
  s.stage_depths = {1, 3, 3, 1};
  s.stem_width = 8;
  s.out_width = 16;
  return s;
}

inline tribranch::ElasticGrid resnet_grid() {
  tribranch::ElasticGrid g{4, 4, 2, 1, 0, {}};
  g.depth_table = tribranch::depth_table_product({{2, 3}, {2, 3}});
  return g;
}

inline tribranch::HeadConfig heads() { return tribranch::HeadConfig{16, 8, {6, 12}}; }

// Toy ViT run small enough for unit tests: batch 8, two locals, 4 steps/epoch.
inline tribranch::TrainConfig train_config(std::uint64_t seed = 0) {
  tribranch::TrainConfig c;
  c.backbone = vit();
  c.grid = vit_grid();
  c.heads = heads();
  c.seed = seed;
  c.sched.epochs = 2;
  c.sched.steps_per_epoch = 4;
  c.sched.batch_size = 8;
  c.sched.warmup_epochs = 1;
  c.sched.tau_warmup_epochs = 1;
  c.aug.global_size = 16;
  c.aug.local_size = 8;
  c.aug.local_crops = 2;
  c.aug.blur_radius_min = 0.01;
  c.aug.blur_radius_max = 0.15;
  return c;
}

}  // namespace toys
