#pragma once

#include <cstdint>
#include <vector>

#include "tribranch/rng.hpp"
#include "tribranch/tensor.hpp"

namespace tribranch {

/// Multi-crop augmentation settings. Defaults are the reference ImageNet
/// values; desk configs shrink sizes and blur radii.
struct AugmentConfig {
  int global_size = 224;
  int local_size = 96;
  int local_crops = 8;
  double min_gcs = 0.32, max_gcs = 1.0;
  double min_lcs = 0.05, max_lcs = 0.32;
  double flip_prob = 0.5;
  // colour jitter
  double jitter_prob = 0.8;
  double brightness = 0.4, contrast = 0.4, saturation = 0.2, hue = 0.1;
  // gaussian blur, radius = sigma in pixels of the output crop
  double blur_radius_min = 0.1, blur_radius_max = 2.0;
  double blur_prob_g1 = 1.0, blur_prob_g2 = 0.1, blur_prob_l = 0.5;
  // solarization, threshold on the 0..255 scale
  double solarize_threshold = 128.0;
  double solarize_prob_g1 = 0.0, solarize_prob_g2 = 0.2, solarize_prob_l = 0.0;

  void validate() const;  // ConfigError naming the aug.* key
};

struct ViewRecord {
  std::uint64_t seed = 0;
  bool flipped = false;
  bool jittered = false;
  bool blurred = false;
  bool solarized = false;
};

/// Two global crops [B, C, G, G] and `local_crops` local crops [B, C, L, L].
/// records[b * (2 + v) + k] describes view k of sample b (k = 0, 1 global).
template <typename T>
struct ViewBatch {
  Tensor<T> global_a;
  Tensor<T> global_b;
  std::vector<Tensor<T>> locals;
  std::vector<ViewRecord> records;
};

/// Augments images [B, C, H, W] with values in [0, 1]. Every view draws from
/// its own stream seeded by mix_seed(seed, view index), so the result does
/// not depend on evaluation order. Colour jitter needs C == 3 and is skipped
/// otherwise. Throws ConfigError when a crop size exceeds the image.
template <typename T>
ViewBatch<T> augment(const Tensor<T>& images, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace tribranch
