#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tribranch/tensor.hpp"

namespace tribranch {

template <typename T>
struct LabeledImages {
  Tensor<T> images;                  // [N, C, H, W], values in [0, 1]
  std::vector<std::int64_t> labels;  // N class ids

  std::size_t size() const { return labels.size(); }
};

template <typename T>
struct Dataset {
  LabeledImages<T> train;
  LabeledImages<T> test;
  int num_classes = 0;
};

/// Synthetic RGB shapes: class 0 circle, 1 square, 2 triangle, with random
/// position, size, rotation and colours on a dark background. Labels are
/// balanced (round-robin) and the generator is deterministic per seed.
template <typename T>
Dataset<T> make_shapes(std::size_t n_train, std::size_t n_test, int image_size, std::uint64_t seed);

// Images [N, ...] selected by index along the leading axis.
template <typename T>
Tensor<T> gather(const Tensor<T>& images, std::span<const std::size_t> index);

}  // namespace tribranch
