#include "tribranch/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "tribranch/errors.hpp"
#include "tribranch/rng.hpp"

namespace tribranch {

namespace {

// Inside test in the shape's local frame (unit size).
bool inside(int cls, double u, double v) {
  switch (cls) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    default: {
      // Equilateral triangle with circumradius 1, apex at (0, 1).
      if (v < -0.5 || v > 1.0) return false;
      return std::abs(u) <= (1.0 - v) / std::sqrt(3.0);
    }
  }
}

template <typename T>
void draw(Rng& rng, int cls, int size, T* out) {
  const auto n = static_cast<std::size_t>(size);
  // Light shape on a dark background; the tint stays within what colour
  // jitter perturbs, so colour carries no class signal worth memorising.
  std::array<double, 3> bg{}, fg{};
  const double lo = rng.uniform(0.05, 0.3), hi = rng.uniform(0.65, 0.95);
  for (auto& c : bg) c = lo + rng.uniform(-0.05, 0.05);
  for (auto& c : fg) c = hi + rng.uniform(-0.05, 0.05);
  const double s = static_cast<double>(size);
  const double radius = rng.uniform(0.22, 0.34) * s;
  const double cx = rng.uniform(radius, s - radius), cy = rng.uniform(radius, s - radius);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double px = static_cast<double>(x) + 0.25 + 0.5 * sx - cx;
          const double py = static_cast<double>(y) + 0.25 + 0.5 * sy - cy;
          const double u = (ca * px + sa * py) / radius, v = (-sa * px + ca * py) / radius;
          hits += inside(cls, u, -v) ? 1 : 0;
        }
      }
      const double cover = hits / 4.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = cover * fg[c] + (1.0 - cover) * bg[c] + 0.04 * rng.normal();
        out[(c * n + y) * n + x] = static_cast<T>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
}

template <typename T>
LabeledImages<T> make_split(std::size_t count, int size, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(size);
  LabeledImages<T> split;
  split.images = Tensor<T>(Shape{count, 3, n, n});
  split.labels.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const int cls = static_cast<int>(k % 3);
    Rng rng(mix_seed(seed, k));
    split.labels[k] = cls;
    draw(rng, cls, size, split.images.ptr() + k * 3 * n * n);
  }
  return split;
}

}  // namespace

template <typename T>
Dataset<T> make_shapes(std::size_t n_train, std::size_t n_test, int image_size, std::uint64_t seed) {
  if (image_size < 8) throw ParameterError("shapes need an image size of at least 8");
  Dataset<T> d;
  d.num_classes = 3;
  d.train = make_split<T>(n_train, image_size, mix_seed(seed, 1));
  d.test = make_split<T>(n_test, image_size, mix_seed(seed, 2));
  return d;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& images, std::span<const std::size_t> index) {
  if (images.rank() == 0) throw DimensionError("gather needs a leading axis");
  Shape s = images.shape();
  const std::size_t n = s[0], per = n == 0 ? 0 : images.size() / n;
  s[0] = index.size();
  Tensor<T> out(s);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= n) throw RangeError("gather index " + std::to_string(index[k]) + " out of range");
    std::copy(images.ptr() + index[k] * per, images.ptr() + (index[k] + 1) * per, out.ptr() + k * per);
  }
  return out;
}

template Dataset<float> make_shapes(std::size_t, std::size_t, int, std::uint64_t);
template Dataset<double> make_shapes(std::size_t, std::size_t, int, std::uint64_t);
template Tensor<float> gather(const Tensor<float>&, std::span<const std::size_t>);
template Tensor<double> gather(const Tensor<double>&, std::span<const std::size_t>);

}  // namespace tribranch
