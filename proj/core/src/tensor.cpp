#include "tribranch/tensor.hpp"

#include <cmath>
#include <sstream>

#include "tribranch/graph.hpp"

namespace tribranch {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

// Calls fn(full_offset, part_offset, run) for every contiguous last-axis run
// of the prefix block `extents` inside a tensor of shape `full`.
template <typename Fn>
void for_each_prefix_run(const Shape& full, const Shape& extents, Fn&& fn) {
  if (full.size() != extents.size()) {
    throw DimensionError("slice rank " + std::to_string(extents.size()) + " does not match tensor rank " +
                         std::to_string(full.size()));
  }
  for (std::size_t a = 0; a < full.size(); ++a) {
    if (extents[a] > full[a]) {
      throw DimensionError("slice " + shape_str(extents) + " exceeds tensor " + shape_str(full));
    }
  }
  const std::size_t rank = full.size();
  if (rank == 0) {
    fn(0, 0, 1);
    return;
  }
  if (shape_numel(extents) == 0) return;
  std::vector<std::size_t> full_strides(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) full_strides[a] = full_strides[a + 1] * full[a + 1];
  const std::size_t run = extents[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t part_offset = 0;
  for (;;) {
    std::size_t full_offset = 0;
    for (std::size_t a = 0; a + 1 < rank; ++a) full_offset += idx[a] * full_strides[a];
    fn(full_offset, part_offset, run);
    part_offset += run;
    // advance the multi-index over the leading axes
    std::size_t a = rank - 1;
    for (;;) {
      if (a == 0) return;
      --a;
      if (++idx[a] < extents[a]) break;
      idx[a] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> take_prefix(const Tensor<T>& full, const SliceSpec<T>& slice) {
  Tensor<T> out(slice.extents);
  const T* src = full.ptr();
  T* dst = out.ptr();
  const bool unit = slice.alpha == T(1);
  for_each_prefix_run(full.shape(), slice.extents, [&](std::size_t fo, std::size_t po, std::size_t run) {
    if (unit) {
      std::copy(src + fo, src + fo + run, dst + po);
    } else {
      for (std::size_t k = 0; k < run; ++k) dst[po + k] = src[fo + k] * slice.alpha;
    }
  });
  return out;
}

template <typename T>
void accumulate_prefix(Tensor<T>& full, const Tensor<T>& part, T alpha) {
  T* dst = full.ptr();
  const T* src = part.ptr();
  for_each_prefix_run(full.shape(), part.shape(), [&](std::size_t fo, std::size_t po, std::size_t run) {
    for (std::size_t k = 0; k < run; ++k) dst[fo + k] += alpha * src[po + k];
  });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define TRIBRANCH_INSTANTIATE(T)                                                  \
  template Tensor<T> take_prefix(const Tensor<T>&, const SliceSpec<T>&);          \
  template void accumulate_prefix(Tensor<T>&, const Tensor<T>&, T);               \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);                    \
  template bool all_finite(const Tensor<T>&);

TRIBRANCH_INSTANTIATE(float)
TRIBRANCH_INSTANTIATE(double)
#undef TRIBRANCH_INSTANTIATE

}  // namespace tribranch
