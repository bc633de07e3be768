#include "tribranch/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tribranch/ops.hpp"

namespace tribranch {

namespace {

template <typename T>
class Builder {
 public:
  Builder(Graph<T>& g, const SubNetView<T>& view, const ForwardOptions& opts)
      : g_(g), view_(view), opts_(opts), spec_(view.store().spec()), eps_(static_cast<T>(spec_.ln_eps)) {}

  Var<T> leaf(const std::string& name) { return view_.leaf(g_, name); }

  Var<T> norm(Var<T> x, const std::string& name) {
    return ops::layer_norm(x, leaf(name + ".weight"), leaf(name + ".bias"), eps_);
  }

  Var<T> linear(Var<T> x, const std::string& name, bool bias = true) {
    Var<T> w = leaf(name + ".weight");
    if (!bias) return ops::linear<T>(x, w, nullptr);
    Var<T> b = leaf(name + ".bias");
    return ops::linear(x, w, &b);
  }

  Var<T> residual(Var<T> x, Var<T> branch) {
    return ops::add(x, drop_path(branch, spec_.drop_path, opts_.training, opts_.rng));
  }

  // Multi-head attention over x [N, T, D]; Q/K/V rows are head-major.
  Var<T> attention(Var<T> x, const std::string& block, int heads) {
    Var<T> q = linear(x, block + ".attn_q");
    Var<T> k = linear(x, block + ".attn_k");
    Var<T> v = linear(x, block + ".attn_v");
    const auto dh = static_cast<std::size_t>(spec_.head_dim);
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Var<T>> outs;
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
      Var<T> qh = ops::slice(q, 2, h * dh, (h + 1) * dh);
      Var<T> kh = ops::slice(k, 2, h * dh, (h + 1) * dh);
      Var<T> vh = ops::slice(v, 2, h * dh, (h + 1) * dh);
      Var<T> a = ops::softmax(ops::scale(ops::matmul(qh, kh, false, true), scale), T(1));
      outs.push_back(ops::matmul(a, vh));
    }
    Var<T> o = outs.size() == 1 ? outs[0] : ops::concat<T>(outs, 2);
    return linear(o, block + ".attn_proj");
  }

  Var<T> mlp(Var<T> x, const std::string& block) {
    return linear(ops::gelu(linear(x, block + ".mlp_fc1")), block + ".mlp_fc2");
  }

  Var<T> conv1x1(Var<T> x, const std::string& name) {
    Var<T> w = leaf(name + ".weight");
    const Shape& ws = w.shape();
    const Shape& xs = x.shape();
    Var<T> flat = ops::reshape(x, Shape{xs[0] * xs[1] * xs[2], xs[3]});
    Var<T> y = ops::matmul(flat, ops::reshape(w, Shape{ws[0], ws[1]}), false, true);
    return ops::reshape(y, Shape{xs[0], xs[1], xs[2], ws[0]});
  }

  // 3x3, stride 1, zero padding 1, channel-last input; sum of nine tap products.
  Var<T> conv3x3(Var<T> x, const std::string& name) {
    Var<T> w = leaf(name + ".weight");
    const Shape& ws = w.shape();
    const Shape xs = x.shape();
    const std::size_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
    Var<T> zrow = g_.constant(Tensor<T>(Shape{B, 1, W, C}));
    std::vector<Var<T>> rows{zrow, x, zrow};
    Var<T> p = ops::concat<T>(rows, 1);
    Var<T> zcol = g_.constant(Tensor<T>(Shape{B, H + 2, 1, C}));
    std::vector<Var<T>> cols{zcol, p, zcol};
    p = ops::concat<T>(cols, 2);
    Var<T> taps = ops::reshape(w, Shape{ws[0], ws[1], 9});
    Var<T> acc;
    for (std::size_t dy = 0; dy < 3; ++dy) {
      for (std::size_t dx = 0; dx < 3; ++dx) {
        Var<T> xt = ops::slice(ops::slice(p, 1, dy, dy + H), 2, dx, dx + W);
        xt = ops::reshape(xt, Shape{B * H * W, C});
        const std::size_t t = dy * 3 + dx;
        Var<T> wt = ops::reshape(ops::slice(taps, 2, t, t + 1), Shape{ws[0], ws[1]});
        Var<T> y = ops::matmul(xt, wt, false, true);
        acc = acc.valid() ? ops::add(acc, y) : y;
      }
    }
    return ops::reshape(acc, Shape{B, H, W, ws[0]});
  }

  FeatureBatch<T> vit(const Tensor<T>& images);
  FeatureBatch<T> swin(const Tensor<T>& images);
  FeatureBatch<T> resnet(const Tensor<T>& images);

  Graph<T>& g_;
  const SubNetView<T>& view_;
  const ForwardOptions& opts_;
  const BackboneSpec& spec_;
  T eps_;
};

template <typename T>
void check_images(const BackboneSpec& spec, const Tensor<T>& images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[0] == 0) throw DimensionError("images must be [B, C, H, W], got " + shape_str(s));
  if (s[1] != static_cast<std::size_t>(spec.in_channels)) {
    throw DimensionError("expected " + std::to_string(spec.in_channels) + " image channels, got " +
                         std::to_string(s[1]));
  }
  if (s[2] != s[3]) throw DimensionError("images must be square, got " + shape_str(s));
  if (spec.family != Family::resnet && s[2] % static_cast<std::size_t>(spec.patch_size) != 0) {
    throw DimensionError("image size " + std::to_string(s[2]) + " is not a multiple of the patch size " +
                         std::to_string(spec.patch_size));
  }
  if (spec.family == Family::swin) {
    const std::size_t side = s[2] / static_cast<std::size_t>(spec.patch_size);
    const std::size_t merges = static_cast<std::size_t>(spec.stage_count() - 1);
    if (side % (std::size_t{1} << merges) != 0) {
      throw DimensionError("image size " + std::to_string(s[2]) + " does not halve cleanly through every stage");
    }
  }
}

// Positional table for a token grid of `side`, resampled when it differs from
// the table's own grid. `extra` leading rows (class token) pass through.
template <typename T>
Var<T> positions(Graph<T>& g, Var<T> table, std::size_t extra, std::size_t side) {
  const std::size_t src = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(table.dim(0) - extra))));
  if (src == side) return table;
  const Tensor<T> r = resize_matrix<T>(src, side);
  Tensor<T> m(Shape{extra + side * side, extra + src * src});
  for (std::size_t e = 0; e < extra; ++e) m.at(e, e) = T(1);
  for (std::size_t i = 0; i < side * side; ++i) {
    for (std::size_t j = 0; j < src * src; ++j) m.at(extra + i, extra + j) = r.at(i, j);
  }
  return ops::matmul(g.constant(std::move(m)), table);
}

// [B, S*S, C] -> [nW*B, w*w, C], windows in raster order.
template <typename T>
Var<T> partition(Var<T> x, std::size_t side, std::size_t w) {
  const std::size_t n = side / w;
  std::vector<Var<T>> windows;
  for (std::size_t wr = 0; wr < n; ++wr) {
    for (std::size_t wc = 0; wc < n; ++wc) {
      std::vector<Var<T>> rows;
      for (std::size_t r = 0; r < w; ++r) {
        const std::size_t start = (wr * w + r) * side + wc * w;
        rows.push_back(ops::slice(x, 1, start, start + w));
      }
      windows.push_back(ops::concat<T>(rows, 1));
    }
  }
  return ops::concat<T>(windows, 0);
}

template <typename T>
Var<T> unpartition(Var<T> xw, std::size_t batch, std::size_t side, std::size_t w) {
  const std::size_t n = side / w;
  std::vector<Var<T>> windows;
  for (std::size_t k = 0; k < n * n; ++k) windows.push_back(ops::slice(xw, 0, k * batch, (k + 1) * batch));
  std::vector<Var<T>> pieces;
  for (std::size_t row = 0; row < side; ++row) {
    const std::size_t wr = row / w, r = row % w;
    for (std::size_t wc = 0; wc < n; ++wc) pieces.push_back(ops::slice(windows[wr * n + wc], 1, r * w, (r + 1) * w));
  }
  return ops::concat<T>(pieces, 1);
}

// 2x2 patch merging gather: [B, S*S, C] -> [B, S*S/4, 4C] with channel index
// c*4 + k, k = 2*dy + dx, so channel prefixes stay aligned across widths.
template <typename T>
Var<T> merge_gather(Var<T> x, std::size_t side) {
  const std::size_t B = x.dim(0), C = x.dim(2), half = side / 2;
  std::vector<Var<T>> offsets;
  for (std::size_t dy = 0; dy < 2; ++dy) {
    for (std::size_t dx = 0; dx < 2; ++dx) {
      std::vector<Var<T>> rows;
      for (std::size_t r = 0; r < half; ++r) {
        const std::size_t start = (2 * r + dy) * side + dx;
        rows.push_back(ops::slice(x, 1, start, start + side - dx, 2));
      }
      offsets.push_back(ops::reshape(ops::concat<T>(rows, 1), Shape{B, half * half, C, 1}));
    }
  }
  return ops::reshape(ops::concat<T>(offsets, 3), Shape{B, half * half, 4 * C});
}

template <typename T>
FeatureBatch<T> Builder<T>::vit(const Tensor<T>& images) {
  const auto& arch = view_.arch();
  const std::size_t B = images.dim(0);
  const std::size_t side = images.dim(2) / static_cast<std::size_t>(spec_.patch_size);
  const auto D = static_cast<std::size_t>(arch.width);
  Var<T> x = linear(g_.constant(patchify(images, static_cast<std::size_t>(spec_.patch_size))), "vit.patch_embed");
  x = ops::reshape(x, Shape{B, side * side, D});
  Var<T> cls = ops::matmul(g_.constant(Tensor<T>(Shape{B, 1}, T(1))), leaf("vit.cls_token"));
  std::vector<Var<T>> parts{ops::reshape(cls, Shape{B, 1, D}), x};
  x = ops::concat<T>(parts, 1);
  x = ops::add(x, positions(g_, leaf("vit.pos_embed"), 1, side));
  for (int k : arch.stage_blocks[0]) {
    const std::string b = "vit." + std::to_string(k);
    x = residual(x, attention(norm(x, b + ".norm1"), b, arch.stage_heads[0]));
    x = residual(x, mlp(norm(x, b + ".norm2"), b));
  }
  x = norm(x, "vit.norm");
  return {x, ops::reshape(ops::slice(x, 1, 0, 1), Shape{B, D})};
}

template <typename T>
FeatureBatch<T> Builder<T>::swin(const Tensor<T>& images) {
  const auto& arch = view_.arch();
  const std::size_t B = images.dim(0);
  std::size_t side = images.dim(2) / static_cast<std::size_t>(spec_.patch_size);
  Var<T> x = linear(g_.constant(patchify(images, static_cast<std::size_t>(spec_.patch_size))), "swin.patch_embed");
  x = ops::reshape(x, Shape{B, side * side, static_cast<std::size_t>(arch.width)});
  x = ops::add(x, positions(g_, leaf("swin.pos_embed"), 0, side));
  for (int s = 0; s < spec_.stage_count(); ++s) {
    const std::size_t w = std::gcd(static_cast<std::size_t>(spec_.window), side);
    const std::string pre = "swin." + std::to_string(s);
    for (int k : arch.stage_blocks[static_cast<std::size_t>(s)]) {
      const std::string b = pre + "." + std::to_string(k);
      Var<T> h = norm(x, b + ".norm1");
      if (w == side) {
        h = attention(h, b, arch.stage_heads[static_cast<std::size_t>(s)]);
      } else {
        h = attention(partition(h, side, w), b, arch.stage_heads[static_cast<std::size_t>(s)]);
        h = unpartition(h, B, side, w);
      }
      x = residual(x, h);
      x = residual(x, mlp(norm(x, b + ".norm2"), b));
    }
    if (s + 1 < spec_.stage_count()) {
      x = linear(norm(merge_gather(x, side), pre + ".merge.norm"), pre + ".merge.reduction", false);
      side /= 2;
    }
  }
  x = norm(x, "swin.norm");
  return {x, ops::mean_axis(x, 1)};
}

template <typename T>
FeatureBatch<T> Builder<T>::resnet(const Tensor<T>& images) {
  const auto& arch = view_.arch();
  const std::size_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  Tensor<T> nhwc(Shape{B, H, W, C});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) nhwc[((b * H + y) * W + x) * C + c] = images[((b * C + c) * H + y) * W + x];
      }
    }
  }
  Var<T> x = ops::relu(norm(conv3x3(g_.constant(std::move(nhwc)), "resnet.stem.conv"), "resnet.stem.norm"));
  for (int s = 0; s < spec_.stage_count(); ++s) {
    for (int k : arch.stage_blocks[static_cast<std::size_t>(s)]) {
      const std::string b = "resnet." + std::to_string(s) + "." + std::to_string(k);
      Var<T> in = x;
      if (k == 0 && s > 0) in = ops::slice(ops::slice(x, 1, 0, x.dim(1), 2), 2, 0, x.dim(2), 2);
      Var<T> h = ops::relu(norm(conv1x1(in, b + ".conv1"), b + ".norm1"));
      h = ops::relu(norm(conv3x3(h, b + ".conv2"), b + ".norm2"));
      h = norm(conv1x1(h, b + ".conv3"), b + ".norm3");
      Var<T> shortcut = k == 0 ? conv1x1(in, b + ".shortcut") : in;
      x = ops::relu(residual(shortcut, h));
    }
  }
  const Shape& xs = x.shape();
  Var<T> pooled = ops::mean_axis(ops::reshape(x, Shape{xs[0], xs[1] * xs[2], xs[3]}), 1);
  return {x, pooled};
}

}  // namespace

template <typename T>
FeatureBatch<T> forward(Graph<T>& g, const SubNetView<T>& view, const Tensor<T>& images, const ForwardOptions& opts) {
  const BackboneSpec& spec = view.store().spec();
  check_images(spec, images);
  if (opts.training && spec.drop_path > 0.0 && opts.rng == nullptr) {
    throw ParameterError("training forward with drop path needs an rng");
  }
  Builder<T> b(g, view, opts);
  switch (spec.family) {
    case Family::vit: return b.vit(images);
    case Family::swin: return b.swin(images);
    case Family::resnet: return b.resnet(images);
  }
  throw ParameterError("unknown backbone family");
}

template <typename T>
Var<T> drop_path(Var<T> x, double rate, bool training, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("drop path rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) throw ParameterError("drop path needs an rng in training mode");
  const std::size_t batch = x.dim(0);
  Tensor<T> mask(Shape{batch});
  const T keep = static_cast<T>(1.0 - rate);
  for (std::size_t b = 0; b < batch; ++b) mask[b] = rng->bernoulli(1.0 - rate) ? T(1) / keep : T(0);
  return ops::scale_by(x, mask);
}

template <typename T>
Tensor<T> resize_matrix(std::size_t src, std::size_t dst) {
  if (src == 0 || dst == 0) throw DimensionError("resize between empty grids");
  // 1-D interpolation weights, then the separable outer product.
  Tensor<T> w1(Shape{dst, src});
  for (std::size_t i = 0; i < dst; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, src - 1);
    const double f = pos - static_cast<double>(lo);
    w1.at(i, lo) += static_cast<T>(1.0 - f);
    w1.at(i, hi) += static_cast<T>(f);
  }
  Tensor<T> m(Shape{dst * dst, src * src});
  for (std::size_t y = 0; y < dst; ++y) {
    for (std::size_t x = 0; x < dst; ++x) {
      for (std::size_t sy = 0; sy < src; ++sy) {
        const T wy = w1.at(y, sy);
        if (wy == T(0)) continue;
        for (std::size_t sx = 0; sx < src; ++sx) m.at(y * dst + x, sy * src + sx) = wy * w1.at(x, sx);
      }
    }
  }
  return m;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
  const std::size_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const std::size_t ny = H / patch, nx = W / patch, cols = C * patch * patch;
  Tensor<T> out(Shape{B * ny * nx, cols});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t py = 0; py < ny; ++py) {
      for (std::size_t px = 0; px < nx; ++px) {
        T* row = out.ptr() + ((b * ny + py) * nx + px) * cols;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t dy = 0; dy < patch; ++dy) {
            const T* src = images.ptr() + ((b * C + c) * H + py * patch + dy) * W + px * patch;
            std::copy(src, src + patch, row + (c * patch + dy) * patch);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pooled_features(const SubNetView<T>& view, const Tensor<T>& images, std::size_t chunk) {
  SubNetView<T> frozen = view;
  frozen.set_trainable(false);
  const Shape& s = images.shape();
  if (s.size() != 4) throw DimensionError("images must be [B, C, H, W], got " + shape_str(s));
  const std::size_t n = s[0], per = images.size() / std::max<std::size_t>(n, 1);
  chunk = std::max<std::size_t>(chunk, 1);
  Tensor<T> out;
  std::size_t feat = 0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    Tensor<T> part(Shape{count, s[1], s[2], s[3]});
    std::copy(images.ptr() + start * per, images.ptr() + (start + count) * per, part.ptr());
    Graph<T> g;
    const Tensor<T>& pooled = forward(g, frozen, part).pooled.value();
    if (start == 0) {
      feat = pooled.dim(1);
      out = Tensor<T>(Shape{n, feat});
    }
    std::copy(pooled.data().begin(), pooled.data().end(), out.ptr() + start * feat);
  }
  return out;
}

#define TRIBRANCH_INSTANTIATE(T)                                                                        \
  template FeatureBatch<T> forward(Graph<T>&, const SubNetView<T>&, const Tensor<T>&, const ForwardOptions&); \
  template Var<T> drop_path(Var<T>, double, bool, Rng*);                                                \
  template Tensor<T> resize_matrix<T>(std::size_t, std::size_t);                                       \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> pooled_features(const SubNetView<T>&, const Tensor<T>&, std::size_t);

TRIBRANCH_INSTANTIATE(float)
TRIBRANCH_INSTANTIATE(double)
#undef TRIBRANCH_INSTANTIATE

}  // namespace tribranch
