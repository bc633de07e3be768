#include "tribranch/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace tribranch::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C (+)= op(X) · op(Y) for row-major buffers.
template <typename T>
void gemm(T* c, const T* x, std::size_t xr, std::size_t xc, bool tx, const T* y, std::size_t yr,
          std::size_t yc, bool ty, bool accumulate) {
  Eigen::Map<const RowMat<T>> X(x, static_cast<Eigen::Index>(xr), static_cast<Eigen::Index>(xc));
  Eigen::Map<const RowMat<T>> Y(y, static_cast<Eigen::Index>(yr), static_cast<Eigen::Index>(yc));
  const auto m = static_cast<Eigen::Index>(tx ? xc : xr);
  const auto n = static_cast<Eigen::Index>(ty ? yr : yc);
  Eigen::Map<RowMat<T>> C(c, m, n);
  if (!accumulate) C.setZero();
  if (!tx && !ty) {
    C.noalias() += X * Y;
  } else if (tx && !ty) {
    C.noalias() += X.transpose() * Y;
  } else if (!tx && ty) {
    C.noalias() += X * Y.transpose();
  } else {
    C.noalias() += X.transpose() * Y.transpose();
  }
}

std::size_t last_extent(const Shape& s) { return s.empty() ? 1 : s.back(); }

// (outer, extent, inner) decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t a = 0; a < axis; ++a) r.outer *= s[a];
  r.extent = s[axis];
  for (std::size_t a = axis + 1; a < s.size(); ++a) r.inner *= s[a];
  return r;
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a, bool transpose_b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || (sa.size() != 2 && sa.size() != 3)) {
    throw DimensionError("matmul expects two rank-2 or two rank-3 operands, got " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const bool batched = sa.size() == 3;
  const std::size_t batch = batched ? sa[0] : 1;
  if (batched && sb[0] != batch) throw DimensionError("matmul batch mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  const std::size_t off = batched ? 1 : 0;
  const std::size_t ar = sa[off], ac = sa[off + 1], br = sb[off], bc = sb[off + 1];
  const std::size_t m = transpose_a ? ac : ar;
  const std::size_t k = transpose_a ? ar : ac;
  const std::size_t k2 = transpose_b ? bc : br;
  const std::size_t n = transpose_b ? br : bc;
  if (k != k2) {
    throw DimensionError("matmul inner extents differ: " + shape_str(sa) + (transpose_a ? "^T" : "") + " · " +
                         shape_str(sb) + (transpose_b ? "^T" : ""));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out(out_shape);
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(out.ptr() + i * m * n, pa + i * ar * ac, ar, ac, transpose_a, pb + i * br * bc, br, bc, transpose_b, false);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {a, b}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& dc = g.grad(self);
    const T* A = g.value(ia).ptr();
    const T* B = g.value(ib).ptr();
    for (std::size_t i = 0; i < batch; ++i) {
      const T* dC = dc.ptr() + i * m * n;
      const T* Ai = A + i * ar * ac;
      const T* Bi = B + i * br * bc;
      if (g.requires_grad(ia)) {
        T* dA = g.grad(ia).ptr() + i * ar * ac;
        if (!transpose_a && !transpose_b) gemm(dA, dC, m, n, false, Bi, br, bc, true, true);
        else if (transpose_a && !transpose_b) gemm(dA, Bi, br, bc, false, dC, m, n, true, true);
        else if (!transpose_a && transpose_b) gemm(dA, dC, m, n, false, Bi, br, bc, false, true);
        else gemm(dA, Bi, br, bc, true, dC, m, n, true, true);
      }
      if (g.requires_grad(ib)) {
        T* dB = g.grad(ib).ptr() + i * br * bc;
        if (!transpose_a && !transpose_b) gemm(dB, Ai, ar, ac, true, dC, m, n, false, true);
        else if (transpose_a && !transpose_b) gemm(dB, Ai, ar, ac, false, dC, m, n, false, true);
        else if (!transpose_a && transpose_b) gemm(dB, dC, m, n, true, Ai, ar, ac, false, true);
        else gemm(dB, dC, m, n, true, Ai, ar, ac, true, true);
      }
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
    throw DimensionError("add: " + shape_str(sb) + " is not a suffix of " + shape_str(sa));
  }
  const std::size_t nb = b.value().size();
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); i += nb) {
    T* row = out.ptr() + i;
    for (std::size_t k = 0; k < nb; ++k) row[k] += pb[k];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(std::move(out), {a, b}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    if (g.requires_grad(ia)) {
      Tensor<T>& da = g.grad(ia);
      for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
    }
    if (g.requires_grad(ib)) {
      Tensor<T>& db = g.grad(ib);
      for (std::size_t i = 0; i < d.size(); i += nb) {
        for (std::size_t k = 0; k < nb; ++k) db[k] += d[i + k];
      }
    }
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v += c;
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {a}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& da = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= c;
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {a}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& da = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) da[i] += c * d[i];
  });
}

template <typename T>
Var<T> scale_by(Var<T> a, const Tensor<T>& factors) {
  const Shape& sa = a.shape();
  const Shape& sf = factors.shape();
  if (sf.size() > sa.size() || !std::equal(sf.begin(), sf.end(), sa.begin())) {
    throw DimensionError("scale_by: " + shape_str(sf) + " is not a prefix of " + shape_str(sa));
  }
  const std::size_t inner = a.value().size() / std::max<std::size_t>(factors.size(), 1);
  Tensor<T> out = a.value();
  for (std::size_t f = 0; f < factors.size(); ++f) {
    T* p = out.ptr() + f * inner;
    for (std::size_t k = 0; k < inner; ++k) p[k] *= factors[f];
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {a}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& da = g.grad(ia);
    for (std::size_t f = 0; f < factors.size(); ++f) {
      for (std::size_t k = 0; k < inner; ++k) da[f * inner + k] += factors[f] * d[f * inner + k];
    }
  });
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end, std::size_t step) {
  const Shape& sa = a.shape();
  if (axis >= sa.size()) throw DimensionError("slice axis " + std::to_string(axis) + " out of range for " + shape_str(sa));
  if (begin > end || end > sa[axis] || step == 0) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for extent " +
                         std::to_string(sa[axis]));
  }
  const AxisSplit sp = split_at(sa, axis);
  const std::size_t count = (end - begin + step - 1) / step;
  Shape out_shape = sa;
  out_shape[axis] = count;
  Tensor<T> out(out_shape);
  const T* src = a.value().ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t c = 0; c < count; ++c) {
      const T* s = src + (o * sp.extent + begin + c * step) * sp.inner;
      std::copy(s, s + sp.inner, out.ptr() + (o * count + c) * sp.inner);
    }
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {a}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& da = g.grad(ia);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t c = 0; c < count; ++c) {
        T* t = da.ptr() + (o * sp.extent + begin + c * step) * sp.inner;
        const T* s = d.ptr() + (o * count + c) * sp.inner;
        for (std::size_t k = 0; k < sp.inner; ++k) t[k] += s[k];
      }
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat axis out of range for " + shape_str(s0));
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& sp = p.shape();
    bool ok = sp.size() == s0.size();
    for (std::size_t a = 0; ok && a < sp.size(); ++a) ok = a == axis || sp[a] == s0[a];
    if (!ok) throw DimensionError("concat: " + shape_str(sp) + " incompatible with " + shape_str(s0));
    extents.push_back(sp[axis]);
    total += sp[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  const AxisSplit sp = split_at(out_shape, axis);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].value().ptr();
    const std::size_t run = extents[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(src + o * run, src + (o + 1) * run, out.ptr() + (o * total + offset) * sp.inner);
    }
    offset += extents[p];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].graph().record(std::move(out), parts, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    std::size_t off = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t run = extents[p] * sp.inner;
      if (g.requires_grad(ids[p])) {
        Tensor<T>& dp = g.grad(ids[p]);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* s = d.ptr() + (o * total + off) * sp.inner;
          T* t = dp.ptr() + o * run;
          for (std::size_t k = 0; k < run; ++k) t[k] += s[k];
        }
      }
      off += extents[p];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {a}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& da = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
  });
}

template <typename T>
Var<T> softmax(Var<T> logits, T tau) {
  if (!(tau > T(0))) throw ParameterError("softmax temperature must be positive");
  const std::size_t p = last_extent(logits.shape());
  Tensor<T> out = logits.value();
  const std::size_t rows = p ? out.size() / p : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * p;
    const T mx = *std::max_element(row, row + p);
    T z = 0;
    for (std::size_t k = 0; k < p; ++k) {
      row[k] = std::exp((row[k] - mx) / tau);
      z += row[k];
    }
    for (std::size_t k = 0; k < p; ++k) row[k] /= z;
  }
  const std::size_t il = logits.id();
  return logits.graph().record(std::move(out), {logits}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& y = g.value(self);
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& dx = g.grad(il);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * p;
      const T* dr = d.ptr() + r * p;
      T dot = 0;
      for (std::size_t k = 0; k < p; ++k) dot += yr[k] * dr[k];
      T* xr = dx.ptr() + r * p;
      for (std::size_t k = 0; k < p; ++k) xr[k] += yr[k] * (dr[k] - dot) / tau;
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  if (!(eps > T(0))) throw ParameterError("layer_norm eps must be positive");
  const std::size_t dim = last_extent(x.shape());
  if (gamma.value().size() != dim || beta.value().size() != dim) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + " do not match last extent " +
                         std::to_string(dim) + " of " + shape_str(x.shape()));
  }
  const std::size_t rows = dim ? x.value().size() / dim : 0;
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(rows);
  Tensor<T> out(x.shape());
  const T* px = x.value().ptr();
  const T* pg = gamma.value().ptr();
  const T* pb = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * dim;
    T mu = 0;
    for (std::size_t k = 0; k < dim; ++k) mu += xr[k];
    mu /= static_cast<T>(dim);
    T var = 0;
    for (std::size_t k = 0; k < dim; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<T>(dim);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t k = 0; k < dim; ++k) {
      const T h = (xr[k] - mu) * is;
      xhat[r * dim + k] = h;
      out[r * dim + k] = pg[k] * h + pb[k];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(std::move(out), {x, gamma, beta},
                          [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    const T* pgam = g.value(ig).ptr();
    if (g.requires_grad(ig) || g.requires_grad(ib)) {
      const bool wg = g.requires_grad(ig), wb = g.requires_grad(ib);
      Tensor<T>* dg = wg ? &g.grad(ig) : nullptr;
      Tensor<T>* db = wb ? &g.grad(ib) : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < dim; ++k) {
          if (wg) (*dg)[k] += d[r * dim + k] * xhat[r * dim + k];
          if (wb) (*db)[k] += d[r * dim + k];
        }
      }
    }
    if (g.requires_grad(ix)) {
      Tensor<T>& dx = g.grad(ix);
      const T inv_dim = T(1) / static_cast<T>(dim);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t k = 0; k < dim; ++k) {
          const T dh = d[r * dim + k] * pgam[k];
          mean_dh += dh;
          mean_dh_h += dh * xhat[r * dim + k];
        }
        mean_dh *= inv_dim;
        mean_dh_h *= inv_dim;
        for (std::size_t k = 0; k < dim; ++k) {
          const T dh = d[r * dim + k] * pgam[k];
          dx[r * dim + k] += inv_std[r] * (dh - mean_dh - xhat[r * dim + k] * mean_dh_h);
        }
      }
    }
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = x.value();
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::size_t self) {
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    const Tensor<T>& xv = g.value(ix);
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& dx = g.grad(ix);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      dx[i] += d[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& xv = g.value(ix);
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& dx = g.grad(ix);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += d[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.graph().record(Tensor<T>::scalar(s), {a}, [=](Graph<T>& g, std::size_t self) {
    const T d = g.grad(self)[0];
    for (auto& v : g.grad(ia).data()) v += d;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> mean_axis(Var<T> a, std::size_t axis) {
  const Shape& sa = a.shape();
  if (axis >= sa.size()) throw DimensionError("mean_axis out of range for " + shape_str(sa));
  const AxisSplit sp = split_at(sa, axis);
  if (sp.extent == 0) throw DimensionError("mean over empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (i != axis) out_shape.push_back(sa[i]);
  }
  Tensor<T> out(out_shape);
  const T inv = T(1) / static_cast<T>(sp.extent);
  const T* src = a.value().ptr();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    T* dst = out.ptr() + o * sp.inner;
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const T* s = src + (o * sp.extent + e) * sp.inner;
      for (std::size_t k = 0; k < sp.inner; ++k) dst[k] += s[k];
    }
    for (std::size_t k = 0; k < sp.inner; ++k) dst[k] *= inv;
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {a}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& da = g.grad(ia);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t e = 0; e < sp.extent; ++e) {
        for (std::size_t k = 0; k < sp.inner; ++k) da[(o * sp.extent + e) * sp.inner + k] += inv * d[o * sp.inner + k];
      }
    }
  });
}

template <typename T>
Var<T> sum_last(Var<T> a) {
  const Shape& sa = a.shape();
  if (sa.empty()) throw DimensionError("sum_last on a scalar");
  const std::size_t p = sa.back();
  Shape out_shape(sa.begin(), sa.end() - 1);
  Tensor<T> out(out_shape);
  const std::size_t rows = out.size();
  const T* src = a.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t k = 0; k < p; ++k) s += src[r * p + k];
    out[r] = s;
  }
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {a}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& da = g.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < p; ++k) da[r * p + k] += d[r];
    }
  });
}

template <typename T>
Var<T> l2_normalize(Var<T> x, T eps) {
  const std::size_t dim = last_extent(x.shape());
  const std::size_t rows = dim ? x.value().size() / dim : 0;
  Tensor<T> out = x.value();
  std::vector<T> denom(rows);
  std::vector<char> floored(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * dim;
    T ss = 0;
    for (std::size_t k = 0; k < dim; ++k) ss += row[k] * row[k];
    const T norm = std::sqrt(ss);
    floored[r] = norm <= eps;
    denom[r] = floored[r] ? eps : norm;
    for (std::size_t k = 0; k < dim; ++k) row[k] /= denom[r];
  }
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x},
                          [=, denom = std::move(denom), floored = std::move(floored)](Graph<T>& g, std::size_t self) {
    const Tensor<T>& y = g.value(self);
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& dx = g.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * dim;
      const T* dr = d.ptr() + r * dim;
      T dot = 0;
      if (!floored[r]) {
        for (std::size_t k = 0; k < dim; ++k) dot += yr[k] * dr[k];
      }
      for (std::size_t k = 0; k < dim; ++k) dx[r * dim + k] += (dr[k] - yr[k] * dot) / denom[r];
    }
  });
}

template <typename T>
Var<T> log(Var<T> x, T floor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::log(std::max(v, floor));
  const std::size_t ix = x.id();
  return x.graph().record(std::move(out), {x}, [=](Graph<T>& g, std::size_t self) {
    const Tensor<T>& xv = g.value(ix);
    const Tensor<T>& d = g.grad(self);
    Tensor<T>& dx = g.grad(ix);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv[i] > floor) dx[i] += d[i] / xv[i];
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Tensor<T>& target, Var<T> pred, T floor) {
  if (target.shape() != pred.shape()) {
    throw DimensionError("cross_entropy: target " + shape_str(target.shape()) + " vs prediction " +
                         shape_str(pred.shape()));
  }
  const std::size_t p = last_extent(pred.shape());
  const std::size_t rows = p ? pred.value().size() / p : 0;
  if (rows == 0) throw DimensionError("cross_entropy on an empty batch");
  const T* pp = pred.value().ptr();
  T total = 0;
  for (std::size_t i = 0; i < rows * p; ++i) total -= target[i] * std::log(std::max(pp[i], floor));
  const T inv_rows = T(1) / static_cast<T>(rows);
  const std::size_t ip = pred.id();
  return pred.graph().record(Tensor<T>::scalar(total * inv_rows), {pred}, [=](Graph<T>& g, std::size_t self) {
    const T d = g.grad(self)[0] * inv_rows;
    const Tensor<T>& pv = g.value(ip);
    Tensor<T>& dp = g.grad(ip);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (pv[i] > floor) dp[i] -= d * target[i] / pv[i];
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, const Var<T>* bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.size() != 2 || sx.empty() || sx.back() != sw[1]) {
    throw DimensionError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t in = sw[1];
  const std::size_t rows = x.value().size() / in;
  Var<T> flat = sx.size() == 2 ? x : reshape(x, Shape{rows, in});
  Var<T> y = matmul(flat, weight, false, true);
  if (bias) y = add(y, *bias);
  if (sx.size() == 2) return y;
  Shape out_shape = sx;
  out_shape.back() = sw[0];
  return reshape(y, std::move(out_shape));
}

#define TRIBRANCH_INSTANTIATE(T)                                                           \
  template Var<T> matmul(Var<T>, Var<T>, bool, bool);                                      \
  template Var<T> add(Var<T>, Var<T>);                                                     \
  template Var<T> add_scalar(Var<T>, T);                                                   \
  template Var<T> scale(Var<T>, T);                                                        \
  template Var<T> scale_by(Var<T>, const Tensor<T>&);                                      \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t, std::size_t);       \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                            \
  template Var<T> reshape(Var<T>, Shape);                                                  \
  template Var<T> softmax(Var<T>, T);                                                      \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                   \
  template Var<T> gelu(Var<T>);                                                            \
  template Var<T> relu(Var<T>);                                                            \
  template Var<T> sum(Var<T>);                                                             \
  template Var<T> mean(Var<T>);                                                            \
  template Var<T> mean_axis(Var<T>, std::size_t);                                          \
  template Var<T> sum_last(Var<T>);                                                        \
  template Var<T> l2_normalize(Var<T>, T);                                                 \
  template Var<T> log(Var<T>, T);                                                          \
  template Var<T> cross_entropy(const Tensor<T>&, Var<T>, T);                              \
  template Var<T> linear(Var<T>, Var<T>, const Var<T>*);

TRIBRANCH_INSTANTIATE(float)
TRIBRANCH_INSTANTIATE(double)
#undef TRIBRANCH_INSTANTIATE

}  // namespace tribranch::ops
