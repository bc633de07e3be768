#include "tribranch/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tribranch/errors.hpp"

namespace tribranch {

void AugmentConfig::validate() const {
  auto need = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  auto prob = [&](double p, const char* key) { need(p >= 0.0 && p <= 1.0, key, "must be a probability in [0, 1]"); };
  need(global_size >= 1, "aug.global_size", "must be >= 1");
  need(local_size >= 1, "aug.local_size", "must be >= 1");
  need(local_size < global_size, "aug.local_size", "must be smaller than aug.global_size");
  need(local_crops >= 0, "aug.local_crops", "must be >= 0");
  need(min_gcs > 0.0 && min_gcs < max_gcs && max_gcs <= 1.0, "aug.min_gcs", "needs 0 < min_gcs < max_gcs <= 1");
  need(min_lcs > 0.0 && min_lcs < max_lcs && max_lcs <= 1.0, "aug.min_lcs", "needs 0 < min_lcs < max_lcs <= 1");
  need(blur_radius_min > 0.0 && blur_radius_min <= blur_radius_max, "aug.blur_radius_min",
       "needs 0 < blur_radius_min <= blur_radius_max");
  need(brightness >= 0.0 && contrast >= 0.0 && saturation >= 0.0, "aug.brightness", "jitter strengths must be >= 0");
  need(hue >= 0.0 && hue <= 0.5, "aug.hue", "must lie in [0, 0.5]");
  need(solarize_threshold >= 0.0 && solarize_threshold <= 255.0, "aug.solarize_threshold", "must lie in [0, 255]");
  prob(flip_prob, "aug.flip_prob");
  prob(jitter_prob, "aug.jitter_prob");
  prob(blur_prob_g1, "aug.blur_prob_g1");
  prob(blur_prob_g2, "aug.blur_prob_g2");
  prob(blur_prob_l, "aug.blur_prob_l");
  prob(solarize_prob_g1, "aug.solarize_prob_g1");
  prob(solarize_prob_g2, "aug.solarize_prob_g2");
  prob(solarize_prob_l, "aug.solarize_prob_l");
}

namespace {

// One image as C planes of H x W doubles.
struct Image {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> px;
  double& at(std::size_t ch, std::size_t y, std::size_t x) { return px[(ch * h + y) * w + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return px[(ch * h + y) * w + x]; }
};

struct Crop {
  std::size_t y0, x0, h, w;
};

Crop random_crop(Rng& rng, std::size_t H, std::size_t W, double smin, double smax) {
  const double area = static_cast<double>(H * W);
  const double lr0 = std::log(3.0 / 4.0), lr1 = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(smin, smax);
    const double ratio = std::exp(rng.uniform(lr0, lr1));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    if (w >= 1 && h >= 1 && w <= W && h <= H) {
      const auto y0 = static_cast<std::size_t>(rng.below(H - h + 1));
      const auto x0 = static_cast<std::size_t>(rng.below(W - w + 1));
      return {y0, x0, h, w};
    }
  }
  const std::size_t s = std::min(H, W);
  return {(H - s) / 2, (W - s) / 2, s, s};
}

Image resized_crop(const Image& src, const Crop& c, std::size_t out, bool flip) {
  Image dst{src.c, out, out, std::vector<double>(src.c * out * out)};
  for (std::size_t oy = 0; oy < out; ++oy) {
    double sy = static_cast<double>(c.y0) + (static_cast<double>(oy) + 0.5) * static_cast<double>(c.h) / out - 0.5;
    sy = std::clamp(sy, static_cast<double>(c.y0), static_cast<double>(c.y0 + c.h - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, c.y0 + c.h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out; ++ox) {
      double sx = static_cast<double>(c.x0) + (static_cast<double>(ox) + 0.5) * static_cast<double>(c.w) / out - 0.5;
      sx = std::clamp(sx, static_cast<double>(c.x0), static_cast<double>(c.x0 + c.w - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, c.x0 + c.w - 1);
      const double fx = sx - static_cast<double>(x0);
      const std::size_t tx = flip ? out - 1 - ox : ox;
      for (std::size_t ch = 0; ch < src.c; ++ch) {
        const double top = src.at(ch, y0, x0) * (1 - fx) + src.at(ch, y0, x1) * fx;
        const double bot = src.at(ch, y1, x0) * (1 - fx) + src.at(ch, y1, x1) * fx;
        dst.at(ch, oy, tx) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return dst;
}

void clamp01(Image& im) {
  for (double& v : im.px) v = std::clamp(v, 0.0, 1.0);
}

double gray(const Image& im, std::size_t y, std::size_t x) {
  return 0.299 * im.at(0, y, x) + 0.587 * im.at(1, y, x) + 0.114 * im.at(2, y, x);
}

void color_jitter(Image& im, const AugmentConfig& cfg, Rng& rng) {
  const double b = rng.uniform(std::max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness);
  const double c = rng.uniform(std::max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast);
  const double s = rng.uniform(std::max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation);
  const double hshift = rng.uniform(-cfg.hue, cfg.hue);
  for (double& v : im.px) v *= b;
  clamp01(im);
  if (im.c != 3) return;
  double mean = 0;
  for (std::size_t y = 0; y < im.h; ++y) {
    for (std::size_t x = 0; x < im.w; ++x) mean += gray(im, y, x);
  }
  mean /= static_cast<double>(im.h * im.w);
  for (double& v : im.px) v = (v - mean) * c + mean;
  clamp01(im);
  for (std::size_t y = 0; y < im.h; ++y) {
    for (std::size_t x = 0; x < im.w; ++x) {
      const double g = gray(im, y, x);
      for (std::size_t ch = 0; ch < 3; ++ch) im.at(ch, y, x) = (im.at(ch, y, x) - g) * s + g;
    }
  }
  clamp01(im);
  // Hue: rotate the chroma plane of YIQ.
  const double th = 2.0 * std::numbers::pi * hshift, ct = std::cos(th), st = std::sin(th);
  for (std::size_t y = 0; y < im.h; ++y) {
    for (std::size_t x = 0; x < im.w; ++x) {
      const double r = im.at(0, y, x), g = im.at(1, y, x), bl = im.at(2, y, x);
      const double Y = 0.299 * r + 0.587 * g + 0.114 * bl;
      const double I = 0.596 * r - 0.274 * g - 0.322 * bl;
      const double Q = 0.211 * r - 0.523 * g + 0.312 * bl;
      const double I2 = I * ct - Q * st, Q2 = I * st + Q * ct;
      im.at(0, y, x) = Y + 0.956 * I2 + 0.621 * Q2;
      im.at(1, y, x) = Y - 0.272 * I2 - 0.647 * Q2;
      im.at(2, y, x) = Y - 1.106 * I2 + 1.703 * Q2;
    }
  }
  clamp01(im);
}

void gaussian_blur(Image& im, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  if (radius == 0) return;
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  }
  for (double& v : k) v /= total;
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  Image tmp = im;
  for (std::size_t ch = 0; ch < im.c; ++ch) {
    for (std::size_t y = 0; y < im.h; ++y) {
      for (std::size_t x = 0; x < im.w; ++x) {
        double acc = 0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] * im.at(ch, y, clampi(static_cast<std::ptrdiff_t>(x) + i, im.w));
        }
        tmp.at(ch, y, x) = acc;
      }
    }
    for (std::size_t y = 0; y < im.h; ++y) {
      for (std::size_t x = 0; x < im.w; ++x) {
        double acc = 0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(ch, clampi(static_cast<std::ptrdiff_t>(y) + i, im.h), x);
        }
        im.at(ch, y, x) = acc;
      }
    }
  }
}

struct ViewKind {
  std::size_t size;
  double smin, smax, blur_p, solarize_p;
};

template <typename T>
void make_view(const Image& src, const AugmentConfig& cfg, const ViewKind& kind, ViewRecord& rec, T* out) {
  Rng rng(rec.seed);
  const Crop crop = random_crop(rng, src.h, src.w, kind.smin, kind.smax);
  rec.flipped = rng.bernoulli(cfg.flip_prob);
  Image im = resized_crop(src, crop, kind.size, rec.flipped);
  rec.jittered = rng.bernoulli(cfg.jitter_prob);
  if (rec.jittered) color_jitter(im, cfg, rng);
  rec.blurred = rng.bernoulli(kind.blur_p);
  if (rec.blurred) gaussian_blur(im, rng.uniform(cfg.blur_radius_min, cfg.blur_radius_max));
  rec.solarized = rng.bernoulli(kind.solarize_p);
  if (rec.solarized) {
    const double t = cfg.solarize_threshold / 255.0;
    for (double& v : im.px) v = v >= t ? 1.0 - v : v;
  }
  for (std::size_t i = 0; i < im.px.size(); ++i) out[i] = static_cast<T>(im.px[i]);
}

}  // namespace

template <typename T>
ViewBatch<T> augment(const Tensor<T>& images, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Shape& s = images.shape();
  if (s.size() != 4) throw DimensionError("images must be [B, C, H, W], got " + shape_str(s));
  const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
  const auto G = static_cast<std::size_t>(cfg.global_size), L = static_cast<std::size_t>(cfg.local_size);
  if (G > std::min(H, W)) throw ConfigError("aug.global_size", "crop size exceeds the image size");
  const auto v = static_cast<std::size_t>(cfg.local_crops);
  const ViewKind g1{G, cfg.min_gcs, cfg.max_gcs, cfg.blur_prob_g1, cfg.solarize_prob_g1};
  const ViewKind g2{G, cfg.min_gcs, cfg.max_gcs, cfg.blur_prob_g2, cfg.solarize_prob_g2};
  const ViewKind lk{L, cfg.min_lcs, cfg.max_lcs, cfg.blur_prob_l, cfg.solarize_prob_l};

  ViewBatch<T> out;
  out.global_a = Tensor<T>(Shape{B, C, G, G});
  out.global_b = Tensor<T>(Shape{B, C, G, G});
  for (std::size_t k = 0; k < v; ++k) out.locals.emplace_back(Shape{B, C, L, L});
  out.records.resize(B * (2 + v));
  Image src{C, H, W, std::vector<double>(C * H * W)};
  for (std::size_t b = 0; b < B; ++b) {
    const T* p = images.ptr() + b * C * H * W;
    for (std::size_t i = 0; i < C * H * W; ++i) src.px[i] = static_cast<double>(p[i]);
    for (std::size_t k = 0; k < 2 + v; ++k) {
      ViewRecord& rec = out.records[b * (2 + v) + k];
      rec.seed = mix_seed(seed, b * (2 + v) + k);
      if (k == 0) {
        make_view(src, cfg, g1, rec, out.global_a.ptr() + b * C * G * G);
      } else if (k == 1) {
        make_view(src, cfg, g2, rec, out.global_b.ptr() + b * C * G * G);
      } else {
        make_view(src, cfg, lk, rec, out.locals[k - 2].ptr() + b * C * L * L);
      }
    }
  }
  return out;
}

template ViewBatch<float> augment(const Tensor<float>&, const AugmentConfig&, std::uint64_t);
template ViewBatch<double> augment(const Tensor<double>&, const AugmentConfig&, std::uint64_t);

}  // namespace tribranch
