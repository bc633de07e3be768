#include "tribranch/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tribranch/backbone.hpp"
#include "tribranch/rng.hpp"

namespace tribranch {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> as_matrix(const Tensor<double>& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))};
}

std::size_t class_count(const LabeledFeatures& a, const LabeledFeatures& b) {
  std::int64_t top = 0;
  for (auto l : a.labels) top = std::max(top, l);
  for (auto l : b.labels) top = std::max(top, l);
  return static_cast<std::size_t>(top) + 1;
}

double accuracy(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& truth) {
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

void check_pair(const LabeledFeatures& train, const LabeledFeatures& test) {
  train.validate();
  test.validate();
  if (train.size() == 0) throw ParameterError("evaluation needs training features");
  if (test.size() > 0 && train.features.dim(1) != test.features.dim(1)) {
    throw DimensionError("train and test feature widths differ");
  }
}

RowMat with_bias(const Tensor<double>& f) {
  RowMat x(static_cast<Eigen::Index>(f.dim(0)), static_cast<Eigen::Index>(f.dim(1) + 1));
  x.leftCols(static_cast<Eigen::Index>(f.dim(1))) = as_matrix(f);
  x.rightCols(1).setOnes();
  return x;
}

}  // namespace

void LabeledFeatures::validate() const {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw DimensionError("features " + shape_str(features.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
  }
  if (!all_finite(features)) throw ParameterError("features contain non-finite values");
  for (auto l : labels) {
    if (l < 0) throw ParameterError("labels must be non-negative");
  }
}

LabeledFeatures make_features(const Tensor<double>& raw, std::vector<std::int64_t> labels) {
  LabeledFeatures out{raw, std::move(labels)};
  out.validate();
  const std::size_t n = raw.dim(0), d = raw.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0;
    for (std::size_t k = 0; k < d; ++k) sq += raw.at(i, k) * raw.at(i, k);
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t k = 0; k < d; ++k) out.features.at(i, k) *= inv;
  }
  return out;
}

double knn_eval(const LabeledFeatures& train, const LabeledFeatures& test, const KnnConfig& cfg) {
  if (cfg.k <= 0) throw ParameterError("k must be positive");
  if (!(cfg.temperature > 0.0)) throw ParameterError("k-NN temperature must be positive");
  check_pair(train, test);
  const auto k = static_cast<std::size_t>(cfg.k);
  if (k > train.size()) throw ParameterError("k exceeds the number of training samples");
  const RowMat sim = as_matrix(test.features) * as_matrix(train.features).transpose();
  const std::size_t classes = class_count(train, test);
  std::vector<std::size_t> idx(train.size());
  std::vector<double> votes(classes);
  std::vector<std::int64_t> pred(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto row = sim.row(static_cast<Eigen::Index>(i));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = row(static_cast<Eigen::Index>(a)), sb = row(static_cast<Eigen::Index>(b));
                        return sa > sb || (sa == sb && a < b);
                      });
    std::fill(votes.begin(), votes.end(), 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      votes[static_cast<std::size_t>(train.labels[idx[r]])] +=
          std::exp(row(static_cast<Eigen::Index>(idx[r])) / cfg.temperature);
    }
    pred[i] = std::max_element(votes.begin(), votes.end()) - votes.begin();
  }
  return accuracy(pred, test.labels);
}

double linear_probe(const LabeledFeatures& train, const LabeledFeatures& test, const ProbeConfig& cfg) {
  check_pair(train, test);
  if (cfg.epochs < 0 || !(cfg.lr > 0.0)) throw ParameterError("linear probe needs epochs >= 0 and lr > 0");
  const std::size_t classes = class_count(train, test);
  const RowMat x = with_bias(train.features);
  const auto n = x.rows();
  RowMat y = RowMat::Zero(n, static_cast<Eigen::Index>(classes));
  for (Eigen::Index i = 0; i < n; ++i) y(i, train.labels[static_cast<std::size_t>(i)]) = 1.0;
  RowMat w = RowMat::Zero(x.cols(), static_cast<Eigen::Index>(classes));
  for (int e = 0; e < cfg.epochs; ++e) {
    RowMat logits = x * w;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - m).exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    RowMat grad = x.transpose() * (logits - y) / static_cast<double>(n);
    grad.topRows(x.cols() - 1) += cfg.weight_decay * w.topRows(x.cols() - 1);
    w -= cfg.lr * grad;
  }
  if (test.size() == 0) return 0.0;
  const RowMat scores = with_bias(test.features) * w;
  std::vector<std::int64_t> pred(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    Eigen::Index best = 0;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    pred[i] = best;
  }
  return accuracy(pred, test.labels);
}

double least_squares_classifier(const LabeledFeatures& train, const LabeledFeatures& test, double ridge) {
  check_pair(train, test);
  const std::size_t classes = class_count(train, test);
  const RowMat x = with_bias(train.features);
  RowMat y = RowMat::Zero(x.rows(), static_cast<Eigen::Index>(classes));
  for (Eigen::Index i = 0; i < x.rows(); ++i) y(i, train.labels[static_cast<std::size_t>(i)]) = 1.0;
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);
  if (test.size() == 0) return 0.0;
  const Eigen::MatrixXd scores = with_bias(test.features) * w;
  std::vector<std::int64_t> pred(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    Eigen::Index best = 0;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    pred[i] = best;
  }
  return accuracy(pred, test.labels);
}

template <typename T>
Tensor<T> resize_images(const Tensor<T>& images, int size) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw DimensionError("images must be [N, C, H, W], got " + shape_str(s));
  if (size < 1) throw ParameterError("resize target must be >= 1");
  const auto out = static_cast<std::size_t>(size);
  if (s[2] == out && s[3] == out) return images;
  auto weights = [](std::size_t src, std::size_t dst) {
    std::vector<std::pair<std::size_t, double>> lo(dst);
    std::vector<std::size_t> hi(dst);
    for (std::size_t i = 0; i < dst; ++i) {
      double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
      const auto l = static_cast<std::size_t>(std::floor(pos));
      lo[i] = {l, pos - static_cast<double>(l)};
      hi[i] = std::min(l + 1, src - 1);
    }
    return std::pair{lo, hi};
  };
  const auto [ylo, yhi] = weights(s[2], out);
  const auto [xlo, xhi] = weights(s[3], out);
  Tensor<T> res(Shape{s[0], s[1], out, out});
  for (std::size_t p = 0; p < s[0] * s[1]; ++p) {
    const T* src = images.ptr() + p * s[2] * s[3];
    T* dst = res.ptr() + p * out * out;
    for (std::size_t y = 0; y < out; ++y) {
      const double fy = ylo[y].second;
      for (std::size_t x = 0; x < out; ++x) {
        const double fx = xlo[x].second;
        const double top = src[ylo[y].first * s[3] + xlo[x].first] * (1 - fx) + src[ylo[y].first * s[3] + xhi[x]] * fx;
        const double bot = src[yhi[y] * s[3] + xlo[x].first] * (1 - fx) + src[yhi[y] * s[3] + xhi[x]] * fx;
        dst[y * out + x] = static_cast<T>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return res;
}

template <typename T>
LabeledFeatures view_features(const SubNetView<T>& view, const LabeledImages<T>& data) {
  const Tensor<T> images = resize_images(data.images, view.store().spec().image_size);
  const Tensor<T> pooled = pooled_features(view, images);
  return make_features(pooled.template cast<double>(), data.labels);
}

void SweepReport::write_csv(std::ostream& out) const {
  out << "depth,width,metric,value,seconds\n";
  std::ostringstream line;
  line.precision(17);
  for (const auto& r : rows) {
    line.str("");
    line << r.depth << ',' << r.width << ',' << r.metric << ',' << r.value << ',' << r.seconds << '\n';
    out << line.str();
  }
}

SweepReport SweepReport::read_csv(std::istream& in) {
  SweepReport rep;
  std::string line;
  if (!std::getline(in, line) || line != "depth,width,metric,value,seconds") {
    throw FormatError("sweep CSV must start with the header depth,width,metric,value,seconds");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw FormatError("sweep CSV line " + std::to_string(lineno) + " needs 5 fields");
    SweepRow r;
    try {
      r.depth = f[0];
      r.width = std::stoi(f[1]);
      r.metric = f[2];
      r.value = std::stod(f[3]);
      r.seconds = std::stod(f[4]);
    } catch (const std::exception&) {
      throw FormatError("sweep CSV line " + std::to_string(lineno) + " has a malformed number");
    }
    rep.rows.push_back(r);
  }
  return rep;
}

void SweepReport::write_table(std::ostream& out) const {
  std::vector<int> widths;
  std::vector<std::string> depths;
  std::map<std::pair<std::string, int>, double> cell;
  for (const auto& r : rows) {
    if (std::find(widths.begin(), widths.end(), r.width) == widths.end()) widths.push_back(r.width);
    if (std::find(depths.begin(), depths.end(), r.depth) == depths.end()) depths.push_back(r.depth);
    cell[{r.depth, r.width}] = r.value;
  }
  out << "depth";
  for (int w : widths) out << ',' << w;
  out << '\n';
  for (const auto& d : depths) {
    out << d;
    for (int w : widths) {
      out << ',';
      auto it = cell.find({d, w});
      if (it != cell.end()) out << it->second;
    }
    out << '\n';
  }
}

template <typename T>
SweepReport sweep(ParamStore<T>& store, const ElasticGrid& grid, const Dataset<T>& data, const KnnConfig& knn) {
  check_grid_matches(store.spec(), grid);
  if (!(grid == store.grid())) throw GridError("sweep grid does not match the checkpoint's grid");
  SweepReport rep;
  rep.grid = grid;
  for (const SubNetId id : enumerate(grid)) {
    const auto t0 = std::chrono::steady_clock::now();
    const SubNetView<T> view = materialize(store, grid, id);
    const double acc = knn_eval(view_features(view, data.train), view_features(view, data.test), knn);
    SweepRow r;
    r.id = id;
    r.width = view.arch().width;
    r.depth = depth_label(grid, id.j);
    r.metric = "knn_top1";
    r.value = acc;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.rows.push_back(r);
  }
  return rep;
}

template <typename T>
Tensor<T> occlude_patches(const Tensor<T>& images, int patch, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ParameterError("occlusion level must lie in [0, 1]");
  const Shape& s = images.shape();
  const auto p = static_cast<std::size_t>(patch);
  if (s.size() != 4 || patch < 1 || s[2] % p != 0 || s[3] % p != 0) {
    throw ParameterError("occlusion patch size must divide the image size");
  }
  const std::size_t gy = s[2] / p, gx = s[3] / p, cells = gy * gx;
  const auto drop = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(cells)));
  Tensor<T> out = images;
  std::vector<std::size_t> order(cells);
  for (std::size_t n = 0; n < s[0]; ++n) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, n));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t k = 0; k < drop; ++k) {
      const std::size_t cy = order[k] / gx, cx = order[k] % gx;
      for (std::size_t c = 0; c < s[1]; ++c) {
        for (std::size_t y = cy * p; y < (cy + 1) * p; ++y) {
          T* row = out.ptr() + ((n * s[1] + c) * s[2] + y) * s[3];
          std::fill(row + cx * p, row + (cx + 1) * p, T(0));
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> shuffle_grid(const Tensor<T>& images, int grid, std::uint64_t seed) {
  const Shape& s = images.shape();
  const auto g = static_cast<std::size_t>(grid);
  if (s.size() != 4 || grid < 1 || s[2] % g != 0 || s[3] % g != 0) {
    throw ParameterError("shuffle grid must divide the image size");
  }
  const std::size_t ch = s[2] / g, cw = s[3] / g;
  Tensor<T> out(s);
  std::vector<std::size_t> perm(g * g);
  for (std::size_t n = 0; n < s[0]; ++n) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(mix_seed(seed, n));
    rng.shuffle(std::span<std::size_t>(perm));
    for (std::size_t cell = 0; cell < g * g; ++cell) {
      const std::size_t src = perm[cell];
      const std::size_t dy = cell / g, dx = cell % g, sy = src / g, sx = src % g;
      for (std::size_t c = 0; c < s[1]; ++c) {
        for (std::size_t y = 0; y < ch; ++y) {
          const T* from = images.ptr() + ((n * s[1] + c) * s[2] + sy * ch + y) * s[3] + sx * cw;
          T* to = out.ptr() + ((n * s[1] + c) * s[2] + dy * ch + y) * s[3] + dx * cw;
          std::copy(from, from + cw, to);
        }
      }
    }
  }
  return out;
}

template <typename T>
std::vector<double> robustness_probe(ParamStore<T>& store, const Dataset<T>& data, ProbeMode mode,
                                     const std::vector<double>& levels, std::uint64_t seed, const KnnConfig& knn) {
  const BackboneSpec& spec = store.spec();
  if (spec.family == Family::resnet) throw ParameterError("robustness probes need a transformer backbone");
  for (double level : levels) {
    if (mode == ProbeMode::occlusion && !(level >= 0.0 && level <= 1.0)) {
      throw ParameterError("occlusion level must lie in [0, 1]");
    }
    if (mode == ProbeMode::shuffle && (level < 1.0 || level != std::floor(level) ||
                                       spec.image_size % static_cast<int>(level) != 0)) {
      throw ParameterError("shuffle grid must be a positive integer dividing the image size");
    }
  }
  const SubNetView<T> view = intact_view(store);
  const LabeledFeatures train = view_features(view, data.train);
  const Tensor<T> clean = resize_images(data.test.images, spec.image_size);
  std::vector<double> out;
  for (double level : levels) {
    LabeledImages<T> corrupted{mode == ProbeMode::occlusion
                                   ? occlude_patches(clean, spec.patch_size, level, seed)
                                   : shuffle_grid(clean, static_cast<int>(level), seed),
                               data.test.labels};
    out.push_back(knn_eval(train, view_features(view, corrupted), knn));
  }
  return out;
}

#define TRIBRANCH_INSTANTIATE(T)                                                                             \
  template Tensor<T> resize_images(const Tensor<T>&, int);                                                   \
  template LabeledFeatures view_features(const SubNetView<T>&, const LabeledImages<T>&);                     \
  template SweepReport sweep(ParamStore<T>&, const ElasticGrid&, const Dataset<T>&, const KnnConfig&);      \
  template Tensor<T> occlude_patches(const Tensor<T>&, int, double, std::uint64_t);                          \
  template Tensor<T> shuffle_grid(const Tensor<T>&, int, std::uint64_t);                                     \
  template std::vector<double> robustness_probe(ParamStore<T>&, const Dataset<T>&, ProbeMode,                \
                                                const std::vector<double>&, std::uint64_t, const KnnConfig&);

TRIBRANCH_INSTANTIATE(float)
TRIBRANCH_INSTANTIATE(double)
#undef TRIBRANCH_INSTANTIATE

}  // namespace tribranch
