#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "tribranch/errors.hpp"

namespace oracle {

using tribranch::Family;
using tribranch::Shape;

std::vector<int> block_ids(int depth_max, int depth) {
  std::vector<int> ids;
  for (int k = 0; k < depth; ++k) ids.push_back(depth == depth_max ? k : (depth_max - 1) * k / (depth - 1));
  return ids;
}

namespace {

std::vector<int> elastic_stage_list(const BackboneSpec& s) {
  switch (s.family) {
    case Family::vit: return {0};
    case Family::swin: return {std::min<int>(2, static_cast<int>(s.stage_depths.size()) - 1)};
    case Family::resnet: return {1, 2};
  }
  return {};
}

std::vector<int> lattice_depths(const ElasticGrid& grid, int j) {
  if (!grid.depth_table.empty()) return grid.depth_table.at(static_cast<std::size_t>(j));
  return {grid.depth_max - j};
}

std::vector<std::string> split_dots(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  std::string p;
  while (std::getline(ss, p, '.')) parts.push_back(p);
  return parts;
}

bool numeric(const std::string& s) { return !s.empty() && std::all_of(s.begin(), s.end(), ::isdigit); }

bool width_scaled(const std::string& name) {
  static const char* kScaled[] = {".attn_q.weight",   ".attn_k.weight",           ".attn_v.weight",
                                  ".attn_proj.weight", ".mlp_fc1.weight",          ".mlp_fc2.weight",
                                  ".merge.reduction.weight", ".conv2.weight",      ".conv3.weight"};
  for (const char* s : kScaled) {
    const std::string suf(s);
    if (name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0) return true;
  }
  return false;
}

// Copies the leading block of `src` with extents `shape`, element by element.
template <typename T>
Tensor<T> leading_block(const Tensor<T>& src, const Shape& shape, T factor) {
  Tensor<T> out(shape);
  const Shape& full = src.shape();
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = shape.size(); a-- > 0;) {
      idx[a] = rem % shape[a];
      rem /= shape[a];
    }
    std::size_t at = 0;
    for (std::size_t a = 0; a < full.size(); ++a) at = at * full[a] + idx[a];
    out[flat] = factor == T(1) ? src[at] : src[at] * factor;
  }
  return out;
}

}  // namespace

BackboneSpec sub_spec(const BackboneSpec& parent, const ElasticGrid& grid, SubNetId id) {
  BackboneSpec s = parent;
  s.num_heads = parent.num_heads - id.i;
  const std::vector<int> depths = lattice_depths(grid, id.j);
  const std::vector<int> stages = elastic_stage_list(parent);
  if (parent.family == Family::vit) {
    s.depth = depths.at(0);
  } else {
    for (std::size_t k = 0; k < stages.size(); ++k) s.stage_depths[static_cast<std::size_t>(stages[k])] = depths.at(k);
  }
  if (parent.family == Family::resnet) {
    s.stem_width = parent.resnet_stem_width();
    s.out_width = parent.resnet_out_width(0);
  }
  return s;
}

template <typename T>
ParamStore<T> loop_subnet(const ParamStore<T>& parent, const ElasticGrid& grid, SubNetId id, bool heads) {
  const BackboneSpec& ps = parent.spec();
  const BackboneSpec ss = sub_spec(ps, grid, id);
  ElasticGrid g1;
  g1.head_dim = ss.head_dim;
  g1.num_heads = ss.num_heads;
  const std::vector<int> stages = elastic_stage_list(ps);
  if (ps.family == Family::resnet) {
    std::vector<int> row;
    for (int s : stages) row.push_back(ss.stage_depths[static_cast<std::size_t>(s)]);
    g1.depth_table = {row};
  } else {
    g1.depth_max = ps.family == Family::vit ? ss.depth : ss.stage_depths[static_cast<std::size_t>(stages[0])];
  }
  ParamStore<T> out(ss, g1, heads ? parent.heads() : tribranch::HeadConfig{0, 0, {}});
  const T alpha = static_cast<T>(ps.max_width()) / static_cast<T>(ss.max_width());

  // Block renaming per stage.
  auto parent_block = [&](int stage, int k) {
    const bool elastic = std::find(stages.begin(), stages.end(), stage) != stages.end();
    if (!elastic) return k;
    const int full = ps.blocks_in_stage(stage), sub = ss.blocks_in_stage(stage);
    return block_ids(full, sub).at(static_cast<std::size_t>(k));
  };

  for (const auto& [name, shape] : tribranch::backbone_param_shapes(ss)) {
    auto parts = split_dots(name);
    if (ps.family == Family::vit && numeric(parts[1])) {
      parts[1] = std::to_string(parent_block(0, std::stoi(parts[1])));
    } else if (ps.family != Family::vit && parts.size() > 2 && numeric(parts[1]) && numeric(parts[2])) {
      parts[2] = std::to_string(parent_block(std::stoi(parts[1]), std::stoi(parts[2])));
    }
    std::string pname = parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) pname += "." + parts[k];
    out.add(name, leading_block(parent.at(pname).value, shape, width_scaled(name) ? alpha : T(1)));
  }
  if (heads) {
    const int f = ss.feature_dim(), full = ps.feature_dim();
    for (const auto& [name, shape] : tribranch::head_param_shapes(parent.heads(), f)) {
      const bool first = name.find(".fc1.weight") != std::string::npos;
      out.add(name, leading_block(parent.at(name).value, shape, first && f != full ? alpha : T(1)));
    }
  }
  return out;
}

template <typename T>
Tensor<T> random_tensor(const Shape& shape, tribranch::Rng& rng, double scale) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-scale, scale));
  return t;
}

template <typename T>
void jitter_params(ParamStore<T>& store, std::uint64_t seed, double scale) {
  tribranch::Rng rng(seed);
  for (auto& [name, p] : store) {
    for (auto& v : p.value.data()) v += static_cast<T>(rng.normal() * scale);
  }
}

std::vector<FdResult> fd_check(ParamStore<double>& store,
                               const std::function<tribranch::Var<double>(tribranch::Graph<double>&)>& loss,
                               std::size_t count, std::uint64_t seed, double h, double min_grad) {
  store.zero_grad();
  {
    tribranch::Graph<double> g;
    g.backward(loss(g));
  }
  std::vector<std::pair<std::string, std::size_t>> candidates;
  for (const auto& [name, p] : store) {
    for (std::size_t k = 0; k < p.grad.size(); ++k) {
      if (std::abs(p.grad[k]) > min_grad) candidates.emplace_back(name, k);
    }
  }
  tribranch::Rng rng(seed);
  rng.shuffle(std::span(candidates));
  if (candidates.size() > count) candidates.resize(count);

  auto value = [&] {
    tribranch::Graph<double> g;
    return loss(g).value().item();
  };
  std::vector<FdResult> out;
  for (const auto& [name, k] : candidates) {
    auto& p = store.at(name);
    const double keep = p.value[k];
    p.value[k] = keep + h;
    const double up = value();
    p.value[k] = keep - h;
    const double down = value();
    p.value[k] = keep;
    FdResult r{name, k, p.grad[k], (up - down) / (2 * h), 0};
    r.rel_error = std::abs(r.analytic - r.numeric) / std::max(std::abs(r.analytic), std::abs(r.numeric));
    out.push_back(r);
  }
  return out;
}

double koleo(const std::vector<std::vector<double>>& rows, double floor) {
  std::vector<std::vector<double>> z = rows;
  for (auto& r : z) {
    double n = 0;
    for (double v : r) n += v * v;
    n = std::max(std::sqrt(n), 1e-6);
    for (double& v : r) v /= n;
  }
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < z.size(); ++j) {
      if (j == i) continue;
      double d2 = 0;
      for (std::size_t k = 0; k < z[i].size(); ++k) d2 += (z[i][k] - z[j][k]) * (z[i][k] - z[j][k]);
      best = std::min(best, std::sqrt(d2));
    }
    total += std::log(std::max(best, floor));
  }
  return -total / static_cast<double>(z.size());
}

std::vector<std::vector<double>> sinkhorn(const std::vector<std::vector<double>>& logits, int iters, double eps) {
  const std::size_t B = logits.size(), P = logits.front().size();
  std::vector<std::vector<double>> K(B, std::vector<double>(P));
  for (std::size_t b = 0; b < B; ++b) {
    const double m = *std::max_element(logits[b].begin(), logits[b].end());
    for (std::size_t p = 0; p < P; ++p) K[b][p] = std::exp((logits[b][p] - m) / eps);
  }
  std::vector<double> r(B, 1.0), c(P, 1.0);
  auto fit_rows = [&] {
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0;
      for (std::size_t p = 0; p < P; ++p) s += K[b][p] * c[p];
      r[b] = 1.0 / s;
    }
  };
  fit_rows();
  for (int it = 0; it < iters; ++it) {
    for (std::size_t p = 0; p < P; ++p) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) s += r[b] * K[b][p];
      c[p] = (static_cast<double>(B) / static_cast<double>(P)) / s;
    }
    fit_rows();
  }
  std::vector<std::vector<double>> Q(B, std::vector<double>(P));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) Q[b][p] = r[b] * K[b][p] * c[p];
  }
  return Q;
}

double ema_closed_form(double t0, const std::vector<double>& students, const std::vector<double>& mus) {
  const std::size_t n = mus.size();
  double prod = 1;
  for (double m : mus) prod *= m;
  double acc = prod * t0;
  for (std::size_t k = 0; k < n; ++k) {
    double tail = 1;
    for (std::size_t m = k + 1; m < n; ++m) tail *= mus[m];
    acc += (1 - mus[k]) * students[k] * tail;
  }
  return acc;
}

template ParamStore<float> loop_subnet(const ParamStore<float>&, const ElasticGrid&, SubNetId, bool);
template ParamStore<double> loop_subnet(const ParamStore<double>&, const ElasticGrid&, SubNetId, bool);
template Tensor<float> random_tensor(const Shape&, tribranch::Rng&, double);
template Tensor<double> random_tensor(const Shape&, tribranch::Rng&, double);
template void jitter_params(ParamStore<float>&, std::uint64_t, double);
template void jitter_params(ParamStore<double>&, std::uint64_t, double);

}  // namespace oracle
