#include <benchmark/benchmark.h>

#include "tribranch/backbone.hpp"
#include "tribranch/losses.hpp"
#include "tribranch/ops.hpp"

using namespace tribranch;

namespace {

Tensor<float> uniform(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(s));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  for (auto _ : state) {
    Graph<float> g;
    benchmark::DoNotOptimize(ops::matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_SinkhornKnopp(benchmark::State& state) {
  const auto p = static_cast<std::size_t>(state.range(0));
  const auto logits = uniform({64, p}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(sk_center(logits, 3, 0.04f).data().data());
}
BENCHMARK(BM_SinkhornKnopp)->Arg(64)->Arg(512)->Arg(4096);

// Toy ViT forward at each width of a 3-step lattice; forward cost tracks the
// sliced width.
void BM_ViTForward(benchmark::State& state) {
  BackboneSpec spec;
  spec.family = Family::vit;
  spec.image_size = 32;
  spec.patch_size = 4;
  spec.head_dim = 8;
  spec.num_heads = 8;
  spec.depth = 6;
  const ElasticGrid grid{8, 8, 2, 6, 3, {}};
  auto store = make_store<float>(spec, grid, HeadConfig{0, 0, {}}, 4, false);
  const auto view = materialize(store, grid, SubNetId{static_cast<int>(state.range(0)), 0});
  const auto x = uniform({16, 3, 32, 32}, 5);
  for (auto _ : state) {
    Graph<float> g;
    benchmark::DoNotOptimize(forward(g, view, x).pooled.value().data().data());
  }
  state.SetLabel("width " + std::to_string(view.arch().width));
}
BENCHMARK(BM_ViTForward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace
