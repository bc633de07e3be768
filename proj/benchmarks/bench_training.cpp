#include <benchmark/benchmark.h>

#include "tribranch/dataset.hpp"
#include "tribranch/trainer.hpp"

using namespace tribranch;

namespace {

// One full tri-branch step on the desk-scale toy ViT, batch 64, 4 locals.
void BM_TrainStep(benchmark::State& state) {
  TrainConfig c;
  c.backbone.family = Family::vit;
  c.backbone.image_size = 16;
  c.backbone.patch_size = 4;
  c.backbone.head_dim = 8;
  c.backbone.num_heads = 4;
  c.backbone.depth = 4;
  c.backbone.drop_path = 0.1;
  c.grid = ElasticGrid{8, 4, 2, 4, 2, {}};
  c.heads = HeadConfig{64, 32, {64, 128, 256, 512}};
  c.same_view = state.range(0) != 0;
  c.sched.epochs = 1000;
  c.sched.steps_per_epoch = 1;
  c.sched.batch_size = 64;
  c.sched.warmup_epochs = 1;
  c.aug.global_size = 16;
  c.aug.local_size = 8;
  c.aug.local_crops = 4;
  c.aug.blur_radius_min = 0.01;
  c.aug.blur_radius_max = 0.15;
  const auto data = make_shapes<float>(64, 0, 32, 1);
  Trainer<float> tr(c);
  for (auto _ : state) benchmark::DoNotOptimize(tr.train_step(data.train.images).loss);
  state.SetLabel(c.same_view ? "with same-view term" : "without same-view term");
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond)->Iterations(20);

}  // namespace
