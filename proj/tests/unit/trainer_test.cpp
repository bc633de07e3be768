#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "toys.hpp"
#include "tribranch/augment.hpp"
#include "tribranch/dataset.hpp"
#include "tribranch/optim.hpp"
#include "tribranch/schedule.hpp"
#include "tribranch/trainer.hpp"

using namespace tribranch;

TEST_CASE("learning rate schedule") {
  ScheduleConfig s;
  s.batch_size = 1024;
  CHECK(base_lr(s) == doctest::Approx(0.004).epsilon(1e-15));
  s.batch_size = 64;
  CHECK(base_lr(s) == doctest::Approx(0.001).epsilon(1e-15));
  s.epochs = 10;
  s.steps_per_epoch = 10;
  s.warmup_epochs = 2;
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 10) == doctest::Approx(0.0005));
  CHECK(lr_at(s, 20) == doctest::Approx(0.001));
  CHECK(lr_at(s, 100) == doctest::Approx(s.min_lr));
  for (std::int64_t t = 21; t <= 100; ++t) CHECK(lr_at(s, t) <= lr_at(s, t - 1));
}

TEST_CASE("weight decay, temperature and momentum schedules") {
  ScheduleConfig s;
  s.epochs = 100;
  s.steps_per_epoch = 10;
  s.tau_warmup_epochs = 30;
  CHECK(wd_at(s, 0) == doctest::Approx(0.04));
  CHECK(wd_at(s, 1000) == doctest::Approx(0.4));
  CHECK(tau_at(s, 0) == doctest::Approx(0.04));
  CHECK(tau_at(s, 150) == doctest::Approx(0.055));
  CHECK(tau_at(s, 300) == doctest::Approx(0.07));
  CHECK(tau_at(s, 999) == doctest::Approx(0.07));
  CHECK(mu_at(s, 0) == doctest::Approx(0.992));
  CHECK(mu_at(s, 500) == doctest::Approx((0.992 + 0.9999) / 2));
  CHECK(mu_at(s, 1000) == doctest::Approx(0.9999));
  CHECK(s.tau_student == 0.1);
  s.warmup_epochs = 200;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("prototype layers are frozen during the first epoch only") {
  const HeadConfig h = toys::heads();
  CHECK(freeze_policy(h, 0, 1) == std::set<std::string>{"head0.proto.weight", "head1.proto.weight"});
  CHECK(freeze_policy(h, 1, 1).empty());
  CHECK(freeze_policy(h, 0, 0).empty());
}

TEST_CASE("layer-wise learning rate scales") {
  const BackboneSpec v = toys::vit();
  CHECK(layer_count(v) == 4);
  CHECK(layer_id(v, "vit.cls_token") == 0);
  CHECK(layer_id(v, "vit.2.attn_q.weight") == 3);
  CHECK(layer_id(v, "vit.norm.weight") == 5);
  CHECK(layer_id(v, "head0.fc1.weight") == 5);
  CHECK(param_group(v, "head0.fc1.weight", 0.9, 0.2).lr_scale == 1.0);
  CHECK(param_group(v, "vit.3.mlp_fc1.weight", 0.9, 0.2).lr_scale == doctest::Approx(0.9));
  CHECK(param_group(v, "vit.pos_embed", 0.9, 0.2).lr_scale == doctest::Approx(std::pow(0.9, 5)));
  CHECK(param_group(v, "vit.patch_embed.weight", 0.9, 0.2).lr_scale == doctest::Approx(0.2 * std::pow(0.9, 5)));
  const BackboneSpec s = toys::swin();
  CHECK(layer_id(s, "swin.0.merge.reduction.weight") == 2);
  CHECK(layer_id(s, "swin.1.0.attn_q.weight") == 3);
}

TEST_CASE("gradient clipping") {
  auto store = make_store<double>(toys::vit(), toys::vit_grid(), toys::heads(), 1);
  Rng rng(2);
  for (auto& [name, p] : store) p.grad = oracle::random_tensor<double>(p.value.shape(), rng);
  const auto before = store;
  const double norm = clip_grad_norm(store, 1.5);
  CHECK(norm > 1.5);
  double sq = 0, dot = 0, sq0 = 0;
  for (const auto& [name, p] : store) {
    const auto& g0 = before.at(name).grad;
    for (std::size_t k = 0; k < p.grad.size(); ++k) {
      sq += p.grad[k] * p.grad[k];
      sq0 += g0[k] * g0[k];
      dot += p.grad[k] * g0[k];
    }
  }
  CHECK(std::sqrt(sq) <= 1.5 + 1e-6);
  CHECK(dot / std::sqrt(sq * sq0) == doctest::Approx(1.0).epsilon(1e-12));
  // small gradients are untouched
  for (auto& [name, p] : store) p.grad.fill(1e-6);
  const auto small = store;
  clip_grad_norm(store, 1.5);
  for (const auto& [name, p] : store) CHECK(p.grad == small.at(name).grad);
}

TEST_CASE("AdamW decays matrices only and skips frozen tensors") {
  auto store = make_store<double>(toys::vit(), toys::vit_grid(), toys::heads(), 3);
  for (auto& [name, p] : store) p.grad.fill(0.0);
  const auto before = store;
  AdamW<double> opt;
  opt.step(store, 0.1, 0.5, 1.0, 1.0, {"vit.0.attn_q.weight"});
  const auto& w = store.at("vit.1.attn_q.weight").value;
  const auto& w0 = before.at("vit.1.attn_q.weight").value;
  for (std::size_t k = 0; k < w.size(); ++k) CHECK(w[k] == doctest::Approx(w0[k] * (1 - 0.1 * 0.5)).epsilon(1e-14));
  CHECK(store.at("vit.1.norm1.weight").value == before.at("vit.1.norm1.weight").value);
  CHECK(store.at("vit.0.attn_q.weight").value == before.at("vit.0.attn_q.weight").value);
  CHECK(opt.moments().count("vit.0.attn_q.weight") == 0);

  // first step with no decay moves every coordinate by lr * sign(g)
  Parameter<double>& b = store.at("vit.2.mlp_fc1.bias");
  b.grad.fill(-3.0);
  const auto b0 = b.value;
  AdamW<double> fresh;
  fresh.step(store, 0.01, 0.0, 1.0, 1.0);
  for (std::size_t k = 0; k < b.value.size(); ++k) CHECK(b.value[k] - b0[k] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("EMA boundaries and closed form") {
  auto teacher = make_store<double>(toys::vit(), toys::vit_grid(), toys::heads(), 4);
  auto student = make_store<double>(toys::vit(), toys::vit_grid(), toys::heads(), 5);
  auto t1 = teacher;
  ema_update(t1, student, 1.0);
  for (const auto& [name, p] : t1) CHECK(p.value == teacher.at(name).value);
  ema_update(t1, student, 0.0);
  for (const auto& [name, p] : t1) CHECK(p.value == student.at(name).value);
  CHECK_THROWS_AS(ema_update(t1, student, 1.5), ParameterError);
  auto other = make_store<double>(toys::vit(), toys::vit_grid(), toys::heads(), 5, false);
  CHECK_THROWS_AS(ema_update(t1, other, 0.5), ParameterError);

  BackboneSpec tiny = toys::vit();
  Rng rng(6);
  std::vector<double> s, mus;
  auto ts = make_store<double>(tiny, toys::vit_grid(), toys::heads(), 7);
  auto ss = ts;
  const double t0 = ts.at("vit.cls_token").value[0];
  for (int k = 0; k < 200; ++k) {
    const double v = rng.uniform(-1, 1), mu = rng.uniform(0.9, 1.0);
    for (auto& [name, p] : ss) p.value.fill(v);
    ema_update(ts, ss, mu);
    s.push_back(v);
    mus.push_back(mu);
  }
  CHECK(std::abs(ts.at("vit.cls_token").value[0] - oracle::ema_closed_form(t0, s, mus)) < 1e-10);
}

TEST_CASE("augmentation") {
  const auto data = make_shapes<double>(6, 0, 16, 1);
  AugmentConfig cfg = toys::train_config().aug;
  const auto a = augment(data.train.images, cfg, 9);
  const auto b = augment(data.train.images, cfg, 9);
  CHECK(a.global_a == b.global_a);
  CHECK(a.global_b == b.global_b);
  REQUIRE(a.locals.size() == 2);
  CHECK(a.locals[1] == b.locals[1]);
  CHECK(a.global_a.shape() == Shape{6, 3, 16, 16});
  CHECK(a.locals[0].shape() == Shape{6, 3, 8, 8});
  CHECK(a.records.size() == 6 * 4);
  CHECK_FALSE(augment(data.train.images, cfg, 10).global_a == a.global_a);

  cfg.local_crops = 0;
  const auto none = augment(data.train.images, cfg, 9);
  CHECK(none.locals.empty());

  cfg.global_size = 32;
  CHECK_THROWS_AS(augment(data.train.images, cfg, 9), ConfigError);
  cfg = toys::train_config().aug;
  cfg.min_gcs = 0.9;
  cfg.max_gcs = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("flip rate") {
  const auto data = make_shapes<float>(2500, 0, 16, 2);
  AugmentConfig cfg = toys::train_config().aug;
  cfg.local_crops = 2;
  const auto v = augment(data.train.images, cfg, 3);
  std::size_t flips = 0;
  for (const auto& r : v.records) flips += r.flipped;
  CHECK(v.records.size() == 10000);
  CHECK(std::abs(static_cast<double>(flips) / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("train step contracts") {
  const auto data = make_shapes<double>(16, 0, 16, 3);
  TrainConfig cfg = toys::train_config(1);
  Trainer<double> tr(cfg);
  for (const auto& [name, p] : tr.teacher()) CHECK(p.value == tr.student().at(name).value);
  const auto before = tr.teacher();
  const StepReport r = tr.train_step(gather(data.train.images, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  CHECK(std::isfinite(r.loss));
  CHECK(r.step == 0);
  CHECK(r.lr == 0.0);
  CHECK(r.tau == doctest::Approx(0.04));
  CHECK(tr.step() == 1);
  // teacher never accumulates gradients and moves by convex combination
  for (const auto& [name, p] : tr.teacher()) {
    for (double gv : p.grad.data()) REQUIRE(gv == 0.0);
    const auto& t0 = before.at(name).value;
    const auto& s1 = tr.student().at(name).value;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      REQUIRE(p.value[k] >= std::min(t0[k], s1[k]) - 1e-15);
      REQUIRE(p.value[k] <= std::max(t0[k], s1[k]) + 1e-15);
    }
  }
  // prototypes are frozen in epoch 0
  CHECK(tr.student().at("head0.proto.weight").value == before.at("head0.proto.weight").value);
  const double reconstructed = (1 - 0.8) * (r.es1 + r.es2) + 0.8 * r.intact + 0.1 * r.koleo;
  CHECK(r.loss == doctest::Approx(reconstructed).epsilon(1e-12));
}

TEST_CASE("64-bit training is bit-reproducible") {
  const auto data = make_shapes<double>(32, 0, 16, 4);
  auto run = [&] {
    Trainer<double> tr(toys::train_config(5));
    std::vector<double> losses;
    tr.fit(data.train.images, [&](const StepReport& r) { losses.push_back(r.loss); });
    return std::pair{losses, tr.teacher()};
  };
  const auto [l1, t1] = run();
  const auto [l2, t2] = run();
  CHECK(l1.size() == 8);
  CHECK(l1 == l2);
  for (const auto& [name, p] : t1) REQUIRE(p.value == t2.at(name).value);
}

TEST_CASE("fit rejects a step count that does not match the data") {
  const auto data = make_shapes<float>(24, 0, 16, 5);
  Trainer<float> tr(toys::train_config());
  CHECK_THROWS_AS(tr.fit(data.train.images), ConfigError);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto data = make_shapes<double>(8, 0, 16, 6);
  Trainer<double> tr(toys::train_config());
  tr.student().at("vit.norm.weight").value[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    tr.train_step(data.train.images);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("configuration checks") {
  TrainConfig cfg = toys::train_config();
  cfg.aug.global_size = 12;
  CHECK_THROWS_AS(Trainer<float>{cfg}, ConfigError);
  cfg = toys::train_config();
  cfg.aug.local_size = 6;
  CHECK_THROWS_AS(Trainer<float>{cfg}, ConfigError);
  cfg = toys::train_config();
  cfg.grid.depth_max = 6;
  CHECK_THROWS_AS(Trainer<float>{cfg}, ConfigError);
}

TEST_CASE("500 steps stay finite and lower the loss") {
  const auto data = make_shapes<float>(40, 0, 16, 7);
  TrainConfig cfg = toys::train_config(8);
  cfg.sched.epochs = 100;
  cfg.sched.steps_per_epoch = 5;
  cfg.sched.warmup_epochs = 2;
  cfg.sched.tau_warmup_epochs = 2;
  Trainer<float> tr(cfg);
  std::vector<double> losses;
  tr.fit(data.train.images, [&](const StepReport& r) { losses.push_back(r.loss); });
  REQUIRE(losses.size() == 500);
  for (double l : losses) REQUIRE(std::isfinite(l));
  const double head = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100;
  const double tail = std::accumulate(losses.end() - 100, losses.end(), 0.0) / 100;
  CHECK(tail < head);
}
