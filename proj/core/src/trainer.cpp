#include "tribranch/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "tribranch/backbone.hpp"
#include "tribranch/dataset.hpp"
#include "tribranch/ops.hpp"

namespace tribranch {

void TrainConfig::validate() const {
  backbone.validate();
  try {
    check_grid_matches(backbone, grid);
  } catch (const GridError& e) {
    throw ConfigError("grid", e.what());
  }
  if (heads.hidden < 1) throw ConfigError("heads.hidden", "must be >= 1");
  if (heads.bottleneck < 1) throw ConfigError("heads.bottleneck", "must be >= 1");
  if (heads.prototypes.empty()) throw ConfigError("heads.prototypes", "needs at least one head");
  for (int p : heads.prototypes) {
    if (p < 1) throw ConfigError("heads.prototypes", "prototype counts must be >= 1");
  }
  if (!(sampler.width_skew >= 1.0)) throw ConfigError("sampler.width_skew", "must be >= 1");
  if (!(sampler.depth_skew >= 1.0)) throw ConfigError("sampler.depth_skew", "must be >= 1");
  loss.validate();
  if (sk_iters < 0) throw ConfigError("loss.sk_iters", "must be >= 0");
  sched.validate();
  aug.validate();
  if (aug.global_size != backbone.image_size) throw ConfigError("aug.global_size", "must equal backbone.image_size");
  if (backbone.family != Family::resnet) {
    const int side = aug.local_size / backbone.patch_size;
    if (aug.local_size % backbone.patch_size != 0) {
      throw ConfigError("aug.local_size", "must be a multiple of backbone.patch_size");
    }
    if (backbone.family == Family::swin && side % (1 << (backbone.stage_count() - 1)) != 0) {
      throw ConfigError("aug.local_size", "local token grid must halve cleanly at every patch-merging step");
    }
  }
}

template <typename T>
Trainer<T>::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      student_((cfg_.validate(), make_store<T>(cfg_.backbone, cfg_.grid, cfg_.heads, cfg_.seed))),
      teacher_(student_),
      sampler_(cfg_.grid, [&] {
        SamplerConfig s = cfg_.sampler;
        s.seed = mix_seed(cfg_.seed, s.seed);
        return s;
      }()) {}

namespace {

template <typename T>
Tensor<T> stack_views(const std::vector<Tensor<T>>& views) {
  Shape s = views.front().shape();
  const std::size_t per = views.front().size();
  s[0] *= views.size();
  Tensor<T> out(s);
  for (std::size_t k = 0; k < views.size(); ++k) {
    std::copy(views[k].data().begin(), views[k].data().end(), out.ptr() + k * per);
  }
  return out;
}

template <typename T>
std::vector<Var<T>> split_rows(Var<T> x, std::size_t parts) {
  std::vector<Var<T>> out;
  const std::size_t rows = x.dim(0) / parts;
  for (std::size_t k = 0; k < parts; ++k) out.push_back(ops::slice(x, 0, k * rows, (k + 1) * rows));
  return out;
}

}  // namespace

template <typename T>
StepReport Trainer<T>::train_step(const Tensor<T>& images) {
  const ScheduleConfig& sc = cfg_.sched;
  StepReport rep;
  rep.step = step_;
  rep.epoch = static_cast<int>(step_ / sc.steps_per_epoch);
  rep.lr = lr_at(sc, step_);
  rep.wd = wd_at(sc, step_);
  rep.mu = mu_at(sc, step_);
  rep.tau = tau_at(sc, step_);
  rep.id = sampler_.next();
  const T tau_s = static_cast<T>(sc.tau_student);
  const int H = cfg_.heads.count();

  const ViewBatch<T> views = augment(images, cfg_.aug, mix_seed(cfg_.seed, 2 * static_cast<std::uint64_t>(step_)));
  const std::size_t v = views.locals.size();

  // Teacher targets on the first global view; no graph gradients needed.
  std::vector<Tensor<T>> p_a;
  {
    Graph<T> gt;
    SubNetView<T> tv = intact_view(teacher_);
    tv.set_trainable(false);
    Var<T> z = forward(gt, tv, views.global_a).pooled;
    for (int h = 0; h < H; ++h) {
      p_a.push_back(sk_center(head_forward(gt, tv, h, z).value(), cfg_.sk_iters, static_cast<T>(rep.tau)));
    }
  }

  Graph<T> g;
  Rng drop_rng(mix_seed(cfg_.seed, 2 * static_cast<std::uint64_t>(step_) + 1));
  const ForwardOptions train{true, &drop_rng};
  const SubNetView<T> iv = intact_view(student_);
  const SubNetView<T> ev = materialize(student_, cfg_.grid, rep.id);
  const Var<T> z1 = forward(g, iv, views.global_b, train).pooled;
  const Var<T> z2 = forward(g, ev, views.global_b, train).pooled;
  Var<T> l1, l2;
  if (v > 0) {
    const Tensor<T> locals = stack_views(views.locals);
    l1 = forward(g, iv, locals, train).pooled;
    l2 = forward(g, ev, locals, train).pooled;
  }

  std::vector<HeadLoss<T>> terms;
  for (int h = 0; h < H; ++h) {
    Var<T> p_b1 = ops::softmax(head_forward(g, iv, h, z1), tau_s);
    Var<T> p_b2 = ops::softmax(head_forward(g, ev, h, z2), tau_s);
    std::vector<Var<T>> loc1, loc2;
    if (v > 0) {
      loc1 = split_rows(ops::softmax(head_forward(g, iv, h, l1), tau_s), v);
      loc2 = split_rows(ops::softmax(head_forward(g, ev, h, l2), tau_s), v);
    }
    const Var<T> intact = loss_intact<T>(p_a[static_cast<std::size_t>(h)], p_b1, loc1);
    const ElasticLoss<T> el = loss_elastic<T>(p_a[static_cast<std::size_t>(h)], p_b1, p_b2, loc1, loc2);
    terms.push_back({intact, el.cross_view, cfg_.same_view ? el.same_view : Var<T>{}});
    rep.intact += static_cast<double>(intact.value().item()) / H;
    rep.es1 += static_cast<double>(el.cross_view.value().item()) / H;
    rep.es2 += static_cast<double>(el.same_view.value().item()) / H;
  }
  const Var<T> ko = koleo(z1, z2);
  rep.koleo = static_cast<double>(ko.value().item());
  const Var<T> total = loss_total<T>(terms, cfg_.loss, &ko);
  rep.loss = static_cast<double>(total.value().item());

  if (!std::isfinite(rep.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << rep.step << " (sub-network i=" << rep.id.i << " j=" << rep.id.j
        << "): intact=" << rep.intact << " es1=" << rep.es1 << " es2=" << rep.es2 << " koleo=" << rep.koleo
        << " lr=" << rep.lr << " tau=" << rep.tau;
    throw DivergenceError(msg.str());
  }

  student_.zero_grad();
  g.backward(total);
  const std::set<std::string> frozen = freeze_policy(cfg_.heads, rep.epoch, sc.freeze_last_layer_epochs);
  rep.grad_norm = clip_grad_norm(student_, sc.clip_norm, frozen);
  opt_.step(student_, rep.lr, rep.wd, sc.layer_decay, sc.patch_embed_lr_scale, frozen);
  ema_update(teacher_, student_, rep.mu);
  ++step_;
  return rep;
}

template <typename T>
void Trainer<T>::fit(const Tensor<T>& images, const std::function<void(const StepReport&)>& on_step) {
  const std::size_t n = images.dim(0);
  const auto batch = static_cast<std::size_t>(cfg_.sched.batch_size);
  if (n < batch) throw ConfigError("sched.batch_size", "exceeds the number of training images");
  const auto spe = static_cast<std::int64_t>(n / batch);
  if (spe != cfg_.sched.steps_per_epoch) {
    throw ConfigError("sched.steps_per_epoch", "must equal floor(train images / batch size) = " + std::to_string(spe));
  }
  std::vector<std::size_t> order(n);
  while (step_ < cfg_.sched.total_steps()) {
    const std::int64_t epoch = step_ / spe;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg_.seed ^ 0x5eedULL, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::int64_t b = step_ % spe; b < spe; ++b) {
      const std::span<const std::size_t> idx(order.data() + static_cast<std::size_t>(b) * batch, batch);
      const StepReport rep = train_step(gather(images, idx));
      if (on_step) on_step(rep);
    }
  }
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace tribranch
