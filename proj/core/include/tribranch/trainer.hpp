#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tribranch/augment.hpp"
#include "tribranch/extract.hpp"
#include "tribranch/losses.hpp"
#include "tribranch/optim.hpp"
#include "tribranch/sampler.hpp"
#include "tribranch/schedule.hpp"

namespace tribranch {

struct TrainConfig {
  BackboneSpec backbone;
  ElasticGrid grid;
  HeadConfig heads;
  SamplerConfig sampler;
  LossWeights loss;
  bool same_view = true;  // false drops the elastic same-view term from the objective
  int sk_iters = 3;
  ScheduleConfig sched;
  AugmentConfig aug;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepReport {
  std::int64_t step = 0;
  int epoch = 0;
  SubNetId id;
  double lr = 0, wd = 0, mu = 0, tau = 0;
  double loss = 0;
  // head-averaged terms; es2 is reported even when excluded from the loss
  double intact = 0, es1 = 0, es2 = 0, koleo = 0;
  double grad_norm = 0;
};

/// Tri-branch self-distillation: an EMA teacher, the intact student and one
/// elastic sub-network of the intact student per step.
///
/// The elastic student is a view of the intact student's store, so its
/// gradients accumulate into the shared parameters. The teacher starts as a
/// copy of the student and only ever changes through the EMA.
template <typename T>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  /// One optimisation step on a batch of raw images [B, C, H, W].
  /// Throws DivergenceError (with a diagnostic message) on a non-finite loss.
  StepReport train_step(const Tensor<T>& images);

  /// Runs the configured epochs over `images`, reshuffling each epoch and
  /// dropping the last partial batch. `on_step` sees every report.
  void fit(const Tensor<T>& images, const std::function<void(const StepReport&)>& on_step = {});

  const TrainConfig& config() const { return cfg_; }
  ParamStore<T>& student() { return student_; }
  ParamStore<T>& teacher() { return teacher_; }
  const ParamStore<T>& student() const { return student_; }
  const ParamStore<T>& teacher() const { return teacher_; }
  std::int64_t step() const { return step_; }

 private:
  TrainConfig cfg_;
  ParamStore<T> student_;
  ParamStore<T> teacher_;
  AdamW<T> opt_;
  SubNetSampler sampler_;
  std::int64_t step_ = 0;
};

}  // namespace tribranch
