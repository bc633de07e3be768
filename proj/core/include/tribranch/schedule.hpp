#pragma once

#include <cstdint>

namespace tribranch {

/// Per-step training schedules. Steps are global optimizer steps; an epoch
/// is `steps_per_epoch` steps.
struct ScheduleConfig {
  int epochs = 100;
  int steps_per_epoch = 100;
  int batch_size = 1024;
  double lr_reference = 0.004;  // at batch 1024, scaled by sqrt(batch / 1024)
  double min_lr = 1e-6;
  int warmup_epochs = 10;
  double wd_start = 0.04, wd_end = 0.4;
  double tau_start = 0.04, tau_end = 0.07;
  int tau_warmup_epochs = 30;
  double tau_student = 0.1;
  double mu_start = 0.992, mu_end = 0.9999;
  double clip_norm = 1.5;
  double layer_decay = 0.9;
  double patch_embed_lr_scale = 0.2;
  int freeze_last_layer_epochs = 1;

  std::int64_t total_steps() const { return static_cast<std::int64_t>(epochs) * steps_per_epoch; }
  void validate() const;  // ConfigError naming the sched.* key
};

// lr_reference * sqrt(batch_size / 1024).
double base_lr(const ScheduleConfig& cfg);

// Linear warmup from 0 to base_lr, then cosine decay to min_lr.
double lr_at(const ScheduleConfig& cfg, std::int64_t step);

// Cosine from wd_start to wd_end over the run.
double wd_at(const ScheduleConfig& cfg, std::int64_t step);

// Teacher temperature: linear from tau_start to tau_end, then constant.
double tau_at(const ScheduleConfig& cfg, std::int64_t step);

// EMA momentum: cosine from mu_start to mu_end over the run, per step.
double mu_at(const ScheduleConfig& cfg, std::int64_t step);

// Cosine interpolation from `from` (t = 0) to `to` (t = 1).
double cosine_ramp(double from, double to, double t);

}  // namespace tribranch
