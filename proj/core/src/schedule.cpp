#include "tribranch/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tribranch/errors.hpp"

namespace tribranch {

void ScheduleConfig::validate() const {
  auto need = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  need(epochs >= 1, "sched.epochs", "must be >= 1");
  need(steps_per_epoch >= 1, "sched.steps_per_epoch", "must be >= 1");
  need(batch_size >= 2, "sched.batch_size", "must be >= 2");
  need(lr_reference > 0.0, "sched.lr_reference", "must be positive");
  need(min_lr >= 0.0, "sched.min_lr", "must be >= 0");
  need(warmup_epochs >= 0 && warmup_epochs <= epochs, "sched.warmup_epochs", "must lie in [0, sched.epochs]");
  need(wd_start >= 0.0 && wd_end >= 0.0, "sched.wd_start", "weight decay must be >= 0");
  need(tau_start > 0.0 && tau_end > 0.0, "sched.tau_start", "temperatures must be positive");
  need(tau_warmup_epochs >= 0, "sched.tau_warmup_epochs", "must be >= 0");
  need(tau_student > 0.0, "sched.tau_student", "must be positive");
  need(mu_start >= 0.0 && mu_start <= 1.0, "sched.mu_start", "must lie in [0, 1]");
  need(mu_end >= 0.0 && mu_end <= 1.0, "sched.mu_end", "must lie in [0, 1]");
  need(clip_norm > 0.0, "sched.clip_norm", "must be positive");
  need(layer_decay > 0.0 && layer_decay <= 1.0, "sched.layer_decay", "must lie in (0, 1]");
  need(patch_embed_lr_scale > 0.0, "sched.patch_embed_lr_scale", "must be positive");
  need(freeze_last_layer_epochs >= 0, "sched.freeze_last_layer_epochs", "must be >= 0");
}

double cosine_ramp(double from, double to, double t) {
  t = std::clamp(t, 0.0, 1.0);
  return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double base_lr(const ScheduleConfig& cfg) {
  return cfg.lr_reference * std::sqrt(static_cast<double>(cfg.batch_size) / 1024.0);
}

double lr_at(const ScheduleConfig& cfg, std::int64_t step) {
  const double peak = base_lr(cfg);
  const std::int64_t warm = static_cast<std::int64_t>(cfg.warmup_epochs) * cfg.steps_per_epoch;
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  const std::int64_t rest = cfg.total_steps() - warm;
  if (rest <= 0) return peak;
  return cosine_ramp(peak, cfg.min_lr, static_cast<double>(step - warm) / static_cast<double>(rest));
}

double wd_at(const ScheduleConfig& cfg, std::int64_t step) {
  return cosine_ramp(cfg.wd_start, cfg.wd_end, static_cast<double>(step) / static_cast<double>(cfg.total_steps()));
}

double tau_at(const ScheduleConfig& cfg, std::int64_t step) {
  const std::int64_t warm = static_cast<std::int64_t>(cfg.tau_warmup_epochs) * cfg.steps_per_epoch;
  if (step >= warm) return cfg.tau_end;
  return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * static_cast<double>(step) / static_cast<double>(warm);
}

double mu_at(const ScheduleConfig& cfg, std::int64_t step) {
  return cosine_ramp(cfg.mu_start, cfg.mu_end, static_cast<double>(step) / static_cast<double>(cfg.total_steps()));
}

}  // namespace tribranch
