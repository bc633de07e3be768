#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "tribranch/param_store.hpp"

namespace tribranch {

// Depth position used for layer-wise lr decay: 0 for embeddings / stem,
// 1..L for blocks in forward order (Swin merging layers join the preceding
// block), L + 1 for the final norm and the heads.
int layer_id(const BackboneSpec& spec, const std::string& name);
int layer_count(const BackboneSpec& spec);  // L

struct ParamGroup {
  double lr_scale = 1.0;
};

// lr_scale = decay^(L + 1 - layer_id), times patch_scale for transformer
// patch embeddings.
ParamGroup param_group(const BackboneSpec& spec, const std::string& name, double layer_decay, double patch_scale);

/// Names excluded from the update at `epoch`: every head prototype layer
/// while epoch < freeze_epochs, nothing afterwards.
std::set<std::string> freeze_policy(const HeadConfig& heads, int epoch, int freeze_epochs);

// Scales all non-frozen gradients so their global L2 norm is at most
// max_norm. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& store, double max_norm, const std::set<std::string>& frozen = {});

/// Adam with decoupled weight decay: p <- p - lr * s * (m_hat / (sqrt(v_hat) + eps) + wd * p),
/// s the parameter group's lr scale. Weight decay applies to tensors of rank
/// >= 2 only (not biases or norms). Frozen parameters keep their value and
/// moments.
template <typename T>
class AdamW {
 public:
  struct Moments {
    Tensor<T> m, v;
    std::int64_t t = 0;
  };

  explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& store, double lr, double wd, double layer_decay, double patch_scale,
            const std::set<std::string>& frozen = {});

  const std::map<std::string, Moments>& moments() const { return state_; }
  std::map<std::string, Moments>& moments() { return state_; }

 private:
  double beta1_, beta2_, eps_;
  std::map<std::string, Moments> state_;
};

/// teacher <- mu * teacher + (1 - mu) * student over every shared tensor.
/// Throws ParameterError on a shape or name mismatch or mu outside [0, 1].
template <typename T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double mu);

}  // namespace tribranch
