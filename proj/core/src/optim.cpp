#include "tribranch/optim.hpp"

#include <cmath>

namespace tribranch {

namespace {

// Leading integer fields after the family prefix: "vit.3.attn_q" -> {3},
// "swin.1.0.norm1" -> {1, 0}, "swin.1.merge.norm" -> {1}.
std::vector<int> numeric_fields(const std::string& name) {
  std::vector<int> out;
  std::size_t pos = name.find('.');
  while (pos != std::string::npos) {
    const std::size_t start = pos + 1;
    const std::size_t end = name.find('.', start);
    const std::string field = name.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) break;
    out.push_back(std::stoi(field));
    pos = end;
  }
  return out;
}

}  // namespace

int layer_count(const BackboneSpec& spec) {
  int n = 0;
  for (int s = 0; s < spec.stage_count(); ++s) n += spec.blocks_in_stage(s);
  return n;
}

int layer_id(const BackboneSpec& spec, const std::string& name) {
  const int top = layer_count(spec) + 1;
  if (name.rfind("head", 0) == 0) return top;
  const std::vector<int> f = numeric_fields(name);
  if (f.empty()) {
    const std::string final_norm = to_string(spec.family) + ".norm.";
    return name.rfind(final_norm, 0) == 0 ? top : 0;
  }
  if (spec.family == Family::vit) return f[0] + 1;
  int offset = 0;
  for (int s = 0; s < f[0]; ++s) offset += spec.blocks_in_stage(s);
  if (f.size() == 1) return offset + spec.blocks_in_stage(f[0]);  // merging layer after stage f[0]
  return offset + f[1] + 1;
}

ParamGroup param_group(const BackboneSpec& spec, const std::string& name, double layer_decay, double patch_scale) {
  ParamGroup g;
  const int depth_from_top = layer_count(spec) + 1 - layer_id(spec, name);
  g.lr_scale = std::pow(layer_decay, depth_from_top);
  if (spec.family != Family::resnet && name.find("patch_embed") != std::string::npos) g.lr_scale *= patch_scale;
  return g;
}

std::set<std::string> freeze_policy(const HeadConfig& heads, int epoch, int freeze_epochs) {
  std::set<std::string> out;
  if (epoch >= freeze_epochs) return out;
  for (int h = 0; h < heads.count(); ++h) out.insert(head_prefix(h) + ".proto.weight");
  return out;
}

template <typename T>
double clip_grad_norm(ParamStore<T>& store, double max_norm, const std::set<std::string>& frozen) {
  double sq = 0.0;
  for (auto& [name, p] : store) {
    if (frozen.count(name)) continue;
    for (T g : p.grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& [name, p] : store) {
      if (frozen.count(name)) continue;
      for (T& g : p.grad.data()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
void AdamW<T>::step(ParamStore<T>& store, double lr, double wd, double layer_decay, double patch_scale,
                    const std::set<std::string>& frozen) {
  for (auto& [name, p] : store) {
    if (frozen.count(name)) continue;
    Moments& st = state_[name];
    if (st.m.size() != p.value.size()) {
      st.m = Tensor<T>(p.value.shape());
      st.v = Tensor<T>(p.value.shape());
      st.t = 0;
    }
    ++st.t;
    const ParamGroup grp = param_group(store.spec(), name, layer_decay, patch_scale);
    const bool decay = p.value.rank() >= 2;
    const double step_lr = lr * grp.lr_scale;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    T* m = st.m.ptr();
    T* v = st.v.ptr();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = beta1_ * static_cast<double>(m[k]) + (1.0 - beta1_) * gk;
      const double vk = beta2_ * static_cast<double>(v[k]) + (1.0 - beta2_) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      double wk = static_cast<double>(w[k]);
      if (decay) wk -= step_lr * wd * wk;
      wk -= step_lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps_);
      w[k] = static_cast<T>(wk);
    }
  }
}

template <typename T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ParameterError("EMA momentum must lie in [0, 1]");
  if (teacher.size() != student.size()) throw ParameterError("teacher and student hold different parameter sets");
  const T a = static_cast<T>(mu), b = static_cast<T>(1.0 - mu);
  for (auto& [name, tp] : teacher) {
    const Parameter<T>& sp = student.at(name);
    if (sp.value.shape() != tp.value.shape()) throw ParameterError("EMA shape mismatch for '" + name + "'");
    T* t = tp.value.ptr();
    const T* s = sp.value.ptr();
    for (std::size_t k = 0; k < tp.value.size(); ++k) t[k] = a * t[k] + b * s[k];
  }
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(ParamStore<float>&, double, const std::set<std::string>&);
template double clip_grad_norm(ParamStore<double>&, double, const std::set<std::string>&);
template void ema_update(ParamStore<float>&, const ParamStore<float>&, double);
template void ema_update(ParamStore<double>&, const ParamStore<double>&, double);

}  // namespace tribranch
