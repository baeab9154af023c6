#include "scvm/optim.hpp"

#include <cmath>
#include <numbers>

namespace scvm {

double cosine_lr(std::size_t step, double lr_max, std::size_t warmup_steps, std::size_t total_steps) {
  if (step >= total_steps) return 0.0;
  if (step < warmup_steps) {
    return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void AdamW<T>::step(ParameterStore<T>& params, double lr) {
  for (const auto& p : params.all()) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericalError("adamw: non-finite gradient in " + p.name);
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  for (auto& p : params.all()) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    auto& st = state_[p.name];
    if (st.m.empty()) {
      st.m.assign(p.tensor.size(), T(0));
      st.v.assign(p.tensor.size(), T(0));
    }
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    const double decay = p.decay ? lr * config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = b1 * st.m[i] + (T(1) - b1) * g[i];
      st.v[i] = b2 * st.v[i] + (T(1) - b2) * g[i] * g[i];
      const double m_hat = static_cast<double>(st.m[i]) / bc1;
      const double v_hat = static_cast<double>(st.v[i]) / bc2;
      double value = static_cast<double>(w[i]);
      value -= decay * value;
      value -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
      w[i] = static_cast<T>(value);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace scvm
