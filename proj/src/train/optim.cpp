#include "maeface/train/optim.hpp"

#include <cmath>
#include <numbers>

#include "maeface/error.hpp"

namespace maeface {

double lr_at(const TrainConfig& c, std::uint64_t step, std::uint64_t steps_per_epoch) {
  const double peak = c.peak_lr();
  const std::uint64_t warmup = c.warmup_epochs * steps_per_epoch;
  const std::uint64_t total = c.epochs * steps_per_epoch;
  if (step < warmup) return peak * double(step) / double(warmup);
  if (step >= total) return c.min_lr;
  const double progress = double(step - warmup) / double(total - warmup);
  return c.min_lr + (peak - c.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
OptimState<T> OptimState<T>::fresh(const ModelWeights<T>& weights) {
  OptimState s;
  s.m.resize(weights.params.size());
  s.v.resize(weights.params.size());
  return s;
}

template <typename T>
void adamw_step(ModelWeights<T>& weights, const std::vector<std::vector<T>>& grads, OptimState<T>& state,
                const AdamW& hp) {
  const std::size_t n = weights.params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    throw ShapeError("adamw: gradient or state count differs from parameter count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = grads[i];
    if (g.empty()) continue;
    if (g.size() != weights.params[i].value.numel()) throw ShapeError("adamw: gradient shape differs for " + weights.params[i].name);
    for (T x : g) {
      if (!std::isfinite(x)) {
        throw NumericalError("non-finite gradient in " + weights.params[i].name + " at step " + std::to_string(state.step));
      }
    }
  }
  ++state.step;
  const double t = double(state.step);
  const T b1 = T(hp.beta1), b2 = T(hp.beta2);
  const T c1 = T(1.0 / (1.0 - std::pow(hp.beta1, t)));
  const T c2 = T(1.0 / (1.0 - std::pow(hp.beta2, t)));
  const T lr = T(hp.lr), eps = T(hp.eps);
  const T decay = T(1.0 - hp.lr * hp.weight_decay);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = weights.params[i];
    const auto& g = grads[i];
    if (g.empty() || p.kind == ParamKind::fixed) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.empty()) {
      m.assign(g.size(), T(0));
      v.assign(g.size(), T(0));
    }
    T* w = p.value.raw();
    const bool decayed = p.kind == ParamKind::matrix && hp.weight_decay != 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      if (decayed) w[k] *= decay;
      w[k] -= lr * (m[k] * c1) / (std::sqrt(v[k] * c2) + eps);
    }
  }
}

template struct OptimState<float>;
template struct OptimState<double>;
template void adamw_step(ModelWeights<float>&, const std::vector<std::vector<float>>&, OptimState<float>&, const AdamW&);
template void adamw_step(ModelWeights<double>&, const std::vector<std::vector<double>>&, OptimState<double>&,
                         const AdamW&);

}  // namespace maeface
