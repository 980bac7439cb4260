#pragma once

#include <cstdint>
#include <vector>

#include "maeface/train/config.hpp"
#include "maeface/vitmae/weights.hpp"

namespace maeface {

// Linear warmup from 0 to the peak, then half-cosine to min_lr; steps past
// the schedule return min_lr.
double lr_at(const TrainConfig& config, std::uint64_t step, std::uint64_t steps_per_epoch);

template <typename T>
struct OptimState {
  std::vector<std::vector<T>> m;  // one buffer per parameter, empty until used
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  static OptimState fresh(const ModelWeights<T>& weights);
};

struct AdamW {
  double lr = 0;
  double weight_decay = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step with decoupled decay, w <- w (1 - lr wd),
// applied to matrices only. Parameters with an empty gradient (frozen) and
// fixed tables are left untouched. Throws NumericalError naming the
// parameter and step on a non-finite gradient, before any weight changes.
template <typename T>
void adamw_step(ModelWeights<T>& weights, const std::vector<std::vector<T>>& grads, OptimState<T>& state,
                const AdamW& hp);

}  // namespace maeface
