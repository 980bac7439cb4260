#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "maeface/ndgrad/ops.hpp"
#include "maeface/vitmae/mask.hpp"
#include "maeface/vitmae/weights.hpp"

namespace maeface {

// Which parameters become gradient-carrying leaves when bound to a tape.
// head_only freezes everything under "enc." (linear probe).
enum class Trainable { all, none, head_only };

// Binds a weight set to a tape; parameter values are copied onto the tape as
// leaves.
template <typename T>
class BoundModel {
 public:
  BoundModel(Tape<T>& tape, const ModelWeights<T>& weights, Trainable mode = Trainable::all);
  // Uses caller-made handles, one per parameter in `layout` order (gradient
  // checks perturb these directly).
  BoundModel(Tape<T>& tape, const ModelWeights<T>& layout, std::vector<Var<T>> vars);

  const ModelConfig& config() const { return config_; }
  Tape<T>& tape() { return *tape_; }
  Var<T> param(std::string_view name) const;
  // One handle per parameter, in ModelWeights order.
  std::span<const Var<T>> vars() const { return vars_; }

  // Gradient of parameter i after backward; zeros when none reached it.
  std::vector<T> grad(std::size_t i) const;

 private:
  Tape<T>* tape_;
  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
};

// Stochastic depth on residual branches. A null generator means evaluation.
struct DropPath {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
};

// Per-sample keep factors: 0 with probability rate, else 1 / (1 - rate).
template <typename T>
std::vector<T> drop_path_factors(std::size_t batch, double rate, std::mt19937_64& rng);

// Applies drop-path to a residual branch x[B, ...]; identity when inactive.
template <typename T>
Var<T> drop_path(Var<T> x, const DropPath& dp);

// patches[B, N, P] -> [B, V, enc_width]. An empty plan list feeds all N
// tokens in their original order.
template <typename T>
Var<T> encoder_forward(BoundModel<T>& model, Var<T> patches, std::span<const MaskPlan> plans,
                       const DropPath& dp = {});

// latent[B, V, enc_width] -> predictions [B, N, P] in original patch order.
template <typename T>
Var<T> decoder_forward(BoundModel<T>& model, Var<T> latent, std::span<const MaskPlan> plans,
                       const DropPath& dp = {});

// patches[B, N, P] -> [B, num_aus] logits. Throws ConfigError for a
// pretrain-task model.
template <typename T>
Var<T> classifier_forward(BoundModel<T>& model, Var<T> patches, const DropPath& dp = {});

// Single-image inference without gradients.
template <typename T>
Tensor<T> encode(const ModelWeights<T>& weights, const Tensor<T>& patches, const MaskPlan& plan);
template <typename T>
Tensor<T> reconstruct(const ModelWeights<T>& weights, const Tensor<T>& patches, const MaskPlan& plan);
template <typename T>
Tensor<T> classify(const ModelWeights<T>& weights, const Tensor<T>& patches);

// Stacks [N, P] patch tensors into [B, N, P].
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items);

}  // namespace maeface
