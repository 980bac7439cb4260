#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "maeface/ndgrad/tape.hpp"
#include "maeface/vitmae/mask.hpp"

namespace maeface {

// mean: pretrain loss averages over masked elements, AU losses sum over AUs
// and average over the batch. sum: per-sample sums as written in the
// objectives, averaged over the batch.
enum class Reduction { mean, sum };
enum class LossFlavor { l1, l2 };

std::string_view reduction_name(Reduction r);
Reduction parse_reduction(std::string_view s);
std::string_view flavor_name(LossFlavor f);
LossFlavor parse_flavor(std::string_view s);

// Reconstruction targets; rows are patches along the last axis.
template <typename T>
struct PretrainTargets {
  Tensor<T> patches;
  bool normalized = false;
  T eps = T(1e-6);
  std::vector<T> mean;  // per row, when normalized
  std::vector<T> var;
};

template <typename T>
PretrainTargets<T> raw_targets(const Tensor<T>& patches);

// (x - mu_row) / sqrt(var_row + eps), population variance.
template <typename T>
PretrainTargets<T> patch_normalize(const Tensor<T>& patches, T eps = T(1e-6));

// Maps predictions in target space back to pixels using the cached moments.
template <typename T>
Tensor<T> denormalize_patches(const Tensor<T>& pred, const PretrainTargets<T>& targets);

// pred and targets are [B, N, P] with one plan per batch item (or [N, P]
// with one plan). Only masked rows contribute. Throws DomainError when no
// patch is masked.
template <typename T>
Var<T> loss_pretrain(Var<T> pred, const PretrainTargets<T>& targets, std::span<const MaskPlan> plans,
                     LossFlavor flavor = LossFlavor::l1, Reduction reduction = Reduction::mean);

// Labels of one image. occurrence/intensity may be absent; valid flags mark
// annotated AUs (empty = all valid).
struct AULabels {
  std::optional<std::vector<int>> occurrence;
  std::optional<std::vector<int>> intensity;
  std::vector<char> valid;

  bool is_valid(std::size_t au) const { return valid.empty() || valid[au] != 0; }
  // Range checks: occurrence in {0,1}, intensity in {0..5}; throws DomainError.
  void validate(std::size_t num_aus) const;
};

// Row-major [batch, aus] real targets. Detection targets may be soft (mixup).
struct LabelBatch {
  std::size_t batch = 0;
  std::size_t aus = 0;
  std::vector<double> target;
  std::vector<char> valid;
};

enum class LabelKind { occurrence, intensity };

// Occurrence bits as-is, intensities divided by 5. Throws DataError when a
// sample lacks the requested field.
LabelBatch make_label_batch(std::span<const AULabels> labels, std::size_t num_aus, LabelKind kind);

// Sigmoid binary cross-entropy on logits[B, A], in the max(x,0) - x p +
// log1p(exp(-|x|)) form. Targets must lie in [0, 1].
template <typename T>
Var<T> loss_detection(Var<T> logits, const LabelBatch& labels, Reduction reduction = Reduction::mean);

// Squared error between pred[B, A] in [0, 1] and intensities / 5.
template <typename T>
Var<T> loss_intensity(Var<T> pred, const LabelBatch& labels, Reduction reduction = Reduction::mean);

// x * 5 clamped to [0, 5].
template <typename T>
Tensor<T> denormalize_intensity(const Tensor<T>& pred);

}  // namespace maeface
