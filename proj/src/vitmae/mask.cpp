#include "maeface/vitmae/mask.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "maeface/error.hpp"

namespace maeface {

std::vector<char> MaskPlan::masked_flags() const {
  std::vector<char> flags(permutation.size(), 0);
  for (std::size_t i : masked()) flags[i] = 1;
  return flags;
}

MaskPlan MaskPlan::identity(std::size_t num_patches) {
  MaskPlan plan;
  plan.permutation.resize(num_patches);
  std::iota(plan.permutation.begin(), plan.permutation.end(), std::size_t{0});
  plan.num_visible = num_patches;
  return plan;
}

std::size_t visible_count(std::size_t num_patches, double mask_ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(num_patches) * (1.0 - mask_ratio)));
}

MaskPlan sample_mask(std::size_t num_patches, double mask_ratio, std::mt19937_64& rng) {
  if (num_patches == 0) throw DomainError("sample_mask: need at least one patch");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw DomainError("sample_mask: mask ratio " + std::to_string(mask_ratio) + " outside [0, 1)");
  }
  MaskPlan plan = MaskPlan::identity(num_patches);
  for (std::size_t i = num_patches - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(plan.permutation[i], plan.permutation[pick(rng)]);
  }
  plan.num_visible = visible_count(num_patches, mask_ratio);
  return plan;
}

}  // namespace maeface
