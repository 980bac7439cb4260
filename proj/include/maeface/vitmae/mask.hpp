#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace maeface {

// Random split of patch indices: permutation[0, num_visible) is fed to the
// encoder, the remainder is masked.
struct MaskPlan {
  std::vector<std::size_t> permutation;
  std::size_t num_visible = 0;

  std::size_t size() const { return permutation.size(); }
  std::size_t num_masked() const { return permutation.size() - num_visible; }
  std::span<const std::size_t> visible() const { return std::span(permutation).first(num_visible); }
  std::span<const std::size_t> masked() const { return std::span(permutation).subspan(num_visible); }
  // Per-patch flag in original order.
  std::vector<char> masked_flags() const;

  // Plan that keeps every patch, in order.
  static MaskPlan identity(std::size_t num_patches);
};

std::size_t visible_count(std::size_t num_patches, double mask_ratio);

// Fisher-Yates shuffle driven by `rng`; throws DomainError for ratios
// outside [0, 1).
MaskPlan sample_mask(std::size_t num_patches, double mask_ratio, std::mt19937_64& rng);

}  // namespace maeface
