#pragma once

#include <cstddef>

#include "maeface/ndgrad/tensor.hpp"

namespace maeface {

// image[C, H, W] -> [N, p*p*C]. Patch r covers grid cell (r / g, r % g)
// with g = W / p; pixels are flattened row-major with channel fastest.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size);

// Inverse of patchify for a square image with `channels` channels.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t patch_size, std::size_t channels);

// Fixed 2-D sine-cosine table [N, D] for a sqrt(N) x sqrt(N) grid. The first
// D/2 columns encode the grid column, the last D/2 the grid row; each half is
// [sin(pos * w_k), cos(pos * w_k)] with w_k = 10000^(-k / (D/4)).
template <typename T>
Tensor<T> pos_embed_sincos(std::size_t num_patches, std::size_t width);

}  // namespace maeface
