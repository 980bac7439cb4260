#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "maeface/losses/losses.hpp"
#include "maeface/ndgrad/tensor.hpp"

namespace maeface {

// Images are [C, H, W] tensors in [0, 1]. Every function draws only from
// the generator it is given.

// Crop of `scale` in [scale_min, 1] of the area with log-uniform aspect in
// [3/4, 4/3], resized back to H x W.
Tensor<float> random_resized_crop(const Tensor<float>& img, double scale_min, std::mt19937_64& rng);

// Crop of the rectangle [x0, x0 + w) x [y0, y0 + h) resized to H x W.
Tensor<float> crop_resize(const Tensor<float>& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

enum class AugOp { hflip, translate, rotate, brightness, contrast, crop_resize };
inline constexpr std::size_t kNumAugOps = 6;

// One op at strength s = magnitude / 10: flips with probability s, shifts up
// to 10% of the side, rotates up to 15 deg, brightness +-0.25, contrast
// x(1 +- 0.5), crops down to 1 - 0.3 of the area, each scaled by s.
Tensor<float> apply_aug_op(const Tensor<float>& img, AugOp op, double magnitude, std::mt19937_64& rng);

// With probability prob, two ops drawn with replacement from the six.
Tensor<float> randaug_light(const Tensor<float>& img, double magnitude, double prob, std::mt19937_64& rng);

struct MixResult {
  double lambda = 1.0;  // weight of each sample's own labels
  std::vector<std::size_t> partner;
};

// x_i <- lambda x_i + (1 - lambda) x_partner[i], labels mixed alike.
void mix_pairs(std::vector<Tensor<float>>& images, LabelBatch& labels, double lambda,
               const std::vector<std::size_t>& partner);

// Pastes [x0, x1) x [y0, y1) from each partner; labels take the pasted
// pixel fraction. Returns that fraction.
double paste_pairs(std::vector<Tensor<float>>& images, LabelBatch& labels, std::size_t x0, std::size_t y0, std::size_t x1,
                   std::size_t y1, const std::vector<std::size_t>& partner);

// lambda ~ Beta(alpha, alpha), partner a random permutation. A batch of one
// is returned unchanged.
MixResult mixup(std::vector<Tensor<float>>& images, LabelBatch& labels, double alpha, std::mt19937_64& rng);
// Box of area ratio about 1 - lambda, clipped at the border; the returned
// lambda is 1 minus the realized pasted fraction.
MixResult cutmix(std::vector<Tensor<float>>& images, LabelBatch& labels, double alpha, std::mt19937_64& rng);

}  // namespace maeface
