#include <algorithm>
#include <cmath>

#include "maeface/cli/cli.hpp"
#include "maeface/error.hpp"
#include "maeface/losses/losses.hpp"
#include "maeface/rng.hpp"
#include "maeface/train/dataset.hpp"
#include "maeface/vitmae/model.hpp"
#include "maeface/vitmae/patch.hpp"

namespace maeface {

namespace {

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

// Writes a [C, S, S] tensor into panel `k` of the RGB strip.
void blit(Image& strip, const Tensor<float>& t, std::size_t k) {
  const std::size_t c = t.dim(0), s = t.dim(1);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        strip.at(ch, y, k * s + x) = to_byte(t[((c == 1 ? 0 : ch) * s + y) * s + x]);
      }
    }
  }
}

}  // namespace

Triptych render_triptych(const ModelWeights<float>& weights, const Image& image, double mask_ratio, std::uint64_t seed) {
  const ModelConfig& mc = weights.config;
  if (mc.task != Task::pretrain) throw ConfigError("reconstruct needs a pre-training checkpoint (decoder present)");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw DomainError("mask ratio must lie in [0, 1)");
  const Tensor<float> original = prepare_image(image, mc);
  const std::size_t p = mc.patch_size, c = mc.channels, n = mc.num_patches(), s = mc.image_size;
  const Tensor<float> patches = patchify(original, p);
  auto rng = make_rng(seed, Stream::mask);
  Triptych t;
  t.plan = sample_mask(n, mask_ratio, rng);
  t.panel = s;

  Tensor<float> pred = reconstruct(weights, patches, t.plan);
  if (mc.norm_pix_target) pred = denormalize_patches(pred, patch_normalize(patches));
  const auto masked = t.plan.masked_flags();
  Tensor<float> left = patches, middle = patches;
  const std::size_t dim = mc.patch_dim();
  for (std::size_t r = 0; r < n; ++r) {
    if (!masked[r]) continue;
    for (std::size_t k = 0; k < dim; ++k) {
      left[r * dim + k] = float(kMaskGray) / 255.0f;
      middle[r * dim + k] = pred[r * dim + k];
    }
  }
  t.image = Image(3, s, 3 * s);
  blit(t.image, unpatchify(left, p, c), 0);
  blit(t.image, unpatchify(middle, p, c), 1);
  blit(t.image, original, 2);
  return t;
}

std::size_t count_gray_patches(const Triptych& t) {
  const std::size_t s = t.panel, g = t.plan.size() ? std::size_t(std::lround(std::sqrt(double(t.plan.size())))) : 0;
  if (g == 0) return 0;
  const std::size_t p = s / g;
  std::size_t count = 0;
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      bool gray = true;
      for (std::size_t y = gy * p; y < (gy + 1) * p && gray; ++y) {
        for (std::size_t x = gx * p; x < (gx + 1) * p && gray; ++x) {
          for (std::size_t ch = 0; ch < 3; ++ch) gray = gray && t.image.at(ch, y, x) == kMaskGray;
        }
      }
      count += gray;
    }
  }
  return count;
}

}  // namespace maeface
