#include "maeface/train/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "maeface/data/geometry.hpp"
#include "maeface/error.hpp"
#include "maeface/rng.hpp"

namespace maeface {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * double(n)));
}

void check_image(const Tensor<float>& img) {
  if (img.rank() != 3 || img.numel() == 0) throw ShapeError("augment: expected a non-empty [C, H, W] image");
}

Tensor<float> clamp01(Tensor<float> t) {
  for (auto& x : t.storage()) x = std::clamp(x, 0.0f, 1.0f);
  return t;
}

}  // namespace

Tensor<float> crop_resize(const Tensor<float>& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  check_image(img);
  const std::size_t c = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (w == 0 || h == 0 || x0 + w > W || y0 + h > H) throw DomainError("crop_resize: rectangle outside the image");
  if (x0 == 0 && y0 == 0 && w == W && h == H) return img;
  Tensor<float> crop({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = img.raw() + (ch * H + y0 + y) * W + x0;
      std::copy(src, src + w, crop.raw() + (ch * h + y) * w);
    }
  }
  return resize_bilinear(crop, H, W);
}

Tensor<float> random_resized_crop(const Tensor<float>& img, double scale_min, std::mt19937_64& rng) {
  check_image(img);
  const std::size_t H = img.dim(1), W = img.dim(2);
  const double scale = uniform(rng, scale_min, 1.0);
  const double log_ratio = uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0));
  const double ratio = std::exp(log_ratio);
  const double area = scale * double(H * W);
  const std::size_t w = std::clamp<std::size_t>(std::size_t(std::lround(std::sqrt(area * ratio))), 1, W);
  const std::size_t h = std::clamp<std::size_t>(std::size_t(std::lround(std::sqrt(area / ratio))), 1, H);
  const std::size_t x0 = uniform_index(rng, W - w + 1);
  const std::size_t y0 = uniform_index(rng, H - h + 1);
  return crop_resize(img, x0, y0, w, h);
}

Tensor<float> apply_aug_op(const Tensor<float>& img, AugOp op, double magnitude, std::mt19937_64& rng) {
  check_image(img);
  const double s = std::clamp(magnitude / 10.0, 0.0, 1.0);
  const std::size_t H = img.dim(1), W = img.dim(2);
  // Every op draws the same number of values whatever the magnitude.
  const double u1 = uniform01(rng), u2 = uniform01(rng);
  switch (op) {
    case AugOp::hflip:
      return u1 < s ? hflip(img) : img;
    case AugOp::translate: {
      const double dx = std::round((2 * u1 - 1) * 0.1 * s * double(W));
      const double dy = std::round((2 * u2 - 1) * 0.1 * s * double(H));
      if (dx == 0 && dy == 0) return img;
      return translate(img, dx, dy);
    }
    case AugOp::rotate: {
      const double angle = (2 * u1 - 1) * s * 15.0 * std::numbers::pi / 180.0;
      return rotate_image(img, angle, Point{(double(W) - 1) / 2, (double(H) - 1) / 2});
    }
    case AugOp::brightness: {
      const float delta = float((2 * u1 - 1) * 0.25 * s);
      if (delta == 0.0f) return img;
      Tensor<float> out = img;
      for (auto& x : out.storage()) x += delta;
      return clamp01(std::move(out));
    }
    case AugOp::contrast: {
      const float factor = float(1.0 + (2 * u1 - 1) * 0.5 * s);
      if (factor == 1.0f) return img;
      const double mean = std::accumulate(img.storage().begin(), img.storage().end(), 0.0) / double(img.numel());
      Tensor<float> out = img;
      for (auto& x : out.storage()) x = float(mean + (double(x) - mean) * factor);
      return clamp01(std::move(out));
    }
    case AugOp::crop_resize: {
      const double scale = 1.0 - 0.3 * s * u1;
      const std::size_t side_w = std::clamp<std::size_t>(std::size_t(std::lround(std::sqrt(scale) * double(W))), 1, W);
      const std::size_t side_h = std::clamp<std::size_t>(std::size_t(std::lround(std::sqrt(scale) * double(H))), 1, H);
      const std::size_t x0 = std::size_t(std::floor(u2 * double(W - side_w + 1)));
      const std::size_t y0 = std::size_t(std::floor(uniform01(rng) * double(H - side_h + 1)));
      return crop_resize(img, std::min(x0, W - side_w), std::min(y0, H - side_h), side_w, side_h);
    }
  }
  return img;
}

Tensor<float> randaug_light(const Tensor<float>& img, double magnitude, double prob, std::mt19937_64& rng) {
  if (prob <= 0.0) return img;
  if (uniform01(rng) >= prob) return img;
  Tensor<float> out = img;
  for (int k = 0; k < 2; ++k) {
    const auto op = static_cast<AugOp>(uniform_index(rng, kNumAugOps));
    out = apply_aug_op(out, op, magnitude, rng);
  }
  return out;
}

namespace {

void check_batch(const std::vector<Tensor<float>>& images, const LabelBatch& labels,
                 const std::vector<std::size_t>& partner) {
  if (images.size() != labels.batch || partner.size() != images.size()) throw ShapeError("mix: batch sizes differ");
  for (const auto& im : images) {
    check_image(im);
    if (im.shape() != images[0].shape()) throw ShapeError("mix: images differ in shape");
  }
  for (auto p : partner) {
    if (p >= images.size()) throw ShapeError("mix: partner index out of range");
  }
}

// Partner weight passed separately so a counted fraction lands exactly.
void mix_labels(LabelBatch& labels, double own, double other, const std::vector<std::size_t>& partner) {
  const auto source = labels.target;
  const auto valid = labels.valid;
  for (std::size_t i = 0; i < labels.batch; ++i) {
    for (std::size_t a = 0; a < labels.aus; ++a) {
      const std::size_t k = i * labels.aus + a, j = partner[i] * labels.aus + a;
      labels.target[k] = own * source[k] + other * source[j];
      if (!valid.empty() && other > 0.0) labels.valid[k] = valid[k] && valid[j];
    }
  }
}

std::vector<std::size_t> random_partner(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
  return p;
}

}  // namespace

void mix_pairs(std::vector<Tensor<float>>& images, LabelBatch& labels, double lambda,
               const std::vector<std::size_t>& partner) {
  check_batch(images, labels, partner);
  if (lambda == 1.0) return;
  const auto source = images;
  const float l = float(lambda), r = float(1.0 - lambda);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& o = source[partner[i]];
    for (std::size_t k = 0; k < images[i].numel(); ++k) images[i][k] = l * source[i][k] + r * o[k];
  }
  mix_labels(labels, lambda, 1.0 - lambda, partner);
}

double paste_pairs(std::vector<Tensor<float>>& images, LabelBatch& labels, std::size_t x0, std::size_t y0, std::size_t x1,
                   std::size_t y1, const std::vector<std::size_t>& partner) {
  check_batch(images, labels, partner);
  if (images.empty()) return 0.0;
  const std::size_t c = images[0].dim(0), H = images[0].dim(1), W = images[0].dim(2);
  if (x1 > W || y1 > H || x0 > x1 || y0 > y1) throw DomainError("cutmix: box outside the image");
  const std::size_t pasted = (x1 - x0) * (y1 - y0);
  if (pasted == 0) return 0.0;
  const auto source = images;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& o = source[partner[i]];
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) images[i][(ch * H + y) * W + x] = o[(ch * H + y) * W + x];
      }
    }
  }
  const double frac = double(pasted) / double(H * W);
  mix_labels(labels, 1.0 - frac, frac, partner);
  return frac;
}

MixResult mixup(std::vector<Tensor<float>>& images, LabelBatch& labels, double alpha, std::mt19937_64& rng) {
  MixResult r;
  if (images.size() <= 1 || alpha <= 0.0) return r;
  r.lambda = sample_beta(rng, alpha);
  r.partner = random_partner(images.size(), rng);
  mix_pairs(images, labels, r.lambda, r.partner);
  return r;
}

MixResult cutmix(std::vector<Tensor<float>>& images, LabelBatch& labels, double alpha, std::mt19937_64& rng) {
  MixResult r;
  if (images.size() <= 1 || alpha <= 0.0) return r;
  const double lambda = sample_beta(rng, alpha);
  r.partner = random_partner(images.size(), rng);
  const std::size_t H = images[0].dim(1), W = images[0].dim(2);
  const double cut = std::sqrt(1.0 - lambda);
  const auto cw = std::size_t(std::lround(cut * double(W))), ch = std::size_t(std::lround(cut * double(H)));
  const auto cx = uniform_index(rng, W), cy = uniform_index(rng, H);
  const std::size_t x0 = cx > cw / 2 ? cx - cw / 2 : 0, y0 = cy > ch / 2 ? cy - ch / 2 : 0;
  const std::size_t x1 = std::min(W, cx + (cw - cw / 2)), y1 = std::min(H, cy + (ch - ch / 2));
  r.lambda = 1.0 - paste_pairs(images, labels, x0, y0, x1, y1, r.partner);
  return r;
}

}  // namespace maeface
