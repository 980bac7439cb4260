#include "maeface/vitmae/patch.hpp"

#include <cmath>
#include <string>

namespace maeface {

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p) {
  if (image.rank() != 3) throw ShapeError("patchify: expected [C,H,W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (p == 0 || h != w || h % p != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) + " is not a square divisible by patch " +
                     std::to_string(p));
  }
  const std::size_t g = w / p;
  Tensor<T> out(Shape{g * g, p * p * c});
  T* o = out.raw();
  const T* src = image.raw();
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            *o++ = src[(ch * h + gy * p + y) * w + gx * p + x];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t p, std::size_t c) {
  if (patches.rank() != 2 || p == 0 || c == 0 || patches.dim(1) != p * p * c) {
    throw ShapeError("unpatchify: patches " + shape_str(patches.shape()) + " do not match patch " + std::to_string(p) +
                     " with " + std::to_string(c) + " channels");
  }
  const std::size_t n = patches.dim(0);
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) throw ShapeError("unpatchify: patch count " + std::to_string(n) + " is not a perfect square");
  const std::size_t s = g * p;
  Tensor<T> img(Shape{c, s, s});
  const T* in = patches.raw();
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) img[(ch * s + gy * p + y) * s + gx * p + x] = *in++;
        }
      }
    }
  }
  return img;
}

template <typename T>
Tensor<T> pos_embed_sincos(std::size_t n, std::size_t d) {
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (n == 0 || g * g != n) throw ShapeError("pos_embed_sincos: patch count " + std::to_string(n) + " is not a perfect square");
  if (d == 0 || d % 4 != 0) throw ShapeError("pos_embed_sincos: width " + std::to_string(d) + " is not divisible by 4");
  const std::size_t quarter = d / 4;
  Tensor<T> table(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const double coords[2] = {static_cast<double>(r % g), static_cast<double>(r / g)};
    for (std::size_t half = 0; half < 2; ++half) {
      for (std::size_t k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
        const double angle = coords[half] * omega;
        table[r * d + half * 2 * quarter + k] = static_cast<T>(std::sin(angle));
        table[r * d + half * 2 * quarter + quarter + k] = static_cast<T>(std::cos(angle));
      }
    }
  }
  return table;
}

template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template Tensor<float> unpatchify(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> unpatchify(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> pos_embed_sincos<float>(std::size_t, std::size_t);
template Tensor<double> pos_embed_sincos<double>(std::size_t, std::size_t);

}  // namespace maeface
