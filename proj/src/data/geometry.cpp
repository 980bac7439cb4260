#include "maeface/data/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "maeface/error.hpp"

namespace maeface {

float sample_bilinear(const Tensor<float>& img, std::size_t c, double x, double y) {
  const auto h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  const float* base = img.raw() + c * static_cast<std::size_t>(h * w);
  auto px = [&](long yy, long xx) -> double {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
    return base[yy * w + xx];
  };
  const double top = px(y0, x0) * (1 - ax) + (ax > 0 ? px(y0, x0 + 1) * ax : 0.0);
  const double bot = ay > 0 ? px(y0 + 1, x0) * (1 - ax) + (ax > 0 ? px(y0 + 1, x0 + 1) * ax : 0.0) : 0.0;
  return static_cast<float>(top * (1 - ay) + bot * ay);
}

Point rotate_point(Point p, double angle, Point center) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double dx = p.x - center.x, dy = p.y - center.y;
  return {center.x + c * dx - s * dy, center.y + s * dx + c * dy};
}

Tensor<float> rotate_image(const Tensor<float>& img, double angle, Point center) {
  if (img.rank() != 3) throw ShapeError("rotate_image: expected [C,H,W]");
  if (angle == 0.0) return img;
  Tensor<float> out(img.shape());
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map: the output pixel came from rotating the source by angle.
      const Point src = rotate_point({double(x), double(y)}, -angle, center);
      for (std::size_t c = 0; c < ch; ++c) out[(c * h + y) * w + x] = sample_bilinear(img, c, src.x, src.y);
    }
  }
  return out;
}

AlignResult align_face(const Image& image, Point left_eye, Point right_eye, const std::vector<Point>& landmarks) {
  const double dx = right_eye.x - left_eye.x, dy = right_eye.y - left_eye.y;
  if (dx == 0.0 && dy == 0.0) throw DomainError("align_face: eye points coincide");
  AlignResult r;
  r.angle = -std::atan2(dy, dx);
  const Point mid{(left_eye.x + right_eye.x) / 2, (left_eye.y + right_eye.y) / 2};
  for (const auto& p : landmarks) r.landmarks.push_back(rotate_point(p, r.angle, mid));
  if (r.angle == 0.0) {
    r.image = image;
    return r;
  }
  r.image = from_tensor(rotate_image(to_tensor(image), r.angle, mid));
  return r;
}

BBox square_region(BBox box, double margin) {
  if (box.w <= 0 || box.h <= 0) throw DomainError("crop_square: empty bounding box");
  if (margin < 0) throw DomainError("crop_square: negative margin");
  const int side = static_cast<int>(std::lround(std::max(box.w, box.h) * (1.0 + margin)));
  // Odd leftovers go to the right/bottom.
  const int x0 = box.x - (side - box.w) / 2;
  const int y0 = box.y - (side - box.h) / 2;
  return {x0, y0, side, side};
}

Image crop_square(const Image& image, BBox box, double margin) {
  const BBox sq = square_region(box, margin);
  Image out(image.channels, static_cast<std::size_t>(sq.h), static_cast<std::size_t>(sq.w));
  for (int y = 0; y < sq.h; ++y) {
    const int sy = sq.y + y;
    if (sy < 0 || sy >= static_cast<int>(image.height)) continue;
    for (int x = 0; x < sq.w; ++x) {
      const int sx = sq.x + x;
      if (sx < 0 || sx >= static_cast<int>(image.width)) continue;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            image.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  }
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t th, std::size_t tw) {
  if (th < 1 || tw < 1) throw DomainError("resize_bilinear: target size must be at least 1");
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (th == h && tw == w) return img;
  Tensor<float> out(Shape{ch, th, tw});
  const double sy = double(h) / double(th), sx = double(w) / double(tw);
  for (std::size_t y = 0; y < th; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - double(y0);
    for (std::size_t x = 0; x < tw; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - double(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        const float* p = img.raw() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - ax) + p[y0 * w + x1] * ax;
        const double bot = p[y1 * w + x0] * (1 - ax) + p[y1 * w + x1] * ax;
        out[(c * th + y) * tw + x] = static_cast<float>(top * (1 - ay) + bot * ay);
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t target) {
  if (target < 1) throw DomainError("resize_bilinear: target size must be at least 1");
  if (image.height == target && image.width == target) return image;
  return from_tensor(resize_bilinear(to_tensor(image), target, target));
}

Tensor<float> hflip(const Tensor<float>& img) {
  Tensor<float> out(img.shape());
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = img[(c * h + y) * w + (w - 1 - x)];
    }
  }
  return out;
}

Tensor<float> translate(const Tensor<float>& img, double dx, double dy) {
  if (dx == 0.0 && dy == 0.0) return img;
  Tensor<float> out(img.shape());
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = sample_bilinear(img, c, double(x) - dx, double(y) - dy);
    }
  }
  return out;
}

}  // namespace maeface
