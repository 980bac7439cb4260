#pragma once

#include <array>
#include <optional>
#include <vector>

#include "maeface/data/image.hpp"

namespace maeface {

// Image coordinates: x to the right, y down, pixel (i, j) centered at
// (x = j, y = i).
struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const BBox&) const = default;
};

// Bilinear sample of channel c at a continuous position; neighbours outside
// the frame read as 0.
float sample_bilinear(const Tensor<float>& img, std::size_t c, double x, double y);

// Rotates content by `angle` radians about `center`: a point p moves to
// center + R(angle) (p - center), R = [[cos, -sin], [sin, cos]] in image
// axes. With y pointing down a positive angle turns clockwise on screen.
// Uncovered pixels are black.
Tensor<float> rotate_image(const Tensor<float>& img, double angle, Point center);
Point rotate_point(Point p, double angle, Point center);

struct AlignResult {
  Image image;
  double angle = 0;  // applied rotation, radians
  std::vector<Point> landmarks;
};

// Levels the eye line by rotating about the eye midpoint by
// -atan2(dy, dx). `landmarks` are carried through the same rotation. An
// already level pair returns the input unchanged. Throws DomainError for
// coincident eyes.
AlignResult align_face(const Image& image, Point left_eye, Point right_eye, const std::vector<Point>& landmarks = {});

// Square crop around a bbox: the shorter side is expanded symmetrically to
// the longer one (after growing both by `margin` x side), the square is
// intersected with the frame and the rest is zero padding.
Image crop_square(const Image& image, BBox box, double margin = 0.0);
BBox square_region(BBox box, double margin = 0.0);

// Half-pixel-center bilinear resize to target x target (edges clamp).
Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t target_h, std::size_t target_w);
Image resize_bilinear(const Image& image, std::size_t target);

Tensor<float> hflip(const Tensor<float>& img);
// Shifts content by (dx, dy) pixels with bilinear resampling, black fill.
Tensor<float> translate(const Tensor<float>& img, double dx, double dy);

}  // namespace maeface
