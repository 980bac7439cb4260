#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "maeface/ndgrad/tensor.hpp"

namespace maeface {

// 8-bit image, interleaved (pixel-major, channel fastest) as stored in
// PGM/PPM.
struct Image {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

// Reads binary P5 (gray) or P6 (RGB) with maxval 255. Throws DataError
// naming the problem (unsupported magic, truncated payload, bad maxval).
Image read_image(const std::string& path);
// Parses an in-memory PGM/PPM file.
Image decode_pnm(const std::string& bytes, const std::string& origin = "<memory>");
std::string encode_pnm(const Image& image);
void write_image(const Image& image, const std::string& path);

// [C, H, W] with values in [0, 1].
Tensor<float> to_tensor(const Image& image);
// Rounds and clamps to 8 bits.
Image from_tensor(const Tensor<float>& t);

}  // namespace maeface
