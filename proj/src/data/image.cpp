#include "maeface/data/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "maeface/error.hpp"

namespace maeface {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& s, std::size_t& pos, const std::string& origin) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (start == pos) throw DataError(origin + ": truncated header");
  return s.substr(start, pos - start);
}

std::size_t header_number(const std::string& s, std::size_t& pos, const std::string& origin, const char* what) {
  const std::string tok = header_token(s, pos, origin);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
      tok.size() > 9) {
    throw DataError(origin + ": invalid " + what + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

Image decode_pnm(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2) throw DataError(origin + ": empty or truncated file");
  const std::string magic = bytes.substr(0, 2);
  if (magic != "P5" && magic != "P6") {
    throw DataError(origin + ": unsupported image format '" + magic + "', expected binary PGM 'P5' or PPM 'P6'");
  }
  std::size_t pos = 2;
  Image img;
  img.channels = magic == "P5" ? 1 : 3;
  img.width = header_number(bytes, pos, origin, "width");
  img.height = header_number(bytes, pos, origin, "height");
  const std::size_t maxval = header_number(bytes, pos, origin, "maxval");
  if (maxval != 255) throw DataError(origin + ": maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (img.width == 0 || img.height == 0) throw DataError(origin + ": zero image extent");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw DataError(origin + ": truncated header");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t need = img.channels * img.width * img.height;
  if (bytes.size() - pos < need) {
    throw DataError(origin + ": truncated payload (" + std::to_string(bytes.size() - pos) + " of " + std::to_string(need) +
                    " bytes)");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_pnm(ss.str(), path);
}

std::string encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DataError("encode_pnm: channels must be 1 or 3");
  if (image.pixels.size() != image.channels * image.height * image.width) throw DataError("encode_pnm: pixel count mismatch");
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

void write_image(const Image& image, const std::string& path) {
  const std::string bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write to '" + path + "' failed");
}

Tensor<float> to_tensor(const Image& image) {
  Tensor<float> t(Shape{image.channels, image.height, image.width});
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        t[(c * image.height + y) * image.width + x] = float(image.at(c, y, x)) / 255.0f;
      }
    }
  }
  return t;
}

Image from_tensor(const Tensor<float>& t) {
  if (t.rank() != 3) throw ShapeError("from_tensor: expected [C,H,W], got " + shape_str(t.shape()));
  Image img(t.dim(0), t.dim(1), t.dim(2));
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        const float v = t[(c * img.height + y) * img.width + x];
        img.at(c, y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  return img;
}

}  // namespace maeface
