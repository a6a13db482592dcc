// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "textrec/errors.hpp"

namespace textrec {

GrayImage::GrayImage(int w, int h, float fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw DimensionError("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(w) * h, fill);
}

void GrayImage::clamp() {
  for (float& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
}

float sample_bilinear(const GrayImage& image, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(image.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(image.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  if (fx == 0.0 && fy == 0.0) return image.at(x0, y0);
  const double top = (1.0 - fx) * image.at(x0, y0) + fx * image.at(x1, y0);
  const double bottom = (1.0 - fx) * image.at(x0, y1) + fx * image.at(x1, y1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

GrayImage resize_bilinear(const GrayImage& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  GrayImage out(width, height);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.at(x, y) = sample_bilinear(image, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + image.pixels.size());
  for (float p : image.pixels) {
    const float v = std::clamp(p, 0.0f, 1.0f);
    bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
  }
  return bytes;
}

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError("malformed PGM header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1 << 20) throw IoError("PGM dimension too large");
    }
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw IoError("not a binary PGM (P5)");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (w <= 0 || h <= 0) throw IoError("PGM has empty dimensions");
  if (maxval <= 0 || maxval > 255) throw IoError("only 8-bit PGM is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("malformed PGM header");
  ++pos;
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos < count) throw IoError("truncated PGM payload");
  GrayImage image(w, h);
  for (std::size_t i = 0; i < count; ++i)
    image.pixels[i] = static_cast<float>(bytes[pos + i]) / static_cast<float>(maxval);
  return image;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  const auto bytes = encode_pgm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

}  // namespace textrec
