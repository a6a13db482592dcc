// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace textrec {

/// Single-channel image, row-major, intensities in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f);

  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool empty() const { return width <= 0 || height <= 0; }
  /// Clamp every pixel into [0, 1].
  void clamp();
};

/// Bilinear sample at continuous pixel coordinates (pixel (i, j) sits at
/// x = i, y = j); outside the image the border is replicated.
float sample_bilinear(const GrayImage& image, double x, double y);

GrayImage resize_bilinear(const GrayImage& image, int width, int height);

/// 8-bit binary PGM (P5). Values are quantised as round(255 * v).
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes);
void write_pgm(const std::string& path, const GrayImage& image);
GrayImage read_pgm(const std::string& path);

}  // namespace textrec
