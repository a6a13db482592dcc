// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "textrec/image.hpp"
#include "textrec/rng.hpp"

namespace textrec {

/// Continuous image coordinates: x in [0, W], y in [0, H]; pixel (i, j)
/// covers [i, i+1) x [j, j+1).
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

enum class DeformMode { kHorizontal, kCurved };

std::string mode_name(DeformMode mode);  // "ha" / "ca"
DeformMode parse_mode(const std::string& name);

/// 2(N+1) control points: the top edge for i = 0..N, then the bottom edge.
struct FiducialSpec {
  int n = 0;
  int width = 0;
  int height = 0;
  double pad = 0.0;     // W / (4N), the left padding of the canvas
  int pad_pixels = 0;   // ceil(pad): columns actually added
  std::vector<Point> points;

  int padded_width() const { return width + pad_pixels; }
};

FiducialSpec make_fiducials(int width, int height, int n);

/// Horizontal: (x + theta, y). Curved: (x + theta, y - theta). theta > 0
/// throws ContractError.
Point displace(Point p, double theta, DeformMode mode);

/// theta = mu - max(W/(8N), mu) * s for a given mu in [0, W/(4N)].
double theta_for(double mu, double width, int n, int s);

/// Draws mu uniformly from [0, W/(4N)] and returns theta_for(mu, ...).
/// s outside 1..6 throws RangeError.
double sample_theta(double width, int n, int s, Rng& rng);

/// f(p) = A [1, x, y]^T + sum_i w_i U(|p - c_i|), U(r) = r^2 log r^2.
struct TpsParams {
  Eigen::Matrix<double, 2, 3> affine = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Matrix<double, Eigen::Dynamic, 2> kernel;  // one row per control point
  std::vector<Point> controls;

  static TpsParams identity();
  Point map(Point p) const;
};

double tps_kernel(double r2);

/// Solves the interpolating spline sending src[i] to dst[i]. Fewer than
/// three points, mismatched counts or a singular system throw NumericError.
TpsParams tps_solve(const std::vector<Point>& src, const std::vector<Point>& dst);

/// Backward warp: output pixel centre (c + 0.5 - x_offset, r + 0.5) is sent
/// through `inverse` and sampled bilinearly from `image`, border replicated.
GrayImage tps_warp(const GrayImage& image, const TpsParams& inverse, int out_width,
                   int out_height, double x_offset = 0.0);

struct Deformation {
  FiducialSpec fiducials;
  std::vector<double> thetas;  // one per control point
  std::vector<Point> moved;
};

/// Per-point draws from `rng` (mu first, independent of s) and displacement.
Deformation sample_deformation(int width, int height, int n, int s, DeformMode mode, Rng& rng);

/// Deforms one image onto the left-padded canvas.
GrayImage deform_image(const GrayImage& image, const Deformation& deformation);

struct AugmentSpec {
  DeformMode mode = DeformMode::kHorizontal;
  int intensity = 1;
  int n_fiducial = 9;
  std::uint64_t seed = 0;
};

struct BuildError {
  std::string path;
  std::string message;
};

struct BuildReport {
  std::filesystem::path manifest;
  int written = 0;
  std::vector<BuildError> errors;
};

/// Warps every entry of `manifest_in` into `out_dir/images` and writes
/// `out_dir/manifest.tsv` with the labels unchanged. The per-image seed is
/// hash_seed(spec.seed, entry path), so a fixed seed gives byte-identical
/// output. Unreadable images are reported and skipped.
BuildReport build_dataset(const std::filesystem::path& manifest_in,
                          const std::filesystem::path& out_dir, const AugmentSpec& spec);

/// The twelve sets HA1..HA6 and CA1..CA6 under `out_root/<name>`.
std::vector<std::pair<std::string, BuildReport>> build_suite(
    const std::filesystem::path& manifest_in, const std::filesystem::path& out_root,
    int n_fiducial, std::uint64_t seed);

}  // namespace textrec
