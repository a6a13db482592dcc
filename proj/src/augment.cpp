// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#include "textrec/augment.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "textrec/errors.hpp"
#include "textrec/manifest.hpp"

namespace textrec {

namespace {

constexpr double kMaxCondition = 1e13;

}  // namespace

std::string mode_name(DeformMode mode) { return mode == DeformMode::kCurved ? "ca" : "ha"; }

DeformMode parse_mode(const std::string& name) {
  if (name == "ha") return DeformMode::kHorizontal;
  if (name == "ca") return DeformMode::kCurved;
  throw ConfigError("unknown deformation mode '" + name + "' (expected ha or ca)");
}

FiducialSpec make_fiducials(int width, int height, int n) {
  if (n <= 0) throw ConfigError("fiducial count N must be positive, got " + std::to_string(n));
  if (width <= 0 || height <= 0) {
    throw ConfigError("image size must be positive, got " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  FiducialSpec f;
  f.n = n;
  f.width = width;
  f.height = height;
  f.pad = static_cast<double>(width) / (4.0 * n);
  f.pad_pixels = static_cast<int>(std::ceil(f.pad));
  for (double h : {0.0, static_cast<double>(height)})
    for (int i = 0; i <= n; ++i) f.points.push_back({static_cast<double>(i) * width / n, h});
  return f;
}

Point displace(Point p, double theta, DeformMode mode) {
  if (theta > 0.0) throw ContractError("displacement must be non-positive, got " + std::to_string(theta));
  if (mode == DeformMode::kHorizontal) return {p.x + theta, p.y};
  return {p.x + theta, p.y - theta};
}

double theta_for(double mu, double width, int n, int s) {
  if (s < 1 || s > 6) throw RangeError("intensity must be in 1..6, got " + std::to_string(s));
  if (n <= 0) throw ConfigError("fiducial count N must be positive, got " + std::to_string(n));
  const double lambda = std::max(width / (8.0 * n), mu);
  return mu - lambda * s;
}

double sample_theta(double width, int n, int s, Rng& rng) {
  if (s < 1 || s > 6) throw RangeError("intensity must be in 1..6, got " + std::to_string(s));
  if (n <= 0) throw ConfigError("fiducial count N must be positive, got " + std::to_string(n));
  const double mu = rng.uniform(0.0, width / (4.0 * n));
  return theta_for(mu, width, n, s);
}

double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

TpsParams TpsParams::identity() {
  TpsParams t;
  t.affine << 0, 1, 0, 0, 0, 1;
  t.kernel.resize(0, 2);
  return t;
}

Point TpsParams::map(Point p) const {
  double x = affine(0, 0) + affine(0, 1) * p.x + affine(0, 2) * p.y;
  double y = affine(1, 0) + affine(1, 1) * p.x + affine(1, 2) * p.y;
  for (std::size_t i = 0; i < controls.size(); ++i) {
    const double dx = p.x - controls[i].x, dy = p.y - controls[i].y;
    const double u = tps_kernel(dx * dx + dy * dy);
    x += kernel(static_cast<Eigen::Index>(i), 0) * u;
    y += kernel(static_cast<Eigen::Index>(i), 1) * u;
  }
  return {x, y};
}

TpsParams tps_solve(const std::vector<Point>& src, const std::vector<Point>& dst) {
  if (src.size() != dst.size()) {
    throw NumericError("TPS point counts differ: " + std::to_string(src.size()) + " vs " +
                       std::to_string(dst.size()));
  }
  if (src.size() < 3) throw NumericError("TPS needs at least 3 control points");
  const Eigen::Index n = static_cast<Eigen::Index>(src.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 3, n + 3);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point& p = src[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      const Point& q = src[static_cast<std::size_t>(j)];
      const double dx = p.x - q.x, dy = p.y - q.y;
      a(i, j) = tps_kernel(dx * dx + dy * dy);
    }
    a(i, n) = a(n, i) = 1.0;
    a(i, n + 1) = a(n + 1, i) = p.x;
    a(i, n + 2) = a(n + 2, i) = p.y;
    rhs(i, 0) = dst[static_cast<std::size_t>(i)].x;
    rhs(i, 1) = dst[static_cast<std::size_t>(i)].y;
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  const double smallest = sv(sv.size() - 1);
  const double condition = smallest > 0.0 ? sv(0) / smallest : INFINITY;
  if (!(condition < kMaxCondition)) {
    std::ostringstream msg;
    msg << "TPS system is singular (condition number " << condition
        << "); control points are collinear or duplicated";
    throw NumericError(msg.str());
  }

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  Eigen::MatrixXd w = lu.solve(rhs);
  w += lu.solve(rhs - a * w);  // one refinement step

  TpsParams t;
  t.controls = src;
  t.kernel = w.topRows(n);
  t.affine.row(0) << w(n, 0), w(n + 1, 0), w(n + 2, 0);
  t.affine.row(1) << w(n, 1), w(n + 1, 1), w(n + 2, 1);
  return t;
}

GrayImage tps_warp(const GrayImage& image, const TpsParams& inverse, int out_width,
                   int out_height, double x_offset) {
  if (out_width <= 0 || out_height <= 0) {
    throw ConfigError("warp output size must be positive, got " + std::to_string(out_width) + "x" +
                      std::to_string(out_height));
  }
  if (image.empty()) throw ConfigError("cannot warp an empty image");
  GrayImage out(out_width, out_height);
  for (int r = 0; r < out_height; ++r)
    for (int c = 0; c < out_width; ++c) {
      const Point q = inverse.map({c + 0.5 - x_offset, r + 0.5});
      out.at(c, r) = sample_bilinear(image, q.x - 0.5, q.y - 0.5);
    }
  return out;
}

Deformation sample_deformation(int width, int height, int n, int s, DeformMode mode, Rng& rng) {
  Deformation d;
  d.fiducials = make_fiducials(width, height, n);
  for (const Point& p : d.fiducials.points) {
    const double theta = sample_theta(width, n, s, rng);
    d.thetas.push_back(theta);
    d.moved.push_back(displace(p, theta, mode));
  }
  return d;
}

GrayImage deform_image(const GrayImage& image, const Deformation& deformation) {
  const FiducialSpec& f = deformation.fiducials;
  // Solved from the moved points back to the originals for backward mapping.
  const TpsParams inverse = tps_solve(deformation.moved, f.points);
  return tps_warp(image, inverse, f.padded_width(), f.height, f.pad_pixels);
}

BuildReport build_dataset(const std::filesystem::path& manifest_in,
                          const std::filesystem::path& out_dir, const AugmentSpec& spec) {
  if (spec.intensity < 1 || spec.intensity > 6) {
    throw RangeError("intensity must be in 1..6, got " + std::to_string(spec.intensity));
  }
  if (spec.n_fiducial <= 0) {
    throw ConfigError("fiducial count N must be positive, got " + std::to_string(spec.n_fiducial));
  }
  const Manifest in = read_manifest(manifest_in);
  std::filesystem::create_directories(out_dir / "images");

  BuildReport report;
  report.manifest = out_dir / "manifest.tsv";
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < in.entries.size(); ++i) {
    const ManifestEntry& e = in.entries[i];
    try {
      const GrayImage image = read_pgm(in.resolve(e).string());
      Rng rng(hash_seed(spec.seed, e.path));
      const Deformation d = sample_deformation(image.width, image.height, spec.n_fiducial,
                                               spec.intensity, spec.mode, rng);
      char name[32];
      std::snprintf(name, sizeof(name), "%06zu.pgm", i);
      const std::string rel = std::string("images/") + name;
      write_pgm((out_dir / rel).string(), deform_image(image, d));
      out.push_back({rel, e.label});
      ++report.written;
    } catch (const IoError& err) {
      report.errors.push_back({e.path, err.what()});
    } catch (const NumericError& err) {
      report.errors.push_back({e.path, err.what()});
    }
  }
  write_manifest(report.manifest, out);
  return report;
}

std::vector<std::pair<std::string, BuildReport>> build_suite(
    const std::filesystem::path& manifest_in, const std::filesystem::path& out_root,
    int n_fiducial, std::uint64_t seed) {
  std::vector<std::pair<std::string, BuildReport>> sets;
  for (DeformMode mode : {DeformMode::kHorizontal, DeformMode::kCurved})
    for (int s = 1; s <= 6; ++s) {
      std::string name = mode == DeformMode::kCurved ? "CA" : "HA";
      name += std::to_string(s);
      sets.emplace_back(name, build_dataset(manifest_in, out_root / name,
                                            {mode, s, n_fiducial, seed}));
    }
  return sets;
}

}  // namespace textrec
