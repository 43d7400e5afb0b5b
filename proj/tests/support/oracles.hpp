// Test-only oracles: finite differences, a scaling-and-squaring matrix
// exponential, random scene helpers. Independent of the implementation paths
// they check.
#ifndef GEOMATCH_TESTS_ORACLES_HPP
#define GEOMATCH_TESTS_ORACLES_HPP

#include <cmath>
#include <functional>
#include <random>

#include "geomatch/core.hpp"
#include "geomatch/geometry.hpp"
#include "geomatch/kernels.hpp"

namespace geomatch::testing {

inline double rel_err(double got, double want, double floor = 1e-12) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

/// 2x2 matrix exponential by scaling and squaring of the Taylor series.
inline Mat2 expm(Mat2 a) {
  int squarings = 0;
  while (a.frobenius() > 0.25) {
    a = a * 0.5;
    ++squarings;
  }
  Mat2 sum = Mat2::identity();
  Mat2 term = Mat2::identity();
  for (int k = 1; k <= 16; ++k) {
    term = term * a * (1.0 / k);
    sum += term;
  }
  for (int s = 0; s < squarings; ++s) sum = sum * sum;
  return sum;
}

inline Vec2 fd_gradient(const std::function<double(Vec2)>& f, Vec2 x, double h = 1e-5) {
  return {(f({x.x + h, x.y}) - f({x.x - h, x.y})) / (2 * h),
          (f({x.x, x.y + h}) - f({x.x, x.y - h})) / (2 * h)};
}

inline double fd_derivative(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

/// Random kernel field with nodes in the interior and bounded covectors.
inline ParticleField random_field(std::mt19937_64& rng, int nodes, double sigma, double scale,
                                  double cov_mag, Vec2 lo = {0.25, 0.25}, Vec2 hi = {0.75, 0.75}) {
  std::uniform_real_distribution<double> ux(lo.x, hi.x), uy(lo.y, hi.y);
  std::uniform_real_distribution<double> uc(-cov_mag, cov_mag);
  ParticleField f;
  f.spec.sigma = sigma;
  f.spec.scale = scale;
  f.spec.dimension = 2;
  for (int i = 0; i < nodes; ++i) {
    f.nodes.push_back({ux(rng), uy(rng)});
    f.covectors.push_back({uc(rng), uc(rng)});
  }
  return f;
}

inline ScalarParticleField random_scalar_field(std::mt19937_64& rng, int nodes, double sigma,
                                               double scale, double cov_mag) {
  std::uniform_real_distribution<double> uz(0.0, 1.0), uc(-cov_mag, cov_mag);
  ScalarParticleField f;
  f.spec.sigma = sigma;
  f.spec.scale = scale;
  f.spec.dimension = 1;
  for (int i = 0; i < nodes; ++i) {
    f.nodes.push_back(uz(rng));
    f.covectors.push_back(uc(rng));
  }
  return f;
}

/// Gaussian blob image (smooth, single piece).
inline IntensityGrid blob_grid(int res, Vec2 center, double width, double amp = 0.8,
                               double base = 0.1) {
  return IntensityGrid::from_function(res, [=](Vec2 p) {
    return base + amp * std::exp(-norm_sq(p - center) / (2 * width * width));
  });
}

/// Disk-in-square partition: a regular 64-gon piece plus four simple
/// complement pieces cut along the diagonals.
inline std::vector<LipschitzDomain> disk_partition(Vec2 center, double radius, int sides = 64) {
  std::vector<LipschitzDomain> parts;
  LipschitzDomain disk = make_regular_polygon(center, radius, sides, M_PI / 4.0);
  parts.push_back(disk);
  // quadrant pieces: square corners between consecutive diagonal contact
  // vertices, arc traversed clockwise (reversed)
  const int q = sides / 4;
  const Vec2 corners[4] = {{1, 1}, {0, 1}, {0, 0}, {1, 0}};
  for (int quad = 0; quad < 4; ++quad) {
    LipschitzDomain piece;
    const int k0 = quad * q;        // vertex at 45 + 90*quad degrees
    const int k1 = (quad + 1) * q;  // next diagonal vertex
    piece.vertices.push_back(disk.vertices[k0 % sides]);
    piece.vertices.push_back(corners[quad]);
    piece.vertices.push_back(corners[(quad + 1) % 4]);
    piece.vertices.push_back(disk.vertices[k1 % sides]);
    for (int k = k1 - 1; k > k0; --k) piece.vertices.push_back(disk.vertices[k % sides]);
    parts.push_back(piece);
  }
  return parts;
}

inline PiecewiseImage disk_image(int res, Vec2 center, double radius, double inside = 1.0,
                                 double outside = 0.0) {
  std::vector<LipschitzDomain> parts = disk_partition(center, radius);
  std::vector<IntensityGrid> grids;
  grids.push_back(IntensityGrid::constant(res, inside));
  for (int i = 0; i < 4; ++i) grids.push_back(IntensityGrid::constant(res, outside));
  return project(std::move(grids), std::move(parts));
}

/// 4-point tensor Lagrange interpolation on a cell-center grid (test-side
/// refinement of the comparison interpolant).
inline double cubic_cell(const std::vector<double>& v, int n, Vec2 x) {
  auto l = [](double t, int k) {
    static const double node[4] = {-1, 0, 1, 2};
    double p = 1;
    for (int j = 0; j < 4; ++j)
      if (j != k) p *= (t - node[j]) / (node[k] - node[j]);
    return p;
  };
  const double fx = x.x * n - 0.5, fy = x.y * n - 0.5;
  const int i0 = std::clamp(int(std::floor(fx)), 1, n - 3);
  const int j0 = std::clamp(int(std::floor(fy)), 1, n - 3);
  const double tx = fx - i0, ty = fy - j0;
  double acc = 0;
  for (int a = -1; a <= 2; ++a)
    for (int b = -1; b <= 2; ++b)
      acc += v[(i0 + a) + n * (j0 + b)] * l(tx, a + 1) * l(ty, b + 1);
  return acc;
}

}  // namespace geomatch::testing

#endif
