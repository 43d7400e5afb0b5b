/*=========================================================================
 *
 *  Copyright the geomatch authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         http://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/
#ifndef GEOMATCH_GEOMETRY_HPP
#define GEOMATCH_GEOMETRY_HPP

#include <functional>
#include <vector>

#include "geomatch/core.hpp"

namespace geomatch {

// ---------------------------------------------------------------------------
// Polygonal Lipschitz domains
// ---------------------------------------------------------------------------

/// Simple polygon, counter-clockwise. Every polygon is a Lipschitz domain;
/// corners are fine, cusps cannot occur.
struct LipschitzDomain {
  std::vector<Vec2> vertices;

  double area() const;            // signed shoelace area (positive when CCW)
  double perimeter() const;
  double diameter() const;        // bounding-box diagonal
  Vec2 centroid() const;
  bool is_ccw() const { return area() > 0.0; }
  bool is_simple() const;         // no self-intersection
  void validate() const;          // throws GeometryError
};

LipschitzDomain make_rectangle(Vec2 lo, Vec2 hi);
LipschitzDomain make_regular_polygon(Vec2 center, double radius, int sides, double phase = 0.0);

enum class PointLocation { Inside, Outside, Boundary };

/// Winding-number test; points within tol of an edge report Boundary.
PointLocation point_in_polygon(const LipschitzDomain& domain, Vec2 x, double tol = -1.0);

double distance_to_segment(Vec2 p, Vec2 a, Vec2 b);

// ---------------------------------------------------------------------------
// Jump curves
// ---------------------------------------------------------------------------

/// One oriented segment of a jump curve. The normal follows the
/// left-of-direction convention; f_plus is the trace on the +normal side.
/// plus_piece / minus_piece index the adjacent pieces when the curve was
/// assembled from a partition (-1 otherwise).
struct JumpSegment {
  Vec2 a, b;
  Vec2 normal;
  double f_plus = 0.0;
  double f_minus = 0.0;
  int plus_piece = -1;
  int minus_piece = -1;

  Vec2 midpoint() const { return (a + b) * 0.5; }
  double length() const { return norm(b - a); }
};

struct JumpCurve {
  std::vector<JumpSegment> segments;

  bool empty() const { return segments.empty(); }
  double total_length() const;
  /// Splits every segment into `parts` equal pieces (jump data copied).
  JumpCurve refined(int parts) const;
};

struct CurveQuadratureNode {
  Vec2 node;
  double weight;
  Vec2 normal;
};

std::vector<CurveQuadratureNode> curve_quadrature(const JumpCurve& curve);

// ---------------------------------------------------------------------------
// Intensity grids (globally extended Lipschitz samples)
// ---------------------------------------------------------------------------

/// (res+1)^2 lattice samples over [0,1]^2 with bilinear interpolation.
struct IntensityGrid {
  int res = 0;
  std::vector<double> values;  // (res+1)*(res+1), row-major, index i + (res+1)*j

  static IntensityGrid constant(int res, double c);
  static IntensityGrid from_function(int res, const std::function<double(Vec2)>& f);

  double& at(int i, int j) { return values[i + (res + 1) * j]; }
  double at(int i, int j) const { return values[i + (res + 1) * j]; }
  Vec2 lattice_point(int i, int j) const { return {double(i) / res, double(j) / res}; }

  double eval(Vec2 x) const;   // bilinear, clamped to [0,1]^2
  Vec2 grad_fd(Vec2 x) const;  // central differences of lattice values at nearest node
};

/// Per-lattice-node vector data (the absolutely continuous gradient part).
struct VectorGrid {
  int res = 0;
  std::vector<Vec2> values;

  Vec2 at(int i, int j) const { return values[i + (res + 1) * j]; }
  Vec2 eval(Vec2 x) const;
};

// ---------------------------------------------------------------------------
// Piecewise images on M = [0,1]^2
// ---------------------------------------------------------------------------

struct ProjectOptions {
  double tile_tol = 1e-9;       // |sum area - 1| tolerance
  double jump_tol = 1e-12;      // interfaces with |f+ - f-| below this are not jumps
  bool validate_tiling = true;  // disable for transported (approximate) partitions
  bool check_cell_claims = true;
};

/// Image in Im(M): partition into polygonal pieces, a globally extended
/// Lipschitz intensity grid per piece, and the assembled jump curve.
struct PiecewiseImage {
  std::vector<LipschitzDomain> pieces;
  std::vector<IntensityGrid> intensities;
  JumpCurve jump;
  int grid_resolution = 0;

  /// Index of the piece containing x (Boundary counts as membership,
  /// first match wins). Returns -1 when outside every piece.
  int piece_at(Vec2 x) const;
  double distance_to_jump(Vec2 x) const;

  /// Bilinear value of the containing piece. Throws OnJumpError within
  /// tol of the jump curve and OutsideDomainError off the partition.
  double eval(Vec2 x, double tol = -1.0) const;
  /// Non-throwing variant for quadrature loops: value of piece_at (or the
  /// nearest piece by boundary distance when none claims x).
  double eval_raw(Vec2 x) const;
};

PiecewiseImage project(std::vector<IntensityGrid> components,
                       std::vector<LipschitzDomain> partition, const ProjectOptions& opts = {});

/// Single-piece helper: the whole square with one grid.
PiecewiseImage single_piece_image(IntensityGrid grid);

struct SbvDerivative {
  std::vector<VectorGrid> gradients;  // one per piece, gradient of the extension
  std::vector<Vec2> jumps;            // (f+ - f-) * normal, one per jump segment
};

/// Decomposition of D f: absolutely continuous gradients per piece
/// plus the jump vector on each segment of the jump set.
SbvDerivative sbv_derivative(const PiecewiseImage& img);

}  // namespace geomatch

#endif
