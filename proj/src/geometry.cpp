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
#include "geomatch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace geomatch {

// ---------------------------------------------------------------------------
// LipschitzDomain
// ---------------------------------------------------------------------------

double LipschitzDomain::area() const {
  double s = 0.0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) s += cross(vertices[i], vertices[(i + 1) % n]);
  return 0.5 * s;
}

double LipschitzDomain::perimeter() const {
  double s = 0.0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) s += norm(vertices[(i + 1) % n] - vertices[i]);
  return s;
}

double LipschitzDomain::diameter() const {
  double lox = std::numeric_limits<double>::max(), loy = lox;
  double hix = std::numeric_limits<double>::lowest(), hiy = hix;
  for (const Vec2& v : vertices) {
    lox = std::min(lox, v.x);
    loy = std::min(loy, v.y);
    hix = std::max(hix, v.x);
    hiy = std::max(hiy, v.y);
  }
  return norm(Vec2{hix - lox, hiy - loy});
}

Vec2 LipschitzDomain::centroid() const {
  Vec2 c{0, 0};
  double a = 0.0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 p = vertices[i], q = vertices[(i + 1) % n];
    const double w = cross(p, q);
    c += (p + q) * w;
    a += w;
  }
  return c / (3.0 * a);
}

namespace {

bool segments_properly_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const double d1 = cross(b - a, c - a);
  const double d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c);
  const double d4 = cross(d - c, b - c);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

}  // namespace

bool LipschitzDomain::is_simple() const {
  const std::size_t n = vertices.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = vertices[i], b = vertices[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;  // adjacent edges share a vertex
      const Vec2 c = vertices[j], d = vertices[(j + 1) % n];
      if (segments_properly_intersect(a, b, c, d)) return false;
    }
  }
  return true;
}

void LipschitzDomain::validate() const {
  if (vertices.size() < 3) throw GeometryError("polygon needs at least 3 vertices");
  if (!is_simple()) throw GeometryError("polygon is not simple");
  if (!(area() > 0.0)) throw GeometryError("polygon must be counter-clockwise with positive area");
}

LipschitzDomain make_rectangle(Vec2 lo, Vec2 hi) {
  return LipschitzDomain{{lo, {hi.x, lo.y}, hi, {lo.x, hi.y}}};
}

LipschitzDomain make_regular_polygon(Vec2 center, double radius, int sides, double phase) {
  LipschitzDomain d;
  d.vertices.reserve(sides);
  for (int i = 0; i < sides; ++i) {
    const double th = phase + 2.0 * M_PI * i / sides;
    d.vertices.push_back(center + Vec2{radius * std::cos(th), radius * std::sin(th)});
  }
  return d;
}

double distance_to_segment(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = norm_sq(ab);
  if (len2 == 0.0) return norm(p - a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return norm(p - (a + ab * t));
}

PointLocation point_in_polygon(const LipschitzDomain& domain, Vec2 x, double tol) {
  if (tol < 0.0) tol = 1e-12 * std::max(1.0, domain.diameter());
  const std::size_t n = domain.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (distance_to_segment(x, domain.vertices[i], domain.vertices[(i + 1) % n]) <= tol)
      return PointLocation::Boundary;
  }
  int winding = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = domain.vertices[i], b = domain.vertices[(i + 1) % n];
    if (a.y <= x.y) {
      if (b.y > x.y && cross(b - a, x - a) > 0) ++winding;
    } else {
      if (b.y <= x.y && cross(b - a, x - a) < 0) --winding;
    }
  }
  return winding != 0 ? PointLocation::Inside : PointLocation::Outside;
}

// ---------------------------------------------------------------------------
// JumpCurve
// ---------------------------------------------------------------------------

double JumpCurve::total_length() const {
  double s = 0.0;
  for (const auto& seg : segments) s += seg.length();
  return s;
}

JumpCurve JumpCurve::refined(int parts) const {
  JumpCurve out;
  out.segments.reserve(segments.size() * parts);
  for (const auto& seg : segments) {
    for (int k = 0; k < parts; ++k) {
      JumpSegment s = seg;
      const double t0 = double(k) / parts, t1 = double(k + 1) / parts;
      s.a = seg.a + (seg.b - seg.a) * t0;
      s.b = seg.a + (seg.b - seg.a) * t1;
      out.segments.push_back(s);
    }
  }
  return out;
}

std::vector<CurveQuadratureNode> curve_quadrature(const JumpCurve& curve) {
  std::vector<CurveQuadratureNode> out;
  out.reserve(curve.segments.size());
  for (const auto& seg : curve.segments) out.push_back({seg.midpoint(), seg.length(), seg.normal});
  return out;
}

// ---------------------------------------------------------------------------
// IntensityGrid
// ---------------------------------------------------------------------------

IntensityGrid IntensityGrid::constant(int res, double c) {
  IntensityGrid g;
  g.res = res;
  g.values.assign(std::size_t(res + 1) * (res + 1), c);
  return g;
}

IntensityGrid IntensityGrid::from_function(int res, const std::function<double(Vec2)>& f) {
  IntensityGrid g;
  g.res = res;
  g.values.resize(std::size_t(res + 1) * (res + 1));
  for (int j = 0; j <= res; ++j)
    for (int i = 0; i <= res; ++i) g.at(i, j) = f(g.lattice_point(i, j));
  return g;
}

double IntensityGrid::eval(Vec2 x) const {
  const double fx = std::clamp(x.x, 0.0, 1.0) * res;
  const double fy = std::clamp(x.y, 0.0, 1.0) * res;
  const int i0 = std::min(res - 1, int(fx));
  const int j0 = std::min(res - 1, int(fy));
  const double tx = fx - i0, ty = fy - j0;
  return (1 - tx) * (1 - ty) * at(i0, j0) + tx * (1 - ty) * at(i0 + 1, j0) +
         (1 - tx) * ty * at(i0, j0 + 1) + tx * ty * at(i0 + 1, j0 + 1);
}

Vec2 IntensityGrid::grad_fd(Vec2 x) const {
  const double h = 1.0 / res;
  const int i = std::clamp(int(std::lround(x.x * res)), 0, res);
  const int j = std::clamp(int(std::lround(x.y * res)), 0, res);
  auto dx = [&]() {
    if (i == 0) return (-3 * at(0, j) + 4 * at(1, j) - at(2, j)) / (2 * h);
    if (i == res) return (3 * at(res, j) - 4 * at(res - 1, j) + at(res - 2, j)) / (2 * h);
    return (at(i + 1, j) - at(i - 1, j)) / (2 * h);
  };
  auto dy = [&]() {
    if (j == 0) return (-3 * at(i, 0) + 4 * at(i, 1) - at(i, 2)) / (2 * h);
    if (j == res) return (3 * at(i, res) - 4 * at(i, res - 1) + at(i, res - 2)) / (2 * h);
    return (at(i, j + 1) - at(i, j - 1)) / (2 * h);
  };
  return {dx(), dy()};
}

Vec2 VectorGrid::eval(Vec2 x) const {
  const double fx = std::clamp(x.x, 0.0, 1.0) * res;
  const double fy = std::clamp(x.y, 0.0, 1.0) * res;
  const int i0 = std::min(res - 1, int(fx));
  const int j0 = std::min(res - 1, int(fy));
  const double tx = fx - i0, ty = fy - j0;
  return at(i0, j0) * ((1 - tx) * (1 - ty)) + at(i0 + 1, j0) * (tx * (1 - ty)) +
         at(i0, j0 + 1) * ((1 - tx) * ty) + at(i0 + 1, j0 + 1) * (tx * ty);
}

// ---------------------------------------------------------------------------
// PiecewiseImage
// ---------------------------------------------------------------------------

int PiecewiseImage::piece_at(Vec2 x) const {
  int boundary_hit = -1;
  for (std::size_t p = 0; p < pieces.size(); ++p) {
    const PointLocation loc = point_in_polygon(pieces[p], x);
    if (loc == PointLocation::Inside) return int(p);
    if (loc == PointLocation::Boundary && boundary_hit < 0) boundary_hit = int(p);
  }
  return boundary_hit;
}

double PiecewiseImage::distance_to_jump(Vec2 x) const {
  double d = std::numeric_limits<double>::max();
  for (const auto& seg : jump.segments) d = std::min(d, distance_to_segment(x, seg.a, seg.b));
  return d;
}

double PiecewiseImage::eval(Vec2 x, double tol) const {
  if (tol < 0.0) tol = 1e-12 * std::sqrt(2.0);  // 1e-12 x diam(M)
  if (!jump.empty() && distance_to_jump(x) <= tol) throw OnJumpError("point lies on the jump curve");
  const int p = piece_at(x);
  if (p < 0) throw OutsideDomainError("point outside the partition");
  return intensities[p].eval(x);
}

double PiecewiseImage::eval_raw(Vec2 x) const {
  const int p = piece_at(x);
  if (p >= 0) return intensities[p].eval(x);
  // fall back to the nearest piece by boundary distance
  double best = std::numeric_limits<double>::max();
  int arg = 0;
  for (std::size_t q = 0; q < pieces.size(); ++q) {
    const auto& vs = pieces[q].vertices;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const double d = distance_to_segment(x, vs[i], vs[(i + 1) % vs.size()]);
      if (d < best) {
        best = d;
        arg = int(q);
      }
    }
  }
  return intensities[arg].eval(x);
}

namespace {

bool same_point(Vec2 a, Vec2 b, double tol) { return norm(a - b) <= tol; }

}  // namespace

PiecewiseImage project(std::vector<IntensityGrid> components,
                       std::vector<LipschitzDomain> partition, const ProjectOptions& opts) {
  if (components.size() != partition.size())
    throw GeometryError("project: one intensity grid per piece required");
  if (partition.empty()) throw GeometryError("project: empty partition");
  int res = components.front().res;
  for (const auto& g : components)
    if (g.res != res) throw GeometryError("project: grids must share a resolution");
  for (const auto& p : partition) p.validate();

  PiecewiseImage img;
  img.grid_resolution = res;

  if (opts.validate_tiling) {
    double total = 0.0;
    for (const auto& p : partition) total += p.area();
    if (std::abs(total - 1.0) > opts.tile_tol)
      throw PartitionGapError("pieces do not tile the unit square: area sum " +
                              std::to_string(total));
    if (opts.check_cell_claims) {
      const CellGrid probe{std::max(8, res)};
      for (int f = 0; f < probe.size(); ++f) {
        const Vec2 x = probe.node(f);
        int claims = 0;
        bool on_boundary = false;
        for (const auto& p : partition) {
          const PointLocation loc = point_in_polygon(p, x);
          if (loc == PointLocation::Inside) ++claims;
          if (loc == PointLocation::Boundary) on_boundary = true;
        }
        if (claims > 1) throw PartitionGapError("pieces overlap");
        if (claims == 0 && !on_boundary) throw PartitionGapError("partition leaves a gap");
      }
    }
  }

  // Interfaces: directed edges shared (reversed) between two pieces become
  // jump segments; the edge owner is the lower-indexed piece and its CCW
  // direction fixes the left-of-direction normal, so f_plus is its trace.
  const double vertex_tol = 1e-12;
  for (std::size_t pi = 0; pi < partition.size(); ++pi) {
    const auto& vi = partition[pi].vertices;
    for (std::size_t e = 0; e < vi.size(); ++e) {
      const Vec2 a = vi[e], b = vi[(e + 1) % vi.size()];
      for (std::size_t pj = pi + 1; pj < partition.size(); ++pj) {
        const auto& vj = partition[pj].vertices;
        for (std::size_t f = 0; f < vj.size(); ++f) {
          const Vec2 c = vj[f], d = vj[(f + 1) % vj.size()];
          if (same_point(a, d, vertex_tol) && same_point(b, c, vertex_tol)) {
            JumpSegment seg;
            seg.a = a;
            seg.b = b;
            const Vec2 dir = (b - a) / norm(b - a);
            seg.normal = perp_left(dir);  // points into piece pi (interior on the left)
            const Vec2 mid = seg.midpoint();
            seg.f_plus = components[pi].eval(mid);
            seg.f_minus = components[pj].eval(mid);
            seg.plus_piece = int(pi);
            seg.minus_piece = int(pj);
            if (std::abs(seg.f_plus - seg.f_minus) > opts.jump_tol) img.jump.segments.push_back(seg);
          }
        }
      }
    }
  }

  img.pieces = std::move(partition);
  img.intensities = std::move(components);
  return img;
}

PiecewiseImage single_piece_image(IntensityGrid grid) {
  std::vector<LipschitzDomain> part{make_rectangle({0, 0}, {1, 1})};
  std::vector<IntensityGrid> comps{std::move(grid)};
  return project(std::move(comps), std::move(part));
}

SbvDerivative sbv_derivative(const PiecewiseImage& img) {
  SbvDerivative out;
  out.gradients.reserve(img.pieces.size());
  for (const auto& grid : img.intensities) {
    VectorGrid vg;
    vg.res = grid.res;
    vg.values.resize(std::size_t(grid.res + 1) * (grid.res + 1));
    const double h = 1.0 / grid.res;
    for (int j = 0; j <= grid.res; ++j)
      for (int i = 0; i <= grid.res; ++i) {
        double dx, dy;
        if (i == 0)
          dx = (-3 * grid.at(0, j) + 4 * grid.at(1, j) - grid.at(2, j)) / (2 * h);
        else if (i == grid.res)
          dx = (3 * grid.at(i, j) - 4 * grid.at(i - 1, j) + grid.at(i - 2, j)) / (2 * h);
        else
          dx = (grid.at(i + 1, j) - grid.at(i - 1, j)) / (2 * h);
        if (j == 0)
          dy = (-3 * grid.at(i, 0) + 4 * grid.at(i, 1) - grid.at(i, 2)) / (2 * h);
        else if (j == grid.res)
          dy = (3 * grid.at(i, j) - 4 * grid.at(i, j - 1) + grid.at(i, j - 2)) / (2 * h);
        else
          dy = (grid.at(i, j + 1) - grid.at(i, j - 1)) / (2 * h);
        vg.values[i + (grid.res + 1) * j] = {dx, dy};
      }
    out.gradients.push_back(std::move(vg));
  }
  out.jumps.reserve(img.jump.segments.size());
  for (const auto& seg : img.jump.segments)
    out.jumps.push_back(seg.normal * (seg.f_plus - seg.f_minus));
  return out;
}

}  // namespace geomatch
