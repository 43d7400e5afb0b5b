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
#include "geomatch/shape_derivative.hpp"

#include <algorithm>
#include <cmath>

#include "geomatch/flows.hpp"

namespace geomatch {

namespace {

VelocityOracle oracle_from_x(const FieldOracle& X) {
  return [&X](Vec2 p, double) -> VelocitySample { return {X(p), Mat2::zero()}; };
}

int flow_steps_for(double t) { return std::max(2, int(std::ceil(std::abs(t) / 0.005))); }

/// Batched phi_{-t}: one rk4 sweep over all points (positions only).
std::vector<Vec2> flow_points_back(const FieldOracle& X, std::vector<Vec2> pts, double t) {
  if (t == 0.0 || pts.empty()) return pts;
  const int steps = flow_steps_for(t);
  const double h = t / steps;
  parallel_for(pts.size(), [&](std::size_t i) {
    Vec2 q = pts[i];
    for (int k = 0; k < steps; ++k) {
      const Vec2 k1 = -X(q);
      const Vec2 k2 = -X(q + k1 * (h / 2));
      const Vec2 k3 = -X(q + k2 * (h / 2));
      const Vec2 k4 = -X(q + k3 * h);
      q += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    pts[i] = q;
  });
  return pts;
}

struct BBox {
  double lox, loy, hix, hiy;
  void absorb(Vec2 p) {
    lox = std::min(lox, p.x);
    loy = std::min(loy, p.y);
    hix = std::max(hix, p.x);
    hiy = std::max(hiy, p.y);
  }
};

BBox bbox_of(std::initializer_list<const LipschitzDomain*> polys, double pad) {
  BBox b{1e300, 1e300, -1e300, -1e300};
  for (const auto* p : polys)
    for (const Vec2 v : p->vertices) b.absorb(v);
  b.lox -= pad;
  b.loy -= pad;
  b.hix += pad;
  b.hiy += pad;
  return b;
}

}  // namespace

double domain_functional(const DomainFunctionalProblem& prob, double t, int m) {
  if (m < 64) throw NumericalError("domain_functional: m must be >= 64");
  double supx = 0.0;
  for (const Vec2 v : prob.U.vertices) supx = std::max(supx, norm(prob.X(v)));
  const BBox box = bbox_of({&prob.U, &prob.V}, std::abs(t) * (supx + 1.0) + 1e-6);
  const double hx = (box.hix - box.lox) / m;
  const double hy = (box.hiy - box.loy) / m;
  const double cell = hx * hy;

  // cells inside V, pulled back in one batched sweep
  std::vector<Vec2> centers;
  centers.reserve(std::size_t(m) * m / 2);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const Vec2 y{box.lox + (i + 0.5) * hx, box.loy + (j + 0.5) * hy};
      if (point_in_polygon(prob.V, y) != PointLocation::Outside) centers.push_back(y);
    }
  const std::vector<Vec2> back = flow_points_back(prob.X, centers, t);
  double total = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (point_in_polygon(prob.U, back[i]) == PointLocation::Outside) continue;
    total += prob.f(back[i]) * prob.g(centers[i]) * cell;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Exact-polygon route
// ---------------------------------------------------------------------------

bool is_convex(const LipschitzDomain& p, double tol) {
  const std::size_t n = p.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = p.vertices[i];
    const Vec2 b = p.vertices[(i + 1) % n];
    const Vec2 c = p.vertices[(i + 2) % n];
    if (cross(b - a, c - b) < -tol) return false;
  }
  return true;
}

LipschitzDomain clip_convex(const LipschitzDomain& subject, const LipschitzDomain& convex_clip) {
  std::vector<Vec2> poly = subject.vertices;
  const auto& cv = convex_clip.vertices;
  for (std::size_t e = 0; e < cv.size() && !poly.empty(); ++e) {
    const Vec2 a = cv[e], b = cv[(e + 1) % cv.size()];
    const Vec2 dir = b - a;
    auto inside = [&](Vec2 p) { return cross(dir, p - a) >= 0.0; };
    std::vector<Vec2> out;
    out.reserve(poly.size() + 4);
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2 p = poly[i], q = poly[(i + 1) % poly.size()];
      const bool pin = inside(p), qin = inside(q);
      if (pin) out.push_back(p);
      if (pin != qin) {
        const double dp = cross(dir, p - a);
        const double dq = cross(dir, q - a);
        const double s = dp / (dp - dq);
        out.push_back(p + (q - p) * s);
      }
    }
    poly.swap(out);
  }
  return LipschitzDomain{std::move(poly)};
}

namespace {

struct QuadPoint {
  Vec2 p;
  double w;  // signed (fan triangles may fold)
};

void triangle_rule(Vec2 a, Vec2 b, Vec2 c, int levels, std::vector<QuadPoint>& out) {
  if (levels <= 0) {
    out.push_back({(a + b + c) / 3.0, 0.5 * cross(b - a, c - a)});
    return;
  }
  const Vec2 ab = (a + b) * 0.5, bc = (b + c) * 0.5, ca = (c + a) * 0.5;
  triangle_rule(a, ab, ca, levels - 1, out);
  triangle_rule(ab, b, bc, levels - 1, out);
  triangle_rule(ca, bc, c, levels - 1, out);
  triangle_rule(ab, bc, ca, levels - 1, out);
}

/// Signed fan rule from the vertex average: valid for any simple polygon
/// (Green's theorem), including clipper outputs with degenerate bridges.
std::vector<QuadPoint> polygon_rule(const LipschitzDomain& poly, int target_cells) {
  std::vector<QuadPoint> rule;
  if (poly.vertices.size() < 3) return rule;
  const double total_area = std::abs(poly.area());
  if (total_area < 1e-16) return rule;
  Vec2 c{0, 0};
  for (const Vec2 v : poly.vertices) c += v;
  c = c / double(poly.vertices.size());
  const std::size_t n = poly.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly.vertices[i], b = poly.vertices[(i + 1) % n];
    const double tri_area = std::abs(0.5 * cross(a - c, b - c));
    if (tri_area < 1e-16) continue;
    const double target = total_area / std::max(1, target_cells);
    int levels = 0;
    while (levels < 7 && tri_area / std::pow(4.0, levels) > target) ++levels;
    triangle_rule(c, a, b, levels, rule);
  }
  return rule;
}

}  // namespace

double polygon_quadrature(const LipschitzDomain& poly, const ScalarOracle& f, int target_cells) {
  double sum = 0.0;
  for (const QuadPoint& q : polygon_rule(poly, target_cells)) sum += q.w * f(q.p);
  return sum;
}

namespace {

// Curved fields bend transported edges by O(t len^2), so edge pieces are
// capped at 1/32 before transport.
LipschitzDomain subdivide_edges(const LipschitzDomain& p, int min_parts) {
  LipschitzDomain out;
  const std::size_t n = p.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = p.vertices[i], b = p.vertices[(i + 1) % n];
    const int parts = std::max(min_parts, int(std::ceil(norm(b - a) * 32.0)));
    for (int k = 0; k < parts; ++k) out.vertices.push_back(a + (b - a) * (double(k) / parts));
  }
  return out;
}

}  // namespace

double domain_functional_clipped(const DomainFunctionalProblem& prob, double t, int m) {
  if (!is_convex(prob.V)) throw GeometryError("domain_functional_clipped: V must be convex");
  LipschitzDomain moved = subdivide_edges(prob.U, 1);
  if (t != 0.0) {
    const FlowTrajectory traj = integrate_flow(oracle_from_x(prob.X), moved.vertices,
                                               flow_steps_for(t), Scheme::rk4, t);
    moved.vertices = traj.final_state().positions;
  }
  const LipschitzDomain region = clip_convex(moved, prob.V);
  const std::vector<QuadPoint> rule = polygon_rule(region, (m * m) / 4);
  std::vector<Vec2> pts(rule.size());
  for (std::size_t i = 0; i < rule.size(); ++i) pts[i] = rule[i].p;
  const std::vector<Vec2> back = flow_points_back(prob.X, std::move(pts), t);
  double sum = 0.0;
  for (std::size_t i = 0; i < rule.size(); ++i)
    sum += rule[i].w * prob.f(back[i]) * prob.g(rule[i].p);
  return sum;
}

double image_functional_clipped(const PiecewiseImage& f_img, const PiecewiseImage& g_img,
                                const FieldOracle& X, double t, int m) {
  // J_t = sum_i sum_j int_{phi_t(U_i) cap V_j} f_i o phi_{-t} g_j. The g
  // pieces act as clip regions and must be convex; the transported f pieces
  // are general subjects.
  for (const auto& piece : g_img.pieces)
    if (!is_convex(piece)) throw GeometryError("image_functional_clipped: g pieces must be convex");
  double total = 0.0;
  for (std::size_t pi = 0; pi < f_img.pieces.size(); ++pi) {
    LipschitzDomain moved = subdivide_edges(f_img.pieces[pi], 1);
    if (t != 0.0) {
      const FlowTrajectory traj =
          integrate_flow(oracle_from_x(X), moved.vertices, flow_steps_for(t), Scheme::rk4, t);
      moved.vertices = traj.final_state().positions;
    }
    for (std::size_t pj = 0; pj < g_img.pieces.size(); ++pj) {
      const LipschitzDomain region = clip_convex(moved, g_img.pieces[pj]);
      if (region.vertices.size() < 3) continue;
      const int cells = std::max(16, int((m * m) * std::abs(region.area())) / 4);
      const std::vector<QuadPoint> rule = polygon_rule(region, cells);
      std::vector<Vec2> pts(rule.size());
      for (std::size_t i = 0; i < rule.size(); ++i) pts[i] = rule[i].p;
      const std::vector<Vec2> back = flow_points_back(X, std::move(pts), t);
      for (std::size_t i = 0; i < rule.size(); ++i)
        total += rule[i].w * f_img.intensities[pi].eval(back[i]) *
                 g_img.intensities[pj].eval(rule[i].p);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Analytic derivative
// ---------------------------------------------------------------------------

int tilde_indicator(const LipschitzDomain& V, const FieldOracle& X, Vec2 y) {
  const double eps = 1e-6 * V.diameter();
  const Vec2 xv = X(y);
  auto probe = [&](double e) {
    return point_in_polygon(V, y + xv * e) != PointLocation::Outside ? 1 : 0;
  };
  const int p1 = probe(eps);
  const int p2 = probe(eps * 0.5);
  return p1 == p2 ? p1 : 0;
}

namespace {

Vec2 fd_gradient(const ScalarOracle& f, Vec2 x, double h = 1e-5) {
  return {(f({x.x + h, x.y}) - f({x.x - h, x.y})) / (2 * h),
          (f({x.x, x.y + h}) - f({x.x, x.y - h})) / (2 * h)};
}

}  // namespace

ShapeDerivativeParts boundary_derivative(const DomainFunctionalProblem& prob, int m,
                                         int curve_subdiv) {
  ShapeDerivativeParts parts;
  const LipschitzDomain bulk_region = clip_convex(prob.U, prob.V);
  parts.bulk = polygon_quadrature(
      bulk_region, [&](Vec2 x) { return -dot(fd_gradient(prob.f, x), prob.X(x)) * prob.g(x); },
      (m * m) / 4);

  const std::size_t n = prob.U.vertices.size();
  double boundary = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = prob.U.vertices[i], b = prob.U.vertices[(i + 1) % n];
    const Vec2 dir = (b - a) / norm(b - a);
    const Vec2 outer = {dir.y, -dir.x};  // interior on the left for CCW
    // the 1-tilde cutoff where dU crosses dV must be resolved well below the
    // area quadrature's scale, not just the configured sub-segment count
    const int pieces = std::max(curve_subdiv, int(std::ceil(norm(b - a) * m * 8)));
    const double len = norm(b - a) / pieces;
    for (int k = 0; k < pieces; ++k) {
      const Vec2 y = a + (b - a) * ((k + 0.5) / pieces);
      const double xn = dot(prob.X(y), outer);
      if (xn == 0.0) continue;
      boundary += len * xn * prob.f(y) * prob.g(y) * tilde_indicator(prob.V, prob.X, y);
    }
  }
  parts.boundary = boundary;
  return parts;
}

TildeValue tilde_trace(const PiecewiseImage& g_img, const FieldOracle& X, Vec2 node) {
  const double eps = 1e-6 * std::sqrt(2.0);
  const Vec2 xv = X(node);
  const int p1 = g_img.piece_at(node + xv * eps);
  const int p2 = g_img.piece_at(node + xv * (eps * 0.5));
  if (p1 < 0 || p2 < 0) return {0.0, false};
  if (p1 == p2) return {g_img.intensities[p1].eval(node), true};
  const double v1 = g_img.intensities[p1].eval(node);
  const double v2 = g_img.intensities[p2].eval(node);
  if (std::abs(v1 - v2) <= 1e-9) return {v2, true};
  return {0.0, false};
}

// ---------------------------------------------------------------------------
// Bundled scenes
// ---------------------------------------------------------------------------

std::vector<LemmaScene> lemma_scene_suite() {
  std::vector<LemmaScene> scenes;
  const ScalarOracle f1 = [](Vec2 p) { return 0.8 + 0.3 * p.x + 0.2 * p.y * p.y; };
  const ScalarOracle g1 = [](Vec2 p) { return 1.0 + 0.25 * p.x * p.y; };
  const ScalarOracle f2 = [](Vec2 p) { return 1.0 + 0.5 * p.x - 0.2 * p.y; };
  const ScalarOracle g2 = [](Vec2 p) { return 0.7 + 0.4 * p.y + 0.1 * p.x * p.x; };
  const ScalarOracle one = [](Vec2) { return 1.0; };

  scenes.push_back({"nested-rectangles",
                    {make_rectangle({0.25, 0.25}, {0.75, 0.75}),
                     make_rectangle({0.1, 0.1}, {0.9, 0.9}), f1, g1,
                     [](Vec2 p) { return Vec2{0.8 + 0.2 * p.y, -0.3 + 0.25 * p.x}; }},
                    false});
  scenes.push_back({"overlapping-rectangles",
                    {make_rectangle({0.15, 0.2}, {0.55, 0.7}),
                     make_rectangle({0.35, 0.1}, {0.85, 0.6}), f2, g2,
                     [](Vec2 p) { return Vec2{0.3 - 0.1 * p.x, 0.2 + 0.15 * p.y}; }},
                    false});
  scenes.push_back({"rotated-triangles",
                    {LipschitzDomain{{{0.2, 0.25}, {0.75, 0.3}, {0.45, 0.8}}},
                     LipschitzDomain{{{0.3, 0.1}, {0.8, 0.55}, {0.15, 0.6}}}, f1, g2,
                     [](Vec2 p) { return Vec2{0.25 + 0.15 * p.y, -0.2 + 0.1 * p.x}; }},
                    false});
  scenes.push_back({"disk-vs-square",
                    {make_regular_polygon({0.45, 0.5}, 0.3, 64),
                     make_rectangle({0.2, 0.2}, {0.8, 0.8}), f2, g1,
                     [](Vec2 p) {
                       return Vec2{0.2 - 0.25 * (p.y - 0.5), 0.15 + 0.25 * (p.x - 0.45)};
                     }},
                    false});
  scenes.push_back({"half-square-identical",
                    {make_rectangle({0, 0}, {0.5, 1}), make_rectangle({0, 0}, {0.5, 1}), one, one,
                     [](Vec2) { return Vec2{1.0, 0.0}; }},
                    false});
  // X tangential along the shared boundary piece: the 1-tilde limit is the
  // unstable branch, excluded from tight-tolerance acceptance.
  scenes.push_back({"tangential-slide",
                    {make_rectangle({0.5, 0.3}, {0.9, 0.7}), make_rectangle({0.1, 0.1}, {0.5, 0.9}),
                     f1, g1, [](Vec2) { return Vec2{0.0, 1.0}; }},
                    true});
  return scenes;
}

ImageLemmaScene lemma_image_scene() {
  ImageLemmaScene scene;
  scene.name = "piecewise-constant-image";
  const int res = 64;
  {
    std::vector<LipschitzDomain> parts{make_rectangle({0.5, 0}, {1, 1}),
                                       make_rectangle({0, 0}, {0.5, 1})};
    std::vector<IntensityGrid> grids{IntensityGrid::constant(res, 1.0),
                                     IntensityGrid::constant(res, 0.25)};
    scene.f_img = project(std::move(grids), std::move(parts));
  }
  {
    std::vector<LipschitzDomain> parts{make_rectangle({0, 0.45}, {1, 1}),
                                       make_rectangle({0, 0}, {1, 0.45})};
    std::vector<IntensityGrid> grids{
        IntensityGrid::from_function(res, [](Vec2 p) { return 0.8 + 0.1 * p.x; }),
        IntensityGrid::from_function(res, [](Vec2 p) { return 0.3 + 0.1 * p.y; })};
    scene.g_img = project(std::move(grids), std::move(parts));
  }
  // fields act on M and vanish on its boundary, so phi_t maps M to M
  scene.X = [](Vec2 p) {
    const double bump = 16.0 * p.x * (1.0 - p.x) * p.y * (1.0 - p.y);
    return Vec2{0.8 * bump, 0.3 * bump};
  };
  return scene;
}

ShapeDerivativeParts image_derivative(const PiecewiseImage& f_img, const PiecewiseImage& g_img,
                                      const FieldOracle& X, int m, int curve_subdiv) {
  ShapeDerivativeParts parts;
  const SbvDerivative df = sbv_derivative(f_img);

  const CellGrid grid{m};
  std::vector<double> rows(m, 0.0);
  parallel_for(std::size_t(m), [&](std::size_t jj) {
    double acc = 0.0;
    for (int i = 0; i < grid.n; ++i) {
      const Vec2 x = grid.node(i, int(jj));
      const int p = f_img.piece_at(x);
      if (p < 0) continue;
      acc += -dot(df.gradients[p].eval(x), X(x)) * g_img.eval_raw(x) * grid.weight();
    }
    rows[jj] = acc;
  });
  for (double r : rows) parts.bulk += r;

  double jump_term = 0.0;
  for (const JumpSegment& parent : f_img.jump.segments) {
    const int pieces =
        curve_subdiv > 1 ? std::max(curve_subdiv, int(std::ceil(parent.length() * m))) : 1;
    for (int k = 0; k < pieces; ++k) {
      JumpSegment seg = parent;
      seg.a = parent.a + (parent.b - parent.a) * (double(k) / pieces);
      seg.b = parent.a + (parent.b - parent.a) * (double(k + 1) / pieces);
      const Vec2 node = seg.midpoint();
      double fp = seg.f_plus, fm = seg.f_minus;
      if (pieces > 1 && seg.plus_piece >= 0 && seg.minus_piece >= 0) {
        fp = f_img.intensities[seg.plus_piece].eval(node);
        fm = f_img.intensities[seg.minus_piece].eval(node);
      }
      const TildeValue gt = tilde_trace(g_img, X, node);
      if (!gt.ok) continue;  // the lemma's 0 branch
      jump_term -= seg.length() * (fp - fm) * gt.value * dot(seg.normal, X(node));
    }
  }
  parts.boundary = jump_term;
  return parts;
}

}  // namespace geomatch
