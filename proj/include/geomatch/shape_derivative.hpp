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
#ifndef GEOMATCH_SHAPE_DERIVATIVE_HPP
#define GEOMATCH_SHAPE_DERIVATIVE_HPP

#include <functional>
#include <string>
#include <vector>

#include "geomatch/geometry.hpp"

namespace geomatch {

using ScalarOracle = std::function<double(Vec2)>;
using FieldOracle = std::function<Vec2(Vec2)>;

/// J_t = int_{phi_t(U)} f o phi_t^{-1} g 1_V dmu and its one-sided
/// derivative at t = 0+.
struct DomainFunctionalProblem {
  LipschitzDomain U;
  LipschitzDomain V;
  ScalarOracle f;
  ScalarOracle g;
  FieldOracle X;
};

/// Brute-force oracle: midpoint quadrature over the bounding box, cell
/// centers classified by pulling back through the flow of X.
double domain_functional(const DomainFunctionalProblem& prob, double t, int m);

/// Same quantity with exact polygon transport: phi_t(U) as a transported
/// polygon clipped against V, smooth integrand quadrature on triangles.
/// Smooth in t, so usable as a finite-difference oracle at small h.
double domain_functional_clipped(const DomainFunctionalProblem& prob, double t, int m);

/// Exact-polygon evaluation of J_t = int_M f o phi_t^{-1} g for piecewise
/// images (the image-space theorem's functional). g pieces must be convex.
double image_functional_clipped(const PiecewiseImage& f_img, const PiecewiseImage& g_img,
                                const FieldOracle& X, double t, int m);

/// 1_{closure(V)}(y + eps X(y)) at eps = 1e-6 diam(V), re-probed at eps/2;
/// disagreeing probes fall to the lemma's 0 branch.
int tilde_indicator(const LipschitzDomain& V, const FieldOracle& X, Vec2 y);

struct ShapeDerivativeParts {
  double bulk = 0.0;
  double boundary = 0.0;
  double total() const { return bulk + boundary; }
};

/// Analytic right derivative of J_t at 0+:
///   int_U -<grad f, X> g 1_V dmu + int_{dU} <X,n> f g 1tilde_V(X) dmu
ShapeDerivativeParts boundary_derivative(const DomainFunctionalProblem& prob, int m = 512,
                                         int curve_subdiv = 4);

/// The image-space version over f,g in Im(M):
///   -int_M <grad f, X> g dmu - int_{J_f} (f+ - f-) gtilde <nu, X> dH^1
ShapeDerivativeParts image_derivative(const PiecewiseImage& f_img, const PiecewiseImage& g_img,
                                      const FieldOracle& X, int m = 256, int curve_subdiv = 1);

/// Trace of g on the side X points into, by the two-probe rule; `ok` is
/// false on the 0 branch (probes disagree).
struct TildeValue {
  double value = 0.0;
  bool ok = false;
};
TildeValue tilde_trace(const PiecewiseImage& g_img, const FieldOracle& X, Vec2 node);

// --- polygon helpers (exposed for tests and the geodesic image assembly) ---

bool is_convex(const LipschitzDomain& p, double tol = 1e-12);

/// Sutherland-Hodgman clip of a subject polygon against a convex CCW clip
/// polygon. Returns an empty polygon for an empty intersection.
LipschitzDomain clip_convex(const LipschitzDomain& subject, const LipschitzDomain& convex_clip);

/// Quadrature of a smooth integrand over a convex polygon: fan triangulation
/// + uniform refinement + centroid rule. `target_cells` sets the refinement
/// so sub-triangle areas are about area/target_cells.
double polygon_quadrature(const LipschitzDomain& poly, const ScalarOracle& f, int target_cells);

// --- bundled verification scenes ---

struct LemmaScene {
  std::string name;
  DomainFunctionalProblem prob;
  bool degenerate = false;  // tangential X along a positive-length boundary piece
};

/// Polygon scenes for the derivation-lemma oracle: nested rectangles,
/// overlapping rectangles, rotated triangles, disk-polygon vs square,
/// half-square identical domains, plus one DEGENERATE tangential scene.
std::vector<LemmaScene> lemma_scene_suite();

struct ImageLemmaScene {
  std::string name;
  PiecewiseImage f_img;
  PiecewiseImage g_img;
  FieldOracle X;
};

/// The piecewise-constant image scene of the image-space theorem.
ImageLemmaScene lemma_image_scene();

}  // namespace geomatch

#endif
