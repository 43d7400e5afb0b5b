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
#ifndef GEOMATCH_HAMILTONIAN_HPP
#define GEOMATCH_HAMILTONIAN_HPP

#include <vector>

#include "geomatch/flows.hpp"
#include "geomatch/geometry.hpp"
#include "geomatch/kernels.hpp"

namespace geomatch {

/// Weak Hamiltonian state on Q = (Sigma, I^1..I^r), P = (P^0, P^1..P^r).
/// Curve particles are Lagrangian; the per-piece intensity grids live on the
/// fixed cell-center grid (n x n) with uniform quadrature weight 1/n^2.
/// P^i are densities against the fixed reference measure.
struct HamiltonianState {
  int n = 0;
  int r = 0;
  std::vector<Vec2> Q0;
  std::vector<Vec2> P0;
  std::vector<double> curve_weights;        // fixed initial segment lengths
  std::vector<std::vector<double>> Q;       // r grids, n*n each
  std::vector<std::vector<double>> P;       // r grids, n*n each
  std::vector<LipschitzDomain> pieces;      // optional (empty = relaxed support)

  double cell_weight() const { return 1.0 / (double(n) * double(n)); }
  void validate() const;
  /// supp(P^i) within piece U_i (when pieces are given); slack in cells.
  bool support_ok(double rel_floor = 1e-9, double slack_cells = 0.0) const;
};

struct HamiltonianConfig {
  KernelSpec kernel_v;  // dimension 2, scale = lambda
  KernelSpec kernel_s;  // dimension 1, scale = beta

  HamiltonianConfig() {
    kernel_v.dimension = 2;
    kernel_s.dimension = 1;
  }
};

// Discrete gradient on an n x n cell grid: central differences inside,
// second-order one-sided at the domain boundary. apply_grad_transpose is the
// exact adjoint (used by the distributional P^i equation).
void apply_grad(const std::vector<double>& f, int n, std::vector<Vec2>& out);
void apply_grad_transpose(const std::vector<double>& ax, const std::vector<double>& ay, int n,
                          std::vector<double>& out);

/// Controls minimizing the Hamiltonian at the given state:
///   lambda v = sum_k k(Q0_k,.) w_k P0_k - sum_j k(x_j,.) w_j sum_i P^i_j grad Q^i_j
///   beta  s  = sum_{i,j} k_S(Q^i_j,.) w_j P^i_j
std::pair<ParticleField, ScalarParticleField> minimized_controls(const HamiltonianState& state,
                                                                 const HamiltonianConfig& cfg);

/// H(P,Q) as the explicit block Gram expansion
///   (1/2 lambda)[curve-curve + grid-grid - 2 curve-grid] + (1/2 beta) contrast.
double hamiltonian_value(const HamiltonianState& state, const HamiltonianConfig& cfg);

/// Pointwise functional derivatives of the discrete H (the discrete shadow
/// of the distributional derivatives). ham_rhs is (dH/dP, -dH/dQ).
struct HamiltonianGradients {
  std::vector<Vec2> gP0;                 // v(Q0_k)
  std::vector<Vec2> gQ0;                 // dv(Q0_k)^T P0_k
  std::vector<std::vector<double>> gP;   // s(Q^i_j) - <v(x_j), grad Q^i_j>
  std::vector<std::vector<double>> gQ;   // ds(Q^i_j) P^i_j - (1/w) grad^T(w v P^i)
};
HamiltonianGradients ham_gradients(const HamiltonianState& state, const HamiltonianConfig& cfg);

HamiltonianState ham_rhs(const HamiltonianState& state, const HamiltonianConfig& cfg);

struct HamiltonianTrajectory {
  std::vector<HamiltonianState> states;
  std::vector<double> energy;  // H per knot
  std::vector<double> times;
};

HamiltonianTrajectory integrate_hamiltonian(const HamiltonianState& state0,
                                            const HamiltonianConfig& cfg, double T, int steps,
                                            Scheme scheme = Scheme::rk4);

/// Closed-form transport along the flows generated by the minimized
/// controls: the uniqueness theorem's solution, reported at the transported
/// particle positions (Lagrangian frame).
struct ReconstructedState {
  double time = 0.0;
  std::vector<Vec2> Q0;                   // phi_{0,t} of the curve points
  std::vector<Vec2> P0;                   // d phi^{-T} P0_0
  std::vector<Vec2> grid_positions;       // phi_{0,t} of the grid nodes
  std::vector<double> grid_jacobians;     // det d phi
  std::vector<std::vector<double>> Qi;    // eta_{0,t}(Q^i_0) at those positions
  std::vector<std::vector<double>> Pi;    // P^i_0 / (Jac d eta) at those positions
};

std::vector<ReconstructedState> reconstruct(const HamiltonianState& state0,
                                            const HamiltonianConfig& cfg, double T, int steps);

}  // namespace geomatch

#endif
