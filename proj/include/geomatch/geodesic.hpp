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
#ifndef GEOMATCH_GEODESIC_HPP
#define GEOMATCH_GEODESIC_HPP

#include <array>
#include <tuple>
#include <vector>

#include "geomatch/flows.hpp"
#include "geomatch/geometry.hpp"
#include "geomatch/kernels.hpp"

namespace geomatch {

/// Initial momentum of the shooting system: smooth spatial momentum p_a per
/// grid node, singular spatial momentum p_b per jump-curve quadrature node,
/// contrast momentum p_c per grid node. All are densities; quadrature
/// weights are folded in at field-construction time.
struct MomentumTriple {
  std::vector<Vec2> p_a;
  std::vector<Vec2> p_b;
  std::vector<double> p_c;

  static MomentumTriple zero(std::size_t grid_nodes, std::size_t curve_nodes);
  MomentumTriple scaled(double c) const;
};

struct GeodesicConfig {
  KernelSpec kernel_v;  // dimension 2, scale = lambda
  KernelSpec kernel_s;  // dimension 1, scale = beta
  int steps = 20;
  Scheme scheme = Scheme::rk4;
  int eta_samples = 33;  // passive ladder for the intensity push

  GeodesicConfig() {
    kernel_v.dimension = 2;
    kernel_v.sigma = 0.2;
    kernel_s.dimension = 1;
    kernel_s.sigma = 0.2;
  }
};

/// Discretization of a source image for shooting: grid nodes (cell centers),
/// curve quadrature nodes of the jump set, intensity seeds.
struct ShootingProblem {
  CellGrid grid;
  std::vector<Vec2> grid_nodes;
  std::vector<double> grid_weights;
  std::vector<Vec2> curve_nodes;
  std::vector<double> curve_weights;
  std::vector<Vec2> curve_normals;
  std::vector<double> curve_fplus, curve_fminus;
  std::vector<double> contrast_seeds;  // I0 at the grid nodes
  PiecewiseImage source;

  static ShootingProblem build(const PiecewiseImage& I0, int grid_n);
  std::size_t n_spatial() const { return grid_nodes.size() + curve_nodes.size(); }
};

struct FieldPair {
  ParticleField v;
  ScalarParticleField s;
};

struct ShootingState {
  FlowState grid_flow;
  FlowState curve_flow;
  ContrastFlowState contrast_flow;
  // co-integrated inverse differentials and log-Jacobians (grid then curve)
  std::vector<Mat2> inv_differentials;
  std::vector<double> log_jacobians;
  double speed_v_sq = 0.0;  // momentum pairing (1/lambda) c^T K c at this knot
  double speed_s_sq = 0.0;
  double time = 0.0;
};

struct ShootingTrajectory {
  ShootingProblem problem;
  MomentumTriple momenta;
  GeodesicConfig cfg;
  std::vector<ShootingState> states;
  // assembled stage fields per step (1 for euler, 4 for rk4) and the final
  // knot field; these drive the reverse flow, the Picard map and the
  // attachment-gradient oracle
  std::vector<std::vector<FieldPair>> stage_fields;
  FieldPair final_field;
  // eta samples: passive ladder seeds and their full trajectory values
  std::vector<double> ladder_seeds;
  std::vector<std::vector<double>> ladder_values;      // per knot
  std::vector<std::vector<double>> ladder_derivatives; // per knot
  // extra passive contrast seeds supplied by the caller (multi-channel data)
  std::vector<double> passive_seeds;
  std::vector<std::vector<double>> passive_values;     // per knot

  double T() const { return 1.0; }
  int steps() const { return cfg.steps; }
  const ShootingState& final_state() const { return states.back(); }

  /// eta_{0,1}(value) by monotone interpolation of the contrast samples.
  double eta_push(double value) const;
  /// eta_{0,t_k} interpolation at knot k.
  double eta_push_at(int knot, double value) const;
};

/// Velocity/contrast fields of the shooting system rebuilt from a knot state
/// and the initial momenta (the route through d phi^{-T} by matrix solve).
FieldPair velocities_from_momenta(const ShootingProblem& prob, const GeodesicConfig& cfg,
                                  const ShootingState& state, const MomentumTriple& mom);

ShootingTrajectory shoot(const ShootingProblem& prob, const MomentumTriple& mom,
                         const GeodesicConfig& cfg,
                         const std::vector<double>& passive_seeds = {});

ShootingTrajectory shoot(const PiecewiseImage& I0, int grid_n, const MomentumTriple& mom,
                         const GeodesicConfig& cfg);

/// (t, |v_t|^2, |s_t|^2) pairing norms recorded along the trajectory.
std::vector<std::tuple<double, double, double>> speed_profile(const ShootingTrajectory& traj);

/// Closed-form transported momenta per knot, evaluated from the
/// co-integrated inverse differentials and log-Jacobians: spatial covector
/// densities d phi^{-T} p at the transported nodes and the Eulerian contrast
/// density p_c / (Jac(phi_{0,t}) d eta_{0,t}).
struct TransportedMomenta {
  std::vector<std::vector<Vec2>> spatial;        // per knot, grid then curve
  std::vector<std::vector<double>> contrast;     // per knot, per grid node
  std::vector<std::vector<double>> jacobians;    // exp(log-Jacobian) route
};
TransportedMomenta transport_momentum(const ShootingTrajectory& traj);

/// Fields rebuilt from the transported momenta at knot k (the change-of-
/// variables route; Eulerian weights w Jac against the Eulerian density).
FieldPair velocities_from_transport(const ShootingTrajectory& traj, const TransportedMomenta& tm,
                                    int knot);

/// A velocity oracle reading the recorded stage fields (piecewise in time,
/// aligned with the integration knots and half-steps).
VelocityOracle stage_record_oracle(const ShootingTrajectory& traj);
ContrastOracle stage_record_contrast_oracle(const ShootingTrajectory& traj);

/// phi_{1,0} applied to arbitrary seeds through the recorded fields.
std::vector<Vec2> reverse_flow_positions(const ShootingTrajectory& traj,
                                         const std::vector<Vec2>& seeds);

/// I_1 = eta_{0,1} o I_0 o phi_{1,0}: lattice pullback through the reverse
/// flow, intensity push through eta, pieces transported vertex-wise.
PiecewiseImage final_image(const ShootingTrajectory& traj, int edge_subdiv = 2);

// ---------------------------------------------------------------------------
// The fixed-point map Xi of the small-time existence proof
// ---------------------------------------------------------------------------

/// Time-discretized candidate (v,s): stage fields per step plus the final
/// knot field, matching the shooting scheme's stage layout.
struct FieldRecord {
  std::vector<std::vector<FieldPair>> stages;
  FieldPair final_field;
  double T = 1.0;
  Scheme scheme = Scheme::rk4;

  int steps() const { return int(stages.size()); }
};

FieldRecord zero_field_record(const ShootingProblem& prob, const GeodesicConfig& cfg, int steps,
                              double T);
FieldRecord field_record_of(const ShootingTrajectory& traj);

/// One application of Xi: integrate the flows of the candidate, rebuild the
/// fields from the fixed momenta along those flows.
FieldRecord picard_step(const FieldRecord& candidate, const ShootingProblem& prob,
                        const MomentumTriple& mom, const GeodesicConfig& cfg);

/// L2([0,T], V x S) distance between two records (knot fields, trapezoid in
/// time, bare RKHS norms of the differences).
double field_record_distance(const FieldRecord& a, const FieldRecord& b);

}  // namespace geomatch

#endif
