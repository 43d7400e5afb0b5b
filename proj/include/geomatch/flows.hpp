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
#ifndef GEOMATCH_FLOWS_HPP
#define GEOMATCH_FLOWS_HPP

#include <functional>
#include <vector>

#include "geomatch/core.hpp"
#include "geomatch/kernels.hpp"

namespace geomatch {

enum class Scheme { euler, rk4 };

struct VelocitySample {
  Vec2 v;
  Mat2 dv;
};

/// Abstract velocity contract (position, time) -> (value, jacobian); pure.
using VelocityOracle = std::function<VelocitySample(Vec2, double)>;

VelocityOracle oracle_from_field(const ParticleField& f);

/// Particle ensemble at one time: positions phi_{0,t}(x_j), transported
/// differentials d phi_{0,t}|x_j and their determinants.
struct FlowState {
  std::vector<Vec2> positions;
  std::vector<Mat2> differentials;
  std::vector<double> jacobians;
  double time = 0.0;
};

struct FlowTrajectory {
  std::vector<FlowState> states;  // steps+1 entries, states.front() is t=0
  bool exited_domain = false;     // some particle left [0,1]^2 (warning, not an error)

  const FlowState& final_state() const { return states.back(); }
};

/// Integrates dq/dt = v(q,t), dD/dt = dv(q,t) D from D = Id over [0,T].
/// Throws NonFiniteError / JacobianCollapseError (det <= 1e-8).
FlowTrajectory integrate_flow(const VelocityOracle& field, const std::vector<Vec2>& seeds,
                              int steps, Scheme scheme, double T = 1.0);

/// Integrates dq/dt = -v(q, T-t): the trajectory of phi_{T-t...}, so the
/// final state carries phi_{T,0} applied to the seeds.
FlowTrajectory integrate_flow_reverse(const VelocityOracle& field, const std::vector<Vec2>& seeds,
                                      int steps, Scheme scheme, double T = 1.0);

struct ContrastSample {
  double s;
  double ds;
};
using ContrastOracle = std::function<ContrastSample(double, double)>;

ContrastOracle oracle_from_field(const ScalarParticleField& f);

struct ContrastFlowState {
  std::vector<double> values;
  std::vector<double> derivatives;
  double time = 0.0;
};

struct ContrastFlowTrajectory {
  std::vector<ContrastFlowState> states;
  const ContrastFlowState& final_state() const { return states.back(); }
};

ContrastFlowTrajectory integrate_contrast_flow(const ContrastOracle& field,
                                               const std::vector<double>& seeds, int steps,
                                               Scheme scheme, double T = 1.0);

// ---------------------------------------------------------------------------
// Empirical stability bounds
// ---------------------------------------------------------------------------

struct FlowBoundsReport {
  double c_v = 0.0;        // empirical embedding constant
  double field_lhs = 0.0;  // sup |phi^u - phi^v|
  double field_rhs = 0.0;  // c_v ||v-u||_L1 exp(c_v ||v||_L1)
  bool field_ok = false;
  double time_lhs = 0.0;  // worst sup |phi_{0,t} - phi_{0,s}| / (c_v sqrt|t-s| ||v||_L2) numerator
  double time_rhs = 0.0;
  bool time_ok = false;   // holds for every (s,t) pair of the trajectory
};

/// Evaluates both sides of the field-perturbation control
///   |phi^u - phi^v|_inf <= c_V ||v-u||_L1 exp(c_V ||v||_L1)
/// and the time control |phi_{0,t} - phi_{0,s}|_inf <= c_V sqrt|t-s| ||v||_L2
/// for two static kernel fields over [0,T]. c_V is estimated as the max of
/// (sup|w| + sup|dw|) / ||w||_V over a probe grid, w in {u, v, v-u}.
FlowBoundsReport check_flow_bounds(const ParticleField& u, const ParticleField& v, double T,
                                   int steps = 40, int probe_res = 16);

}  // namespace geomatch

#endif
