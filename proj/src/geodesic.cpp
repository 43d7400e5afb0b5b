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
#include "geomatch/geodesic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geomatch/geodesic_system.hpp"

namespace geomatch {

MomentumTriple MomentumTriple::zero(std::size_t grid_nodes, std::size_t curve_nodes) {
  MomentumTriple m;
  m.p_a.assign(grid_nodes, Vec2{});
  m.p_b.assign(curve_nodes, Vec2{});
  m.p_c.assign(grid_nodes, 0.0);
  return m;
}

MomentumTriple MomentumTriple::scaled(double c) const {
  MomentumTriple out = *this;
  for (auto& v : out.p_a) v *= c;
  for (auto& v : out.p_b) v *= c;
  for (auto& v : out.p_c) v *= c;
  return out;
}

ShootingProblem ShootingProblem::build(const PiecewiseImage& I0, int grid_n) {
  ShootingProblem p;
  p.grid = CellGrid{grid_n};
  p.grid_nodes = p.grid.nodes();
  p.grid_weights.assign(p.grid.size(), p.grid.weight());
  for (const auto& node : curve_quadrature(I0.jump)) {
    p.curve_nodes.push_back(node.node);
    p.curve_weights.push_back(node.weight);
    p.curve_normals.push_back(node.normal);
  }
  for (const auto& seg : I0.jump.segments) {
    p.curve_fplus.push_back(seg.f_plus);
    p.curve_fminus.push_back(seg.f_minus);
  }
  p.contrast_seeds.reserve(p.grid_nodes.size());
  for (const Vec2 x : p.grid_nodes) p.contrast_seeds.push_back(I0.eval_raw(x));
  p.source = I0;
  return p;
}

namespace {

using detail::StageField;
using detail::SysParams;
using detail::SysState;

SysParams<double> make_params(const ShootingProblem& prob, const GeodesicConfig& cfg,
                              const MomentumTriple& mom) {
  if (mom.p_a.size() != prob.grid_nodes.size() || mom.p_c.size() != prob.grid_nodes.size() ||
      mom.p_b.size() != prob.curve_nodes.size())
    throw std::invalid_argument("momentum sizes do not match the shooting problem");
  SysParams<double> P;
  P.w = prob.grid_weights;
  P.w.insert(P.w.end(), prob.curve_weights.begin(), prob.curve_weights.end());
  P.px.reserve(P.w.size());
  P.py.reserve(P.w.size());
  for (const Vec2 v : mom.p_a) {
    P.px.push_back(v.x);
    P.py.push_back(v.y);
  }
  for (const Vec2 v : mom.p_b) {
    P.px.push_back(v.x);
    P.py.push_back(v.y);
  }
  P.wc = prob.grid_weights;
  P.pc = mom.p_c;
  P.lambda = cfg.kernel_v.scale;
  P.sigma_v = cfg.kernel_v.sigma;
  P.beta = cfg.kernel_s.scale;
  P.sigma_s = cfg.kernel_s.sigma;
  return P;
}

SysState<double> make_state(const ShootingProblem& prob, const std::vector<double>& ladder,
                            const std::vector<double>& passive) {
  SysState<double> X;
  const std::size_t n = prob.n_spatial();
  X.qx.reserve(n);
  X.qy.reserve(n);
  for (const Vec2 v : prob.grid_nodes) {
    X.qx.push_back(v.x);
    X.qy.push_back(v.y);
  }
  for (const Vec2 v : prob.curve_nodes) {
    X.qx.push_back(v.x);
    X.qy.push_back(v.y);
  }
  X.D.assign(4 * n, 0.0);
  X.E.assign(4 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    X.D[4 * i] = X.D[4 * i + 3] = 1.0;
    X.E[4 * i] = X.E[4 * i + 3] = 1.0;
  }
  X.lj.assign(n, 0.0);
  X.z = prob.contrast_seeds;
  X.e.assign(X.z.size(), 1.0);
  X.pz = ladder;
  X.pz.insert(X.pz.end(), passive.begin(), passive.end());
  X.pe.assign(X.pz.size(), 1.0);
  return X;
}

FieldPair to_field_pair(const StageField<double>& F, const GeodesicConfig& cfg) {
  FieldPair out;
  out.v.spec = cfg.kernel_v;
  out.s.spec = cfg.kernel_s;
  out.v.nodes.resize(F.qx.size());
  out.v.covectors.resize(F.qx.size());
  for (std::size_t j = 0; j < F.qx.size(); ++j) {
    out.v.nodes[j] = {F.qx[j], F.qy[j]};
    out.v.covectors[j] = {F.cx[j], F.cy[j]};
  }
  out.s.nodes = F.z;
  out.s.covectors = F.gam;
  return out;
}

StageField<double> to_stage_field(const FieldPair& fp) {
  StageField<double> F;
  F.qx.resize(fp.v.nodes.size());
  F.qy.resize(fp.v.nodes.size());
  F.cx.resize(fp.v.nodes.size());
  F.cy.resize(fp.v.nodes.size());
  for (std::size_t j = 0; j < fp.v.nodes.size(); ++j) {
    F.qx[j] = fp.v.nodes[j].x;
    F.qy[j] = fp.v.nodes[j].y;
    F.cx[j] = fp.v.covectors[j].x;
    F.cy[j] = fp.v.covectors[j].y;
  }
  F.z = fp.s.nodes;
  F.gam = fp.s.covectors;
  return F;
}

ShootingState snapshot(const SysState<double>& X, std::size_t n_grid, double t) {
  ShootingState st;
  st.time = t;
  const std::size_t n = X.n_spatial();
  auto fill = [&](FlowState& fs, std::size_t begin, std::size_t end) {
    fs.time = t;
    for (std::size_t i = begin; i < end; ++i) {
      fs.positions.push_back({X.qx[i], X.qy[i]});
      const Mat2 D{X.D[4 * i], X.D[4 * i + 1], X.D[4 * i + 2], X.D[4 * i + 3]};
      fs.differentials.push_back(D);
      fs.jacobians.push_back(D.det());
      if (!finite(fs.positions.back()) || !finite(D))
        throw NonFiniteError("shooting state became non-finite");
    }
  };
  fill(st.grid_flow, 0, n_grid);
  fill(st.curve_flow, n_grid, n);
  st.contrast_flow.time = t;
  st.contrast_flow.values = X.z;
  st.contrast_flow.derivatives = X.e;
  st.inv_differentials.resize(n);
  st.log_jacobians.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    st.inv_differentials[i] = {X.E[4 * i], X.E[4 * i + 1], X.E[4 * i + 2], X.E[4 * i + 3]};
    st.log_jacobians[i] = X.lj[i];
  }
  return st;
}

std::vector<double> eta_ladder(const std::vector<double>& seeds, int count) {
  if (count <= 0 || seeds.empty()) return {};
  double lo = *std::min_element(seeds.begin(), seeds.end());
  double hi = *std::max_element(seeds.begin(), seeds.end());
  const double pad = 0.1 * std::max(1e-3, hi - lo);
  lo -= pad;
  hi += pad;
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) out[i] = lo + (hi - lo) * i / (count - 1);
  return out;
}

}  // namespace

FieldPair velocities_from_momenta(const ShootingProblem& prob, const GeodesicConfig& cfg,
                                  const ShootingState& state, const MomentumTriple& mom) {
  FieldPair out;
  out.v.spec = cfg.kernel_v;
  out.s.spec = cfg.kernel_s;
  const std::size_t ng = prob.grid_nodes.size();
  const std::size_t nc = prob.curve_nodes.size();
  out.v.nodes.reserve(ng + nc);
  out.v.covectors.reserve(ng + nc);
  for (std::size_t j = 0; j < ng; ++j) {
    out.v.nodes.push_back(state.grid_flow.positions[j]);
    out.v.covectors.push_back(
        solve_transposed(state.grid_flow.differentials[j], mom.p_a[j]) * prob.grid_weights[j]);
  }
  for (std::size_t k = 0; k < nc; ++k) {
    out.v.nodes.push_back(state.curve_flow.positions[k]);
    out.v.covectors.push_back(
        solve_transposed(state.curve_flow.differentials[k], mom.p_b[k]) * prob.curve_weights[k]);
  }
  out.s.nodes = state.contrast_flow.values;
  out.s.covectors.resize(ng);
  for (std::size_t m = 0; m < ng; ++m)
    out.s.covectors[m] = prob.grid_weights[m] * mom.p_c[m] / state.contrast_flow.derivatives[m];
  return out;
}

ShootingTrajectory shoot(const ShootingProblem& prob, const MomentumTriple& mom,
                         const GeodesicConfig& cfg, const std::vector<double>& passive_seeds) {
  ShootingTrajectory traj;
  traj.problem = prob;
  traj.momenta = mom;
  traj.cfg = cfg;
  traj.ladder_seeds = eta_ladder(prob.contrast_seeds, cfg.eta_samples);
  traj.passive_seeds = passive_seeds;

  const SysParams<double> P = make_params(prob, cfg, mom);
  SysState<double> X = make_state(prob, traj.ladder_seeds, passive_seeds);
  const std::size_t n_ladder = traj.ladder_seeds.size();

  const int N = cfg.steps;
  const double h = traj.T() / N;
  traj.states.reserve(N + 1);
  traj.stage_fields.reserve(N);

  auto push_knot = [&](double t) {
    ShootingState st = snapshot(X, prob.grid_nodes.size(), t);
    traj.ladder_values.push_back(std::vector<double>(X.pz.begin(), X.pz.begin() + n_ladder));
    traj.ladder_derivatives.push_back(std::vector<double>(X.pe.begin(), X.pe.begin() + n_ladder));
    traj.passive_values.push_back(std::vector<double>(X.pz.begin() + n_ladder, X.pz.end()));
    traj.states.push_back(std::move(st));
  };
  push_knot(0.0);

  const StageField<double>* no_external = nullptr;
  for (int k = 0; k < N; ++k) {
    std::vector<StageField<double>> stages;
    if (cfg.scheme == Scheme::rk4)
      detail::sys_rk4_step(X, P, h, no_external, &stages);
    else
      detail::sys_euler_step(X, P, h, no_external, &stages);
    std::vector<FieldPair> fp;
    fp.reserve(stages.size());
    for (const auto& st : stages) fp.push_back(to_field_pair(st, cfg));
    traj.stage_fields.push_back(std::move(fp));
    push_knot((k + 1) * h);
  }

  StageField<double> Ffinal;
  detail::assemble_covectors(X, P, Ffinal);
  traj.final_field = to_field_pair(Ffinal, cfg);

  // knot speeds: pairing norms of the knot fields
  for (int k = 0; k <= N; ++k) {
    const FieldPair& f = k < N ? traj.stage_fields[k][0] : traj.final_field;
    traj.states[k].speed_v_sq = rkhs_norm_sq(f.v);
    traj.states[k].speed_s_sq = rkhs_norm_sq(f.s);
  }
  return traj;
}

ShootingTrajectory shoot(const PiecewiseImage& I0, int grid_n, const MomentumTriple& mom,
                         const GeodesicConfig& cfg) {
  return shoot(ShootingProblem::build(I0, grid_n), mom, cfg);
}

std::vector<std::tuple<double, double, double>> speed_profile(const ShootingTrajectory& traj) {
  std::vector<std::tuple<double, double, double>> out;
  out.reserve(traj.states.size());
  for (const auto& st : traj.states) out.emplace_back(st.time, st.speed_v_sq, st.speed_s_sq);
  return out;
}

TransportedMomenta transport_momentum(const ShootingTrajectory& traj) {
  TransportedMomenta tm;
  const auto& mom = traj.momenta;
  const std::size_t ng = traj.problem.grid_nodes.size();
  const std::size_t nc = traj.problem.curve_nodes.size();
  for (const auto& st : traj.states) {
    std::vector<Vec2> spat(ng + nc);
    for (std::size_t j = 0; j < ng; ++j)
      spat[j] = st.inv_differentials[j].transpose() * mom.p_a[j];
    for (std::size_t k = 0; k < nc; ++k)
      spat[ng + k] = st.inv_differentials[ng + k].transpose() * mom.p_b[k];
    std::vector<double> contrast(ng), jac(ng);
    for (std::size_t m = 0; m < ng; ++m) {
      jac[m] = std::exp(st.log_jacobians[m]);
      contrast[m] = mom.p_c[m] / (jac[m] * st.contrast_flow.derivatives[m]);
    }
    tm.spatial.push_back(std::move(spat));
    tm.contrast.push_back(std::move(contrast));
    tm.jacobians.push_back(std::move(jac));
  }
  return tm;
}

FieldPair velocities_from_transport(const ShootingTrajectory& traj, const TransportedMomenta& tm,
                                    int knot) {
  const auto& st = traj.states[knot];
  const auto& prob = traj.problem;
  FieldPair out;
  out.v.spec = traj.cfg.kernel_v;
  out.s.spec = traj.cfg.kernel_s;
  const std::size_t ng = prob.grid_nodes.size();
  const std::size_t nc = prob.curve_nodes.size();
  for (std::size_t j = 0; j < ng; ++j) {
    out.v.nodes.push_back(st.grid_flow.positions[j]);
    out.v.covectors.push_back(tm.spatial[knot][j] * prob.grid_weights[j]);
  }
  for (std::size_t k = 0; k < nc; ++k) {
    out.v.nodes.push_back(st.curve_flow.positions[k]);
    out.v.covectors.push_back(tm.spatial[knot][ng + k] * prob.curve_weights[k]);
  }
  out.s.nodes = st.contrast_flow.values;
  out.s.covectors.resize(ng);
  for (std::size_t m = 0; m < ng; ++m)
    out.s.covectors[m] = prob.grid_weights[m] * tm.jacobians[knot][m] * tm.contrast[knot][m];
  return out;
}

namespace {

const FieldPair& field_at_half_index(const ShootingTrajectory& traj, int half) {
  const int N = traj.steps();
  half = std::clamp(half, 0, 2 * N);
  if (half % 2 == 0) {
    const int k = half / 2;
    return k < N ? traj.stage_fields[k][0] : traj.final_field;
  }
  const int k = (half - 1) / 2;
  const auto& stages = traj.stage_fields[k];
  return stages.size() >= 3 ? stages[2] : stages[0];
}

}  // namespace

VelocityOracle stage_record_oracle(const ShootingTrajectory& traj) {
  const int N = traj.steps();
  const double T = traj.T();
  return [&traj, N, T](Vec2 x, double t) -> VelocitySample {
    const int half = int(std::lround(2 * N * t / T));
    const FieldPair& f = field_at_half_index(traj, half);
    return {field_eval(f.v, x), field_jacobian(f.v, x)};
  };
}

ContrastOracle stage_record_contrast_oracle(const ShootingTrajectory& traj) {
  const int N = traj.steps();
  const double T = traj.T();
  return [&traj, N, T](double z, double t) -> ContrastSample {
    const int half = int(std::lround(2 * N * t / T));
    const FieldPair& f = field_at_half_index(traj, half);
    return {field_eval(f.s, z), field_deriv(f.s, z)};
  };
}

std::vector<Vec2> reverse_flow_positions(const ShootingTrajectory& traj,
                                         const std::vector<Vec2>& seeds) {
  const FlowTrajectory rev = integrate_flow_reverse(stage_record_oracle(traj), seeds,
                                                    traj.steps(), traj.cfg.scheme, traj.T());
  return rev.final_state().positions;
}

double ShootingTrajectory::eta_push_at(int knot, double value) const {
  // merge momentum-carrying and passive eta samples into a monotone map
  std::vector<std::pair<double, double>> samples;
  const auto& st = states[knot];
  samples.reserve(problem.contrast_seeds.size() + ladder_seeds.size());
  for (std::size_t m = 0; m < problem.contrast_seeds.size(); ++m)
    samples.emplace_back(problem.contrast_seeds[m], st.contrast_flow.values[m]);
  for (std::size_t m = 0; m < ladder_seeds.size(); ++m)
    samples.emplace_back(ladder_seeds[m], ladder_values[knot][m]);
  std::sort(samples.begin(), samples.end());
  std::vector<std::pair<double, double>> uniq;
  for (const auto& s : samples)
    if (uniq.empty() || s.first - uniq.back().first > 1e-14) uniq.push_back(s);
  if (uniq.empty()) return value;
  if (uniq.size() == 1) return uniq.front().second + (value - uniq.front().first);
  if (value <= uniq.front().first) {
    const auto [z0, w0] = uniq[0];
    const auto [z1, w1] = uniq[1];
    return w0 + (value - z0) * (w1 - w0) / (z1 - z0);
  }
  if (value >= uniq.back().first) {
    const auto [z0, w0] = uniq[uniq.size() - 2];
    const auto [z1, w1] = uniq.back();
    return w1 + (value - z1) * (w1 - w0) / (z1 - z0);
  }
  auto it = std::upper_bound(uniq.begin(), uniq.end(), std::make_pair(value, 1e300));
  const auto [z1, w1] = *it;
  const auto [z0, w0] = *(it - 1);
  return w0 + (value - z0) * (w1 - w0) / (z1 - z0);
}

double ShootingTrajectory::eta_push(double value) const {
  return eta_push_at(int(states.size()) - 1, value);
}

PiecewiseImage final_image(const ShootingTrajectory& traj, int edge_subdiv) {
  const PiecewiseImage& src = traj.problem.source;
  const VelocityOracle oracle = stage_record_oracle(traj);

  // transported piece polygons (vertex-wise, optionally with subdivided edges)
  std::vector<LipschitzDomain> moved;
  moved.reserve(src.pieces.size());
  for (const auto& piece : src.pieces) {
    LipschitzDomain fine;
    const std::size_t n = piece.vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 a = piece.vertices[i], b = piece.vertices[(i + 1) % n];
      for (int s = 0; s < edge_subdiv; ++s)
        fine.vertices.push_back(a + (b - a) * (double(s) / edge_subdiv));
    }
    const FlowTrajectory ft =
        integrate_flow(oracle, fine.vertices, traj.steps(), traj.cfg.scheme, traj.T());
    fine.vertices = ft.final_state().positions;
    moved.push_back(std::move(fine));
  }

  // pulled-back, contrast-pushed intensity grids
  const int res = src.grid_resolution;
  std::vector<Vec2> lattice;
  lattice.reserve(std::size_t(res + 1) * (res + 1));
  for (int j = 0; j <= res; ++j)
    for (int i = 0; i <= res; ++i) lattice.push_back({double(i) / res, double(j) / res});
  const std::vector<Vec2> back = reverse_flow_positions(traj, lattice);

  std::vector<IntensityGrid> grids;
  grids.reserve(src.pieces.size());
  for (std::size_t p = 0; p < src.pieces.size(); ++p) {
    IntensityGrid g;
    g.res = res;
    g.values.resize(lattice.size());
    for (std::size_t i = 0; i < lattice.size(); ++i)
      g.values[i] = traj.eta_push(src.intensities[p].eval(back[i]));
    grids.push_back(std::move(g));
  }

  ProjectOptions opts;
  opts.validate_tiling = false;  // phi(M) only approximates M
  return project(std::move(grids), std::move(moved), opts);
}

// ---------------------------------------------------------------------------
// Picard map
// ---------------------------------------------------------------------------

FieldRecord zero_field_record(const ShootingProblem& prob, const GeodesicConfig& cfg, int steps,
                              double T) {
  FieldRecord rec;
  rec.T = T;
  rec.scheme = cfg.scheme;
  FieldPair zero;
  zero.v.spec = cfg.kernel_v;
  zero.s.spec = cfg.kernel_s;
  zero.v.nodes = prob.grid_nodes;
  zero.v.covectors.assign(prob.grid_nodes.size(), Vec2{});
  zero.s.nodes = prob.contrast_seeds;
  zero.s.covectors.assign(prob.contrast_seeds.size(), 0.0);
  const int per_step = cfg.scheme == Scheme::rk4 ? 4 : 1;
  rec.stages.assign(steps, std::vector<FieldPair>(per_step, zero));
  rec.final_field = zero;
  return rec;
}

FieldRecord field_record_of(const ShootingTrajectory& traj) {
  FieldRecord rec;
  rec.T = traj.T();
  rec.scheme = traj.cfg.scheme;
  rec.stages = traj.stage_fields;
  rec.final_field = traj.final_field;
  return rec;
}

FieldRecord picard_step(const FieldRecord& candidate, const ShootingProblem& prob,
                        const MomentumTriple& mom, const GeodesicConfig& cfg) {
  const int N = candidate.steps();
  const double h = candidate.T / N;
  const SysParams<double> P = make_params(prob, cfg, mom);
  SysState<double> X = make_state(prob, {}, {});

  FieldRecord out;
  out.T = candidate.T;
  out.scheme = candidate.scheme;
  out.stages.reserve(N);
  for (int k = 0; k < N; ++k) {
    std::vector<StageField<double>> external;
    external.reserve(candidate.stages[k].size());
    for (const auto& fp : candidate.stages[k]) external.push_back(to_stage_field(fp));
    std::vector<StageField<double>> rebuilt;
    if (candidate.scheme == Scheme::rk4)
      detail::sys_rk4_step(X, P, h, external.data(), &rebuilt);
    else
      detail::sys_euler_step(X, P, h, external.data(), &rebuilt);
    std::vector<FieldPair> fp;
    for (const auto& st : rebuilt) fp.push_back(to_field_pair(st, cfg));
    out.stages.push_back(std::move(fp));
  }
  StageField<double> Ffinal;
  detail::assemble_covectors(X, P, Ffinal);
  out.final_field = to_field_pair(Ffinal, cfg);
  return out;
}

double field_record_distance(const FieldRecord& a, const FieldRecord& b) {
  if (a.steps() != b.steps()) throw std::invalid_argument("field records differ in step count");
  const int N = a.steps();
  const double h = a.T / N;
  auto knot = [](const FieldRecord& r, int k) -> const FieldPair& {
    return k < r.steps() ? r.stages[k][0] : r.final_field;
  };
  double acc = 0.0;
  for (int k = 0; k <= N; ++k) {
    const FieldPair& fa = knot(a, k);
    const FieldPair& fb = knot(b, k);
    const double dv = (rkhs_norm_sq(fa.v) + rkhs_norm_sq(fb.v) - 2 * field_pairing(fa.v, fb.v)) /
                      fa.v.spec.scale;
    const double ds = (rkhs_norm_sq(fa.s) + rkhs_norm_sq(fb.s) - 2 * field_pairing(fa.s, fb.s)) /
                      fa.s.spec.scale;
    const double w = (k == 0 || k == N) ? 0.5 * h : h;
    acc += w * (std::max(0.0, dv) + std::max(0.0, ds));
  }
  return std::sqrt(acc);
}

}  // namespace geomatch
