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
#include "geomatch/hamiltonian.hpp"

#include <algorithm>
#include <cmath>

#include "geomatch/geodesic_system.hpp"

namespace geomatch {

void HamiltonianState::validate() const {
  if (n < 3) throw ConfigError("hamiltonian grid needs n >= 3 (derivative stencils)");
  if (r < 1) throw ConfigError("hamiltonian state needs r >= 1 pieces");
  if (Q0.size() != P0.size() || Q0.size() != curve_weights.size())
    throw ConfigError("curve component counts inconsistent");
  if (int(Q.size()) != r || int(P.size()) != r)
    throw ConfigError("piece grid counts inconsistent");
  for (int i = 0; i < r; ++i)
    if (Q[i].size() != std::size_t(n) * n || P[i].size() != std::size_t(n) * n)
      throw ConfigError("piece grids must be n*n");
  if (!pieces.empty() && int(pieces.size()) != r)
    throw ConfigError("piece polygons must match r");
}

bool HamiltonianState::support_ok(double rel_floor, double slack_cells) const {
  if (pieces.empty()) return true;
  const CellGrid grid{n};
  const double h = grid.spacing();
  for (int i = 0; i < r; ++i) {
    double mx = 0.0;
    for (double p : P[i]) mx = std::max(mx, std::abs(p));
    if (mx == 0.0) continue;
    for (int f = 0; f < grid.size(); ++f) {
      if (std::abs(P[i][f]) <= rel_floor * mx) continue;
      const Vec2 x = grid.node(f);
      if (point_in_polygon(pieces[i], x) != PointLocation::Outside) continue;
      double d = std::numeric_limits<double>::max();
      const auto& vs = pieces[i].vertices;
      for (std::size_t k = 0; k < vs.size(); ++k)
        d = std::min(d, distance_to_segment(x, vs[k], vs[(k + 1) % vs.size()]));
      if (d > slack_cells * h) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Discrete gradient operator
// ---------------------------------------------------------------------------

namespace {

// 1-D stencil along one line of length n with spacing h
inline void d_line(const double* f, int n, double inv2h, int stride, double* out, int ostride) {
  out[0] = (-3 * f[0] + 4 * f[stride] - f[2 * stride]) * inv2h;
  for (int i = 1; i < n - 1; ++i)
    out[i * ostride] = (f[(i + 1) * stride] - f[(i - 1) * stride]) * inv2h;
  out[(n - 1) * ostride] =
      (3 * f[(n - 1) * stride] - 4 * f[(n - 2) * stride] + f[(n - 3) * stride]) * inv2h;
}

// exact adjoint of d_line
inline void dt_line(const double* a, int n, double inv2h, int stride, double* out, int ostride) {
  for (int i = 0; i < n; ++i) out[i * ostride] = 0.0;
  out[0] += -3 * inv2h * a[0];
  out[ostride] += 4 * inv2h * a[0];
  out[2 * ostride] += -inv2h * a[0];
  for (int i = 1; i < n - 1; ++i) {
    out[(i - 1) * ostride] += -inv2h * a[i * stride];
    out[(i + 1) * ostride] += inv2h * a[i * stride];
  }
  out[(n - 1) * ostride] += 3 * inv2h * a[(n - 1) * stride];
  out[(n - 2) * ostride] += -4 * inv2h * a[(n - 1) * stride];
  out[(n - 3) * ostride] += inv2h * a[(n - 1) * stride];
}

}  // namespace

void apply_grad(const std::vector<double>& f, int n, std::vector<Vec2>& out) {
  out.assign(std::size_t(n) * n, Vec2{});
  const double inv2h = 0.5 * n;  // 1/(2h), h = 1/n
  std::vector<double> tmp(n);
  for (int j = 0; j < n; ++j) {  // x-derivative along rows
    d_line(&f[std::size_t(n) * j], n, inv2h, 1, tmp.data(), 1);
    for (int i = 0; i < n; ++i) out[i + std::size_t(n) * j].x = tmp[i];
  }
  for (int i = 0; i < n; ++i) {  // y-derivative along columns
    d_line(&f[i], n, inv2h, n, tmp.data(), 1);
    for (int j = 0; j < n; ++j) out[i + std::size_t(n) * j].y = tmp[j];
  }
}

void apply_grad_transpose(const std::vector<double>& ax, const std::vector<double>& ay, int n,
                          std::vector<double>& out) {
  out.assign(std::size_t(n) * n, 0.0);
  const double inv2h = 0.5 * n;
  std::vector<double> tmp(n);
  for (int j = 0; j < n; ++j) {
    dt_line(&ax[std::size_t(n) * j], n, inv2h, 1, tmp.data(), 1);
    for (int i = 0; i < n; ++i) out[i + std::size_t(n) * j] += tmp[i];
  }
  for (int i = 0; i < n; ++i) {
    dt_line(&ay[i], n, inv2h, n, tmp.data(), 1);
    for (int j = 0; j < n; ++j) out[i + std::size_t(n) * j] += tmp[j];
  }
}

// ---------------------------------------------------------------------------
// Controls and Hamiltonian
// ---------------------------------------------------------------------------

std::pair<ParticleField, ScalarParticleField> minimized_controls(const HamiltonianState& state,
                                                                 const HamiltonianConfig& cfg) {
  state.validate();
  const CellGrid grid{state.n};
  const double w = state.cell_weight();

  ParticleField v;
  v.spec = cfg.kernel_v;
  ScalarParticleField s;
  s.spec = cfg.kernel_s;

  for (std::size_t k = 0; k < state.Q0.size(); ++k) {
    v.nodes.push_back(state.Q0[k]);
    v.covectors.push_back(state.P0[k] * state.curve_weights[k]);
  }
  std::vector<Vec2> gradQ;
  std::vector<Vec2> combined(grid.size(), Vec2{});
  for (int i = 0; i < state.r; ++i) {
    apply_grad(state.Q[i], state.n, gradQ);
    for (int f = 0; f < grid.size(); ++f) combined[f] += gradQ[f] * state.P[i][f];
  }
  for (int f = 0; f < grid.size(); ++f) {
    v.nodes.push_back(grid.node(f));
    v.covectors.push_back(combined[f] * (-w));
  }
  for (int i = 0; i < state.r; ++i)
    for (int f = 0; f < grid.size(); ++f) {
      s.nodes.push_back(state.Q[i][f]);
      s.covectors.push_back(w * state.P[i][f]);
    }
  return {std::move(v), std::move(s)};
}

double hamiltonian_value(const HamiltonianState& state, const HamiltonianConfig& cfg) {
  state.validate();
  const CellGrid grid{state.n};
  const double w = state.cell_weight();
  const double lambda = cfg.kernel_v.scale;
  const double beta = cfg.kernel_s.scale;

  std::vector<Vec2> gradQ;
  std::vector<std::vector<Vec2>> grads(state.r);
  for (int i = 0; i < state.r; ++i) apply_grad(state.Q[i], state.n, grads[i]);

  // curve-curve
  double cc = 0.0;
  for (std::size_t k = 0; k < state.Q0.size(); ++k)
    for (std::size_t l = 0; l < state.Q0.size(); ++l)
      cc += state.curve_weights[k] * state.curve_weights[l] * dot(state.P0[k], state.P0[l]) *
            eval_k(cfg.kernel_v, state.Q0[k], state.Q0[l]);

  // grid-grid (sum over piece pairs through the combined gradient covector)
  std::vector<Vec2> pg(grid.size(), Vec2{});
  for (int i = 0; i < state.r; ++i)
    for (int f = 0; f < grid.size(); ++f) pg[f] += grads[i][f] * state.P[i][f];
  double gg = 0.0;
  for (int a = 0; a < grid.size(); ++a) {
    if (pg[a].x == 0.0 && pg[a].y == 0.0) continue;
    for (int b = 0; b < grid.size(); ++b)
      gg += w * w * dot(pg[a], pg[b]) * eval_k(cfg.kernel_v, grid.node(a), grid.node(b));
  }

  // curve-grid cross term
  double cg = 0.0;
  for (std::size_t k = 0; k < state.Q0.size(); ++k)
    for (int b = 0; b < grid.size(); ++b)
      cg += state.curve_weights[k] * w * dot(state.P0[k], pg[b]) *
            eval_k(cfg.kernel_v, state.Q0[k], grid.node(b));

  // contrast Gram over all (piece, node) pairs
  double ss = 0.0;
  for (int i = 0; i < state.r; ++i)
    for (int j = 0; j < state.r; ++j)
      for (int a = 0; a < grid.size(); ++a) {
        if (state.P[i][a] == 0.0) continue;
        for (int b = 0; b < grid.size(); ++b)
          ss += w * w * state.P[i][a] * state.P[j][b] *
                eval_k(cfg.kernel_s, state.Q[i][a], state.Q[j][b]);
      }

  return (cc + gg - 2.0 * cg) / (2.0 * lambda) + ss / (2.0 * beta);
}

HamiltonianGradients ham_gradients(const HamiltonianState& state, const HamiltonianConfig& cfg) {
  const CellGrid grid{state.n};
  const double w = state.cell_weight();
  auto [v, s] = minimized_controls(state, cfg);

  HamiltonianGradients g;
  const std::size_t ncurve = state.Q0.size();

  // v and dv at curve points
  std::vector<Vec2> vc(ncurve);
  std::vector<Mat2> dvc(ncurve);
  field_eval_many(v, state.Q0, vc.data(), dvc.data());
  g.gP0.resize(ncurve);
  g.gQ0.resize(ncurve);
  for (std::size_t k = 0; k < ncurve; ++k) {
    g.gP0[k] = vc[k];
    g.gQ0[k] = dvc[k].transpose() * state.P0[k];
  }

  // v at grid nodes
  std::vector<Vec2> vg(grid.size());
  field_eval_many(v, grid.nodes(), vg.data(), nullptr);

  g.gP.assign(state.r, std::vector<double>(grid.size(), 0.0));
  g.gQ.assign(state.r, std::vector<double>(grid.size(), 0.0));
  std::vector<Vec2> gradQ;
  std::vector<double> sQ(grid.size()), dsQ(grid.size());
  std::vector<double> fx(grid.size()), fy(grid.size()), div(grid.size());
  for (int i = 0; i < state.r; ++i) {
    apply_grad(state.Q[i], state.n, gradQ);
    field_eval_many(s, state.Q[i], sQ.data(), dsQ.data());
    for (int f = 0; f < grid.size(); ++f) {
      g.gP[i][f] = sQ[f] - dot(vg[f], gradQ[f]);
      fx[f] = w * vg[f].x * state.P[i][f];
      fy[f] = w * vg[f].y * state.P[i][f];
    }
    apply_grad_transpose(fx, fy, state.n, div);
    for (int f = 0; f < grid.size(); ++f)
      g.gQ[i][f] = dsQ[f] * state.P[i][f] - div[f] / w;
  }
  return g;
}

HamiltonianState ham_rhs(const HamiltonianState& state, const HamiltonianConfig& cfg) {
  const HamiltonianGradients g = ham_gradients(state, cfg);
  HamiltonianState d = state;  // copies geometry metadata
  for (std::size_t k = 0; k < state.Q0.size(); ++k) {
    d.Q0[k] = g.gP0[k];
    d.P0[k] = -g.gQ0[k];
  }
  for (int i = 0; i < state.r; ++i)
    for (std::size_t f = 0; f < state.Q[i].size(); ++f) {
      d.Q[i][f] = g.gP[i][f];
      d.P[i][f] = -g.gQ[i][f];
    }
  return d;
}

namespace {

HamiltonianState axpy(const HamiltonianState& x, const HamiltonianState& k, double h) {
  HamiltonianState out = x;
  for (std::size_t i = 0; i < x.Q0.size(); ++i) {
    out.Q0[i] += k.Q0[i] * h;
    out.P0[i] += k.P0[i] * h;
  }
  for (int i = 0; i < x.r; ++i)
    for (std::size_t f = 0; f < x.Q[i].size(); ++f) {
      out.Q[i][f] += h * k.Q[i][f];
      out.P[i][f] += h * k.P[i][f];
    }
  return out;
}

void check_finite(const HamiltonianState& s) {
  for (const Vec2 v : s.Q0)
    if (!finite(v)) throw NonFiniteError("hamiltonian state non-finite (Q0)");
  for (const Vec2 v : s.P0)
    if (!finite(v)) throw NonFiniteError("hamiltonian state non-finite (P0)");
  for (int i = 0; i < s.r; ++i)
    for (std::size_t f = 0; f < s.Q[i].size(); ++f)
      if (!std::isfinite(s.Q[i][f]) || !std::isfinite(s.P[i][f]))
        throw NonFiniteError("hamiltonian state non-finite (grids)");
}

}  // namespace

HamiltonianTrajectory integrate_hamiltonian(const HamiltonianState& state0,
                                            const HamiltonianConfig& cfg, double T, int steps,
                                            Scheme scheme) {
  state0.validate();
  HamiltonianTrajectory traj;
  HamiltonianState x = state0;
  const double h = T / steps;
  traj.states.push_back(x);
  traj.energy.push_back(hamiltonian_value(x, cfg));
  traj.times.push_back(0.0);
  for (int k = 0; k < steps; ++k) {
    if (scheme == Scheme::euler) {
      x = axpy(x, ham_rhs(x, cfg), h);
    } else {
      const HamiltonianState k1 = ham_rhs(x, cfg);
      const HamiltonianState k2 = ham_rhs(axpy(x, k1, h / 2), cfg);
      const HamiltonianState k3 = ham_rhs(axpy(x, k2, h / 2), cfg);
      const HamiltonianState k4 = ham_rhs(axpy(x, k3, h), cfg);
      HamiltonianState sum = axpy(x, k1, h / 6);
      sum = axpy(sum, k2, h / 3);
      sum = axpy(sum, k3, h / 3);
      x = axpy(sum, k4, h / 6);
    }
    check_finite(x);
    traj.states.push_back(x);
    traj.energy.push_back(hamiltonian_value(x, cfg));
    traj.times.push_back((k + 1) * h);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Closed-form reconstruction (the uniqueness theorem's solution)
// ---------------------------------------------------------------------------

std::vector<ReconstructedState> reconstruct(const HamiltonianState& state0,
                                            const HamiltonianConfig& cfg, double T, int steps) {
  state0.validate();
  using detail::StageField;
  using detail::SysParams;
  using detail::SysState;

  const CellGrid grid{state0.n};
  const double w = state0.cell_weight();
  const std::size_t ncurve = state0.Q0.size();
  const std::size_t ngrid = std::size_t(grid.size());

  // initial particle reduction: the grid covector is
  // p_a = -sum_i P^i_0 grad Q^i_0, curve covectors carry P0.
  std::vector<std::vector<Vec2>> grads0(state0.r);
  for (int i = 0; i < state0.r; ++i) apply_grad(state0.Q[i], state0.n, grads0[i]);

  SysParams<double> P;
  SysState<double> X;
  const std::size_t nsp = ncurve + ngrid;
  P.w.reserve(nsp);
  P.px.reserve(nsp);
  P.py.reserve(nsp);
  for (std::size_t k = 0; k < ncurve; ++k) {
    P.w.push_back(state0.curve_weights[k]);
    P.px.push_back(state0.P0[k].x);
    P.py.push_back(state0.P0[k].y);
    X.qx.push_back(state0.Q0[k].x);
    X.qy.push_back(state0.Q0[k].y);
  }
  for (std::size_t f = 0; f < ngrid; ++f) {
    Vec2 pa{};
    for (int i = 0; i < state0.r; ++i) pa -= grads0[i][f] * state0.P[i][f];
    P.w.push_back(w);
    P.px.push_back(pa.x);
    P.py.push_back(pa.y);
    const Vec2 x = grid.node(int(f));
    X.qx.push_back(x.x);
    X.qy.push_back(x.y);
  }
  X.D.assign(4 * nsp, 0.0);
  X.E.assign(4 * nsp, 0.0);
  for (std::size_t i = 0; i < nsp; ++i) {
    X.D[4 * i] = X.D[4 * i + 3] = 1.0;
    X.E[4 * i] = X.E[4 * i + 3] = 1.0;
  }
  X.lj.assign(nsp, 0.0);
  // contrast particles: one per (piece, grid node)
  for (int i = 0; i < state0.r; ++i)
    for (std::size_t f = 0; f < ngrid; ++f) {
      P.wc.push_back(w);
      P.pc.push_back(state0.P[i][f]);
      X.z.push_back(state0.Q[i][f]);
    }
  X.e.assign(X.z.size(), 1.0);
  P.lambda = cfg.kernel_v.scale;
  P.sigma_v = cfg.kernel_v.sigma;
  P.beta = cfg.kernel_s.scale;
  P.sigma_s = cfg.kernel_s.sigma;

  std::vector<ReconstructedState> out;
  const double h = T / steps;
  auto emit = [&](double t) {
    ReconstructedState rs;
    rs.time = t;
    rs.Q0.resize(ncurve);
    rs.P0.resize(ncurve);
    for (std::size_t k = 0; k < ncurve; ++k) {
      rs.Q0[k] = {X.qx[k], X.qy[k]};
      const Mat2 D{X.D[4 * k], X.D[4 * k + 1], X.D[4 * k + 2], X.D[4 * k + 3]};
      rs.P0[k] = solve_transposed(D, state0.P0[k]);
    }
    rs.grid_positions.resize(ngrid);
    rs.grid_jacobians.resize(ngrid);
    for (std::size_t f = 0; f < ngrid; ++f) {
      const std::size_t i = ncurve + f;
      rs.grid_positions[f] = {X.qx[i], X.qy[i]};
      const Mat2 D{X.D[4 * i], X.D[4 * i + 1], X.D[4 * i + 2], X.D[4 * i + 3]};
      rs.grid_jacobians[f] = D.det();
    }
    rs.Qi.assign(state0.r, std::vector<double>(ngrid));
    rs.Pi.assign(state0.r, std::vector<double>(ngrid));
    for (int i = 0; i < state0.r; ++i)
      for (std::size_t f = 0; f < ngrid; ++f) {
        const std::size_t m = std::size_t(i) * ngrid + f;
        rs.Qi[i][f] = X.z[m];
        rs.Pi[i][f] = state0.P[i][f] / (rs.grid_jacobians[f] * X.e[m]);
      }
    out.push_back(std::move(rs));
  };

  emit(0.0);
  const StageField<double>* no_external = nullptr;
  std::vector<StageField<double>>* no_record = nullptr;
  for (int k = 0; k < steps; ++k) {
    detail::sys_rk4_step(X, P, h, no_external, no_record);
    emit((k + 1) * h);
  }
  return out;
}

}  // namespace geomatch
