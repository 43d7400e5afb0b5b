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
#include "geomatch/matching.hpp"

#include <algorithm>
#include <cmath>

#include "geomatch/dual.hpp"
#include "geomatch/geodesic_system.hpp"

namespace geomatch {

using detail::StageField;
using detail::SysParams;
using detail::SysState;

void MatchConfig::validate() const {
  if (lambda <= 0 || beta <= 0 || sigma_v <= 0 || sigma_s <= 0 || sigma_attach <= 0)
    throw ConfigError("match config: weights and widths must be positive");
  if (!(armijo_c > 0 && armijo_c <= 0.5)) throw ConfigError("armijo_c must lie in (0, 0.5]");
  if (!(armijo_shrink > 0 && armijo_shrink < 1)) throw ConfigError("armijo_shrink in (0,1)");
  if (steps < 1 || max_iters < 0 || channels < 1) throw ConfigError("match config: bad counts");
}

GeodesicConfig MatchConfig::geodesic() const {
  GeodesicConfig g;
  g.kernel_v.sigma = sigma_v;
  g.kernel_v.scale = lambda;
  g.kernel_v.dimension = 2;
  g.kernel_s.sigma = sigma_s;
  g.kernel_s.scale = beta;
  g.kernel_s.dimension = 1;
  g.steps = steps;
  g.scheme = scheme;
  return g;
}

MatchProblem MatchProblem::build(const PiecewiseImage& I0, const PiecewiseImage& Itarg,
                                 const MatchConfig& cfg) {
  if (I0.grid_resolution != Itarg.grid_resolution)
    throw ConfigError("match: images must share the grid resolution");
  MatchProblem mp;
  const int n = cfg.grid_n > 0 ? cfg.grid_n : I0.grid_resolution;
  mp.shooting = ShootingProblem::build(I0, n);
  mp.target_lattice = IntensityGrid::from_function(Itarg.grid_resolution,
                                                   [&](Vec2 x) { return Itarg.eval_raw(x); });
  mp.target_jump = Itarg.jump.segments;
  mp.target_image = Itarg;
  return mp;
}

// ---------------------------------------------------------------------------
// Templated attachment endpoint
// ---------------------------------------------------------------------------

namespace {

template <class T>
T lattice_eval_t(const IntensityGrid& g, T x, T y) {
  using detail::value_of;
  const int res = g.res;
  double vx = std::clamp(value_of(x), 0.0, 1.0);
  double vy = std::clamp(value_of(y), 0.0, 1.0);
  const int i0 = std::min(res - 1, int(vx * res));
  const int j0 = std::min(res - 1, int(vy * res));
  const T tx = x * double(res) - double(i0);
  const T ty = y * double(res) - double(j0);
  const T one{1.0};
  return (one - tx) * (one - ty) * g.at(i0, j0) + tx * (one - ty) * g.at(i0 + 1, j0) +
         (one - tx) * ty * g.at(i0, j0 + 1) + tx * ty * g.at(i0 + 1, j0 + 1);
}

Vec2 lattice_grad(const IntensityGrid& g, Vec2 p) {
  const int res = g.res;
  const double vx = std::clamp(p.x, 0.0, 1.0);
  const double vy = std::clamp(p.y, 0.0, 1.0);
  const int i0 = std::min(res - 1, int(vx * res));
  const int j0 = std::min(res - 1, int(vy * res));
  const double tx = p.x * res - i0, ty = p.y * res - j0;
  const double dx = ((1 - ty) * (g.at(i0 + 1, j0) - g.at(i0, j0)) +
                     ty * (g.at(i0 + 1, j0 + 1) - g.at(i0, j0 + 1))) *
                    res;
  const double dy = ((1 - tx) * (g.at(i0, j0 + 1) - g.at(i0, j0)) +
                     tx * (g.at(i0 + 1, j0 + 1) - g.at(i0 + 1, j0))) *
                    res;
  return {dx, dy};
}

/// Exclusion mask: grid labels whose final position lies within one cell
/// width of the (transported) source jump or of the target jump.
std::vector<char> compute_masks(const std::vector<Vec2>& grid_final,
                                const std::vector<Vec2>& curve_final, const MatchProblem& mp) {
  const double h = mp.shooting.grid.spacing();
  std::vector<char> mask(grid_final.size(), 1);
  for (std::size_t j = 0; j < grid_final.size(); ++j) {
    const Vec2 q = grid_final[j];
    for (const Vec2 c : curve_final)
      if (norm_sq(q - c) <= h * h) {
        mask[j] = 0;
        break;
      }
    if (!mask[j]) continue;
    for (const auto& seg : mp.target_jump)
      if (distance_to_segment(q, seg.a, seg.b) <= h) {
        mask[j] = 0;
        break;
      }
  }
  return mask;
}

template <class T>
T attach_channel(const T* values, const SysState<T>& X, std::size_t n_grid,
                 const std::vector<double>& w, const IntensityGrid& target, double sigma,
                 const std::vector<char>& mask) {
  T acc{};
  const double inv_s2 = 1.0 / (sigma * sigma);
  for (std::size_t j = 0; j < n_grid; ++j) {
    if (!mask[j]) continue;
    const T* D = &X.D[4 * j];
    const T det = D[0] * D[3] - D[1] * D[2];
    const T r = values[j] - lattice_eval_t(target, X.qx[j], X.qy[j]);
    acc += w[j] * inv_s2 * det * r * r;
  }
  return acc;
}

template <class T>
T attachment_endpoint(const SysState<T>& X, const MatchProblem& mp, double sigma_attach,
                      std::size_t passive_offset) {
  using detail::value_of;
  const std::size_t ng = mp.shooting.grid_nodes.size();
  std::vector<Vec2> gridq(ng), curveq(mp.shooting.curve_nodes.size());
  for (std::size_t j = 0; j < ng; ++j) gridq[j] = {value_of(X.qx[j]), value_of(X.qy[j])};
  for (std::size_t k = 0; k < curveq.size(); ++k)
    curveq[k] = {value_of(X.qx[ng + k]), value_of(X.qy[ng + k])};
  const std::vector<char> mask = compute_masks(gridq, curveq, mp);

  T acc = attach_channel(X.z.data(), X, ng, mp.shooting.grid_weights, mp.target_lattice,
                         sigma_attach, mask);
  for (std::size_t c = 0; c < mp.channels.size(); ++c)
    acc += attach_channel(X.pz.data() + passive_offset + c * ng, X, ng,
                          mp.shooting.grid_weights, mp.channels[c].target, mp.channels[c].sigma,
                          mask);
  return acc;
}

template <class T>
T kinetic_form(const SysParams<T>& P, const std::vector<Vec2>& nodes0,
               const std::vector<double>& seeds0, double sigma_v, double sigma_s) {
  const double inv2v = 0.5 / (sigma_v * sigma_v);
  const double inv2s = 0.5 / (sigma_s * sigma_s);
  T accv{};
  for (std::size_t i = 0; i < nodes0.size(); ++i)
    for (std::size_t j = 0; j < nodes0.size(); ++j) {
      const double k = std::exp(-norm_sq(nodes0[i] - nodes0[j]) * inv2v);
      accv += k * (P.w[i] * P.px[i] * (P.w[j] * P.px[j]) + P.w[i] * P.py[i] * (P.w[j] * P.py[j]));
    }
  T accs{};
  for (std::size_t i = 0; i < seeds0.size(); ++i)
    for (std::size_t j = 0; j < seeds0.size(); ++j) {
      const double d = seeds0[i] - seeds0[j];
      const double k = std::exp(-d * d * inv2s);
      accs += k * (P.wc[i] * P.pc[i]) * (P.wc[j] * P.pc[j]);
    }
  return accv / P.lambda * 0.5 + accs / P.beta * 0.5;
}

std::vector<Vec2> all_nodes0(const ShootingProblem& prob) {
  std::vector<Vec2> nodes = prob.grid_nodes;
  nodes.insert(nodes.end(), prob.curve_nodes.begin(), prob.curve_nodes.end());
  return nodes;
}

std::vector<double> channel_seeds(const MatchProblem& mp) {
  std::vector<double> out;
  for (const auto& c : mp.channels) out.insert(out.end(), c.seeds.begin(), c.seeds.end());
  return out;
}

template <class T>
SysParams<T> params_t(const ShootingProblem& prob, const MatchConfig& cfg,
                      const MomentumTriple& mom) {
  SysParams<T> P;
  P.w = prob.grid_weights;
  P.w.insert(P.w.end(), prob.curve_weights.begin(), prob.curve_weights.end());
  for (const Vec2 v : mom.p_a) {
    P.px.push_back(T(v.x));
    P.py.push_back(T(v.y));
  }
  for (const Vec2 v : mom.p_b) {
    P.px.push_back(T(v.x));
    P.py.push_back(T(v.y));
  }
  P.wc = prob.grid_weights;
  for (double p : mom.p_c) P.pc.push_back(T(p));
  P.lambda = cfg.lambda;
  P.sigma_v = cfg.sigma_v;
  P.beta = cfg.beta;
  P.sigma_s = cfg.sigma_s;
  return P;
}

template <class T>
SysState<T> state0_t(const ShootingProblem& prob, const std::vector<double>& passive) {
  SysState<T> X;
  const std::size_t n = prob.n_spatial();
  for (const Vec2 v : prob.grid_nodes) {
    X.qx.push_back(T(v.x));
    X.qy.push_back(T(v.y));
  }
  for (const Vec2 v : prob.curve_nodes) {
    X.qx.push_back(T(v.x));
    X.qy.push_back(T(v.y));
  }
  X.D.assign(4 * n, T(0.0));
  X.E.assign(4 * n, T(0.0));
  for (std::size_t i = 0; i < n; ++i) {
    X.D[4 * i] = X.D[4 * i + 3] = T(1.0);
    X.E[4 * i] = X.E[4 * i + 3] = T(1.0);
  }
  X.lj.assign(n, T(0.0));
  for (double z : prob.contrast_seeds) X.z.push_back(T(z));
  X.e.assign(X.z.size(), T(1.0));
  for (double z : passive) X.pz.push_back(T(z));
  X.pe.assign(X.pz.size(), T(1.0));
  return X;
}

template <class T>
T energy_total_t(const MomentumTriple& mom, const MatchProblem& mp, const MatchConfig& cfg,
                 T* kinetic_out, T* attach_out) {
  const SysParams<T> P = params_t<T>(mp.shooting, cfg, mom);
  SysState<T> X = state0_t<T>(mp.shooting, channel_seeds(mp));
  const T kin =
      kinetic_form(P, all_nodes0(mp.shooting), mp.shooting.contrast_seeds, cfg.sigma_v,
                   cfg.sigma_s);
  const double h = 1.0 / cfg.steps;
  for (int k = 0; k < cfg.steps; ++k) {
    if (cfg.scheme == Scheme::rk4)
      detail::sys_rk4_step(X, P, h);
    else
      detail::sys_euler_step(X, P, h);
  }
  const T att = attachment_endpoint(X, mp, cfg.sigma_attach, 0);
  if (kinetic_out) *kinetic_out = kin;
  if (attach_out) *attach_out = att;
  return kin + att;
}

}  // namespace

EnergyBreakdown energy(const MomentumTriple& mom, const MatchProblem& mp, const MatchConfig& cfg,
                       ShootingTrajectory* traj_out) {
  cfg.validate();
  EnergyBreakdown out;
  double kin, att;
  out.total = energy_total_t<double>(mom, mp, cfg, &kin, &att);
  out.kinetic = kin;
  out.attachment = att;
  if (traj_out) *traj_out = shoot(mp.shooting, mom, cfg.geodesic(), channel_seeds(mp));
  return out;
}

double energy_directional(const MomentumTriple& mom, const MomentumTriple& dir,
                          const MatchProblem& mp, const MatchConfig& cfg) {
  MomentumTriple work = mom;  // seed duals through the params below
  (void)work;
  const std::size_t ng = mom.p_a.size(), nc = mom.p_b.size();
  SysParams<Dual> P = params_t<Dual>(mp.shooting, cfg, mom);
  for (std::size_t j = 0; j < ng; ++j) {
    P.px[j].d = dir.p_a[j].x;
    P.py[j].d = dir.p_a[j].y;
    P.pc[j].d = dir.p_c[j];
  }
  for (std::size_t k = 0; k < nc; ++k) {
    P.px[ng + k].d = dir.p_b[k].x;
    P.py[ng + k].d = dir.p_b[k].y;
  }
  SysState<Dual> X = state0_t<Dual>(mp.shooting, channel_seeds(mp));
  const Dual kin = kinetic_form(P, all_nodes0(mp.shooting), mp.shooting.contrast_seeds,
                                cfg.sigma_v, cfg.sigma_s);
  const double h = 1.0 / cfg.steps;
  for (int k = 0; k < cfg.steps; ++k) {
    if (cfg.scheme == Scheme::rk4)
      detail::sys_rk4_step(X, P, h);
    else
      detail::sys_euler_step(X, P, h);
  }
  const Dual att = attachment_endpoint(X, mp, cfg.sigma_attach, 0);
  return (kin + att).d;
}

MomentumTriple energy_gradient_forward(const MomentumTriple& mom, const MatchProblem& mp,
                                       const MatchConfig& cfg) {
  MomentumTriple g = MomentumTriple::zero(mom.p_a.size(), mom.p_b.size());
  MomentumTriple dir = MomentumTriple::zero(mom.p_a.size(), mom.p_b.size());
  auto sweep = [&](double& slot, double& out) {
    slot = 1.0;
    out = energy_directional(mom, dir, mp, cfg);
    slot = 0.0;
  };
  for (std::size_t j = 0; j < mom.p_a.size(); ++j) {
    sweep(dir.p_a[j].x, g.p_a[j].x);
    sweep(dir.p_a[j].y, g.p_a[j].y);
    sweep(dir.p_c[j], g.p_c[j]);
  }
  for (std::size_t k = 0; k < mom.p_b.size(); ++k) {
    sweep(dir.p_b[k].x, g.p_b[k].x);
    sweep(dir.p_b[k].y, g.p_b[k].y);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Reverse-mode adjoint
// ---------------------------------------------------------------------------

namespace {

/// Adjoint of the shooting state (only components reaching the endpoint).
struct AdjState {
  std::vector<double> qx, qy, D, z, e, pz;

  static AdjState zero(const SysState<double>& X) {
    AdjState a;
    a.qx.assign(X.qx.size(), 0.0);
    a.qy.assign(X.qy.size(), 0.0);
    a.D.assign(X.D.size(), 0.0);
    a.z.assign(X.z.size(), 0.0);
    a.e.assign(X.e.size(), 0.0);
    a.pz.assign(X.pz.size(), 0.0);
    return a;
  }
  void axpy(const AdjState& o, double c) {
    for (std::size_t i = 0; i < qx.size(); ++i) qx[i] += c * o.qx[i];
    for (std::size_t i = 0; i < qy.size(); ++i) qy[i] += c * o.qy[i];
    for (std::size_t i = 0; i < D.size(); ++i) D[i] += c * o.D[i];
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += c * o.z[i];
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += c * o.e[i];
    for (std::size_t i = 0; i < pz.size(); ++i) pz[i] += c * o.pz[i];
  }
};

struct ParamGrad {
  std::vector<double> px, py, pc;
};

/// Forward stage values cached for the VJP.
struct StageCache {
  std::vector<double> cx, cy;    // spatial covectors
  std::vector<double> gam;       // contrast covectors
  std::vector<double> A;         // dv at each spatial node (4 per node)
  std::vector<double> ds;        // ds at each carrier node
};

void forward_stage(const SysState<double>& X, const SysParams<double>& P, SysState<double>& dX,
                   StageCache& cache) {
  StageField<double> F;
  detail::assemble_covectors(X, P, F);
  cache.cx = F.cx;
  cache.cy = F.cy;
  cache.gam = F.gam;
  const std::size_t n = X.n_spatial();
  cache.A.assign(4 * n, 0.0);
  dX.resize_like(X);
  parallel_for(n, [&](std::size_t i) {
    double vx, vy, dv[4];
    detail::eval_spatial(F, P.lambda, P.sigma_v, X.qx[i], X.qy[i], vx, vy, dv);
    dX.qx[i] = vx;
    dX.qy[i] = vy;
    for (int a = 0; a < 4; ++a) cache.A[4 * i + a] = dv[a];
    const double* D = &X.D[4 * i];
    dX.D[4 * i + 0] = dv[0] * D[0] + dv[1] * D[2];
    dX.D[4 * i + 1] = dv[0] * D[1] + dv[1] * D[3];
    dX.D[4 * i + 2] = dv[2] * D[0] + dv[3] * D[2];
    dX.D[4 * i + 3] = dv[2] * D[1] + dv[3] * D[3];
    const double* E = &X.E[4 * i];
    dX.E[4 * i + 0] = -(E[0] * dv[0] + E[1] * dv[2]);
    dX.E[4 * i + 1] = -(E[0] * dv[1] + E[1] * dv[3]);
    dX.E[4 * i + 2] = -(E[2] * dv[0] + E[3] * dv[2]);
    dX.E[4 * i + 3] = -(E[2] * dv[1] + E[3] * dv[3]);
    dX.lj[i] = dv[0] + dv[3];
  });
  cache.ds.assign(X.z.size(), 0.0);
  parallel_for(X.z.size(), [&](std::size_t m) {
    double s, ds;
    detail::eval_contrast(F, P.beta, P.sigma_s, X.z[m], s, ds);
    dX.z[m] = s;
    dX.e[m] = ds * X.e[m];
    cache.ds[m] = ds;
  });
  parallel_for(X.pz.size(), [&](std::size_t m) {
    double s, ds;
    detail::eval_contrast(F, P.beta, P.sigma_s, X.pz[m], s, ds);
    dX.pz[m] = s;
    dX.pe[m] = ds * X.pe[m];
  });
}

/// VJP of one rhs evaluation. `bar` holds the cotangents of the outputs;
/// accumulates state cotangents into `acc` and parameter gradients into `pg`.
void stage_vjp(const SysState<double>& X, const SysParams<double>& P, const StageCache& cache,
               const AdjState& bar, AdjState& acc, ParamGrad& pg) {
  const std::size_t n = X.n_spatial();
  const double lam = P.lambda;
  const double s2v = P.sigma_v * P.sigma_v;
  const double inv2v = 0.5 / s2v;

  // Ahat_i = bar.D_i * D_i^T and direct D cotangent bar.D_i-side: A_i^T bar.D_i
  std::vector<double> Ahat(4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* bD = &bar.D[4 * i];
    const double* D = &X.D[4 * i];
    Ahat[4 * i + 0] = bD[0] * D[0] + bD[1] * D[1];
    Ahat[4 * i + 1] = bD[0] * D[2] + bD[1] * D[3];
    Ahat[4 * i + 2] = bD[2] * D[0] + bD[3] * D[1];
    Ahat[4 * i + 3] = bD[2] * D[2] + bD[3] * D[3];
    const double* A = &cache.A[4 * i];
    acc.D[4 * i + 0] += A[0] * bD[0] + A[2] * bD[2];
    acc.D[4 * i + 1] += A[0] * bD[1] + A[2] * bD[3];
    acc.D[4 * i + 2] += A[1] * bD[0] + A[3] * bD[2];
    acc.D[4 * i + 3] += A[1] * bD[1] + A[3] * bD[3];
  }

  // pair terms: for output i and source j
  //   T_ij = s1 G + [-(k/s2) AG + (k/s2^2) d (d.AG)],  s1 = (1/lam) bq_i . c_j
  //   AG   = (1/lam) Ahat_i^T c_j
  //   Ac_j += (1/lam)(k bq_i + Ahat_i G)
  auto pair_qterm = [&](std::size_t i, std::size_t j, double& tx, double& ty) {
    const double dx = X.qx[i] - X.qx[j];
    const double dy = X.qy[i] - X.qy[j];
    const double k = std::exp(-(dx * dx + dy * dy) * inv2v);
    const double gx = -dx / s2v * k, gy = -dy / s2v * k;
    const double cjx = cache.cx[j], cjy = cache.cy[j];
    const double s1 = (bar.qx[i] * cjx + bar.qy[i] * cjy) / lam;
    const double* Ah = &Ahat[4 * i];
    const double agx = (Ah[0] * cjx + Ah[2] * cjy) / lam;
    const double agy = (Ah[1] * cjx + Ah[3] * cjy) / lam;
    const double dag = dx * agx + dy * agy;
    tx = s1 * gx + (-(k / s2v) * agx + (k / (s2v * s2v)) * dx * dag);
    ty = s1 * gy + (-(k / s2v) * agy + (k / (s2v * s2v)) * dy * dag);
  };

  std::vector<double> acx(n, 0.0), acy(n, 0.0);  // covector cotangents
  std::vector<double> aqx1(n, 0.0), aqy1(n, 0.0), aqx2(n, 0.0), aqy2(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    double sx = 0, sy = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double tx, ty;
      pair_qterm(i, j, tx, ty);
      sx += tx;
      sy += ty;
    }
    aqx1[i] = sx;
    aqy1[i] = sy;
  });
  parallel_for(n, [&](std::size_t j) {
    double sx = 0, sy = 0, cxs = 0, cys = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double tx, ty;
      pair_qterm(i, j, tx, ty);
      sx += tx;
      sy += ty;
      const double dx = X.qx[i] - X.qx[j];
      const double dy = X.qy[i] - X.qy[j];
      const double k = std::exp(-(dx * dx + dy * dy) * inv2v);
      const double gx = -dx / s2v * k, gy = -dy / s2v * k;
      const double* Ah = &Ahat[4 * i];
      cxs += (k * bar.qx[i] + Ah[0] * gx + Ah[1] * gy) / lam;
      cys += (k * bar.qy[i] + Ah[2] * gx + Ah[3] * gy) / lam;
    }
    aqx2[j] = -sx;
    aqy2[j] = -sy;
    acx[j] = cxs;
    acy[j] = cys;
  });
  for (std::size_t i = 0; i < n; ++i) {
    acc.qx[i] += aqx1[i] + aqx2[i];
    acc.qy[i] += aqy1[i] + aqy2[i];
  }

  // c_j = w_j D_j^{-T} p_j: push Ac into D and p
  for (std::size_t j = 0; j < n; ++j) {
    const double* D = &X.D[4 * j];
    const double det = D[0] * D[3] - D[1] * D[2];
    // y = D^{-1} Ac
    const double yx = (D[3] * acx[j] - D[1] * acy[j]) / det;
    const double yy = (-D[2] * acx[j] + D[0] * acy[j]) / det;
    pg.px[j] += P.w[j] * yx;
    pg.py[j] += P.w[j] * yy;
    const double cjx = cache.cx[j], cjy = cache.cy[j];
    acc.D[4 * j + 0] += -cjx * yx;
    acc.D[4 * j + 1] += -cjx * yy;
    acc.D[4 * j + 2] += -cjy * yx;
    acc.D[4 * j + 3] += -cjy * yy;
  }

  // contrast: eval points are carriers (z) and passive (pz)
  const double bet = P.beta;
  const double s2s = P.sigma_s * P.sigma_s;
  const double inv2s = 0.5 / s2s;
  const std::size_t nc = X.z.size();
  const std::size_t np = X.pz.size();

  // per eval point: ds cotangent and s cotangent
  auto eval_pt = [&](std::size_t idx, double& x, double& as, double& ads) {
    if (idx < nc) {
      x = X.z[idx];
      as = bar.z[idx];
      ads = bar.e[idx] * X.e[idx];
    } else {
      x = X.pz[idx - nc];
      as = bar.pz[idx - nc];
      ads = 0.0;
    }
  };

  // direct e cotangent from e' = ds e
  for (std::size_t m = 0; m < nc; ++m) acc.e[m] += bar.e[m] * cache.ds[m];

  std::vector<double> agam(nc, 0.0), az_src(nc, 0.0);
  parallel_for(nc, [&](std::size_t nsrc) {
    double ag = 0, az = 0;
    const double zn = X.z[nsrc];
    const double gn = cache.gam[nsrc];
    for (std::size_t idx = 0; idx < nc + np; ++idx) {
      double x, as, ads;
      eval_pt(idx, x, as, ads);
      if (as == 0.0 && ads == 0.0) continue;
      const double d = x - zn;
      const double k = std::exp(-d * d * inv2s);
      const double k1 = -d / s2s * k;                    // d/dx k(x,zn)
      const double k2 = (-1.0 / s2s + d * d / (s2s * s2s)) * k;
      ag += (k * as + k1 * ads) / bet;
      az -= (as * gn * k1 + ads * gn * k2) / bet;
    }
    agam[nsrc] = ag;
    az_src[nsrc] = az;
  });
  // eval-point cotangents
  std::vector<double> ax_eval(nc + np, 0.0);
  parallel_for(nc + np, [&](std::size_t idx) {
    double x, as, ads;
    eval_pt(idx, x, as, ads);
    if (as == 0.0 && ads == 0.0) return;
    double axx = 0;
    for (std::size_t nsrc = 0; nsrc < nc; ++nsrc) {
      const double d = x - X.z[nsrc];
      const double k = std::exp(-d * d * inv2s);
      const double k1 = -d / s2s * k;
      const double k2 = (-1.0 / s2s + d * d / (s2s * s2s)) * k;
      axx += (as * cache.gam[nsrc] * k1 + ads * cache.gam[nsrc] * k2) / bet;
    }
    ax_eval[idx] = axx;
  });
  for (std::size_t m = 0; m < nc; ++m) acc.z[m] += ax_eval[m] + az_src[m];
  for (std::size_t m = 0; m < np; ++m) acc.pz[m] += ax_eval[nc + m];

  // gam_n = wc_n pc_n / e_n
  for (std::size_t m = 0; m < nc; ++m) {
    pg.pc[m] += P.wc[m] / X.e[m] * agam[m];
    acc.e[m] += -P.wc[m] * P.pc[m] / (X.e[m] * X.e[m]) * agam[m];
  }
}

}  // namespace

MomentumTriple energy_gradient(const MomentumTriple& mom, const MatchProblem& mp,
                               const MatchConfig& cfg) {
  cfg.validate();
  const std::size_t ng = mp.shooting.grid_nodes.size();
  const std::size_t ncv = mp.shooting.curve_nodes.size();
  const SysParams<double> P = params_t<double>(mp.shooting, cfg, mom);

  // forward with knot checkpoints
  const int N = cfg.steps;
  const double h = 1.0 / N;
  std::vector<SysState<double>> knots(N + 1);
  knots[0] = state0_t<double>(mp.shooting, channel_seeds(mp));
  for (int k = 0; k < N; ++k) {
    SysState<double> X = knots[k];
    if (cfg.scheme == Scheme::rk4)
      detail::sys_rk4_step(X, P, h);
    else
      detail::sys_euler_step(X, P, h);
    knots[k + 1] = std::move(X);
  }

  // endpoint VJP (attachment only; kinetic handled in closed form below)
  const SysState<double>& XF = knots[N];
  AdjState bar = AdjState::zero(XF);
  {
    std::vector<Vec2> gridq(ng), curveq(ncv);
    for (std::size_t j = 0; j < ng; ++j) gridq[j] = {XF.qx[j], XF.qy[j]};
    for (std::size_t k = 0; k < ncv; ++k) curveq[k] = {XF.qx[ng + k], XF.qy[ng + k]};
    const std::vector<char> mask = compute_masks(gridq, curveq, mp);
    auto seed_channel = [&](const double* values, double* bar_values,
                            const IntensityGrid& target, double sigma) {
      const double inv_s2 = 1.0 / (sigma * sigma);
      for (std::size_t j = 0; j < ng; ++j) {
        if (!mask[j]) continue;
        const double* D = &XF.D[4 * j];
        const double det = D[0] * D[3] - D[1] * D[2];
        const double r = values[j] - lattice_eval_t(target, XF.qx[j], XF.qy[j]);
        const double w = mp.shooting.grid_weights[j] * inv_s2;
        bar_values[j] += 2.0 * w * det * r;
        const Vec2 gt = lattice_grad(target, gridq[j]);
        bar.qx[j] += -2.0 * w * det * r * gt.x;
        bar.qy[j] += -2.0 * w * det * r * gt.y;
        const double wr2 = w * r * r;
        bar.D[4 * j + 0] += wr2 * D[3];
        bar.D[4 * j + 1] += -wr2 * D[2];
        bar.D[4 * j + 2] += -wr2 * D[1];
        bar.D[4 * j + 3] += wr2 * D[0];
      }
    };
    seed_channel(XF.z.data(), bar.z.data(), mp.target_lattice, cfg.sigma_attach);
    for (std::size_t c = 0; c < mp.channels.size(); ++c)
      seed_channel(XF.pz.data() + c * ng, bar.pz.data() + c * ng, mp.channels[c].target,
                   mp.channels[c].sigma);
  }

  ParamGrad pg;
  pg.px.assign(ng + ncv, 0.0);
  pg.py.assign(ng + ncv, 0.0);
  pg.pc.assign(ng, 0.0);

  // backward sweep over steps
  for (int k = N - 1; k >= 0; --k) {
    const SysState<double>& X1 = knots[k];
    if (cfg.scheme == Scheme::rk4) {
      SysState<double> d1, d2, d3, d4;
      StageCache c1, c2, c3, c4;
      forward_stage(X1, P, d1, c1);
      const SysState<double> S2 = detail::sys_axpy(X1, d1, h / 2);
      forward_stage(S2, P, d2, c2);
      const SysState<double> S3 = detail::sys_axpy(X1, d2, h / 2);
      forward_stage(S3, P, d3, c3);
      const SysState<double> S4 = detail::sys_axpy(X1, d3, h);
      forward_stage(S4, P, d4, c4);

      AdjState newbar = bar;  // identity path X_{k+1} = X_k + ...
      AdjState a1 = AdjState::zero(X1), a2 = a1, a3 = a1, a4 = a1;
      a1.axpy(bar, h / 6);
      a2.axpy(bar, h / 3);
      a3.axpy(bar, h / 3);
      a4.axpy(bar, h / 6);

      AdjState s4 = AdjState::zero(X1);
      stage_vjp(S4, P, c4, a4, s4, pg);
      newbar.axpy(s4, 1.0);
      a3.axpy(s4, h);
      AdjState s3 = AdjState::zero(X1);
      stage_vjp(S3, P, c3, a3, s3, pg);
      newbar.axpy(s3, 1.0);
      a2.axpy(s3, h / 2);
      AdjState s2 = AdjState::zero(X1);
      stage_vjp(S2, P, c2, a2, s2, pg);
      newbar.axpy(s2, 1.0);
      a1.axpy(s2, h / 2);
      AdjState s1 = AdjState::zero(X1);
      stage_vjp(X1, P, c1, a1, s1, pg);
      newbar.axpy(s1, 1.0);
      bar = std::move(newbar);
    } else {
      SysState<double> d1;
      StageCache c1;
      forward_stage(X1, P, d1, c1);
      AdjState a1 = AdjState::zero(X1);
      a1.axpy(bar, h);
      AdjState s1 = AdjState::zero(X1);
      stage_vjp(X1, P, c1, a1, s1, pg);
      bar.axpy(s1, 1.0);
    }
  }

  // kinetic gradient: w_i v0(x_i) spatial, wc_m s0(seed_m) contrast
  MomentumTriple g = MomentumTriple::zero(ng, ncv);
  {
    ParticleField v0;
    v0.spec.sigma = cfg.sigma_v;
    v0.spec.scale = cfg.lambda;
    v0.spec.dimension = 2;
    v0.nodes = all_nodes0(mp.shooting);
    v0.covectors.resize(ng + ncv);
    for (std::size_t i = 0; i < ng; ++i) v0.covectors[i] = mom.p_a[i] * P.w[i];
    for (std::size_t k = 0; k < ncv; ++k) v0.covectors[ng + k] = mom.p_b[k] * P.w[ng + k];
    std::vector<Vec2> vv(ng + ncv);
    field_eval_many(v0, v0.nodes, vv.data(), nullptr);
    ScalarParticleField s0;
    s0.spec.sigma = cfg.sigma_s;
    s0.spec.scale = cfg.beta;
    s0.spec.dimension = 1;
    s0.nodes = mp.shooting.contrast_seeds;
    s0.covectors.resize(ng);
    for (std::size_t m = 0; m < ng; ++m) s0.covectors[m] = P.wc[m] * mom.p_c[m];
    std::vector<double> ss(ng);
    field_eval_many(s0, s0.nodes, ss.data(), nullptr);
    for (std::size_t i = 0; i < ng; ++i) {
      g.p_a[i] = vv[i] * P.w[i] + Vec2{pg.px[i], pg.py[i]};
      g.p_c[i] = ss[i] * P.wc[i] + pg.pc[i];
    }
    for (std::size_t k = 0; k < ncv; ++k)
      g.p_b[k] = vv[ng + k] * P.w[ng + k] + Vec2{pg.px[ng + k], pg.py[ng + k]};
  }
  return g;
}

// ---------------------------------------------------------------------------
// Gradient descent with Armijo backtracking
// ---------------------------------------------------------------------------

namespace {

double triple_inner(const MomentumTriple& a, const MomentumTriple& b,
                    const ShootingProblem& prob) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.p_a.size(); ++j)
    acc += prob.grid_weights[j] * (dot(a.p_a[j], b.p_a[j]) + a.p_c[j] * b.p_c[j]);
  for (std::size_t k = 0; k < a.p_b.size(); ++k)
    acc += prob.curve_weights[k] * dot(a.p_b[k], b.p_b[k]);
  return acc;
}

MomentumTriple triple_axpy(const MomentumTriple& x, const MomentumTriple& d, double c) {
  MomentumTriple out = x;
  for (std::size_t j = 0; j < x.p_a.size(); ++j) {
    out.p_a[j] += d.p_a[j] * c;
    out.p_c[j] += c * d.p_c[j];
  }
  for (std::size_t k = 0; k < x.p_b.size(); ++k) out.p_b[k] += d.p_b[k] * c;
  return out;
}

}  // namespace

MatchResult match(const PiecewiseImage& I0, const PiecewiseImage& Itarg, const MatchConfig& cfg) {
  return match(MatchProblem::build(I0, Itarg, cfg), cfg);
}

MatchResult match(const MatchProblem& mp, const MatchConfig& cfg) {
  cfg.validate();
  MatchResult res;
  MomentumTriple mom =
      MomentumTriple::zero(mp.shooting.grid_nodes.size(), mp.shooting.curve_nodes.size());

  EnergyBreakdown e = energy(mom, mp, cfg);
  res.energy_history.push_back(e.total);
  res.attachment_history.push_back(e.attachment);

  for (int it = 0; it < cfg.max_iters; ++it) {
    const MomentumTriple g = energy_gradient(mom, mp, cfg);
    const double gnorm_sq = triple_inner(g, g, mp.shooting);
    res.grad_norm = std::sqrt(gnorm_sq);
    if (res.grad_norm <= cfg.grad_tol) break;

    double step = 1.0 / (1.0 + res.grad_norm);
    bool accepted = false;
    for (int shrink = 0; shrink < 40; ++shrink) {
      const MomentumTriple trial = triple_axpy(mom, g, -step);
      const EnergyBreakdown et = energy(trial, mp, cfg);
      if (et.total <= e.total - cfg.armijo_c * step * gnorm_sq) {
        mom = trial;
        e = et;
        accepted = true;
        break;
      }
      step *= cfg.armijo_shrink;
    }
    if (!accepted) throw LineSearchStallError("no Armijo step after 40 shrinks");
    res.energy_history.push_back(e.total);
    res.attachment_history.push_back(e.attachment);
    res.iterations = it + 1;
    if (cfg.attach_stop > 0.0 &&
        e.attachment <= cfg.attach_stop * res.attachment_history.front())
      break;
  }

  res.momenta = mom;
  energy(mom, mp, cfg, &res.trajectory);
  res.final_image = final_image(res.trajectory);
  return res;
}

// ---------------------------------------------------------------------------
// Attachment gradient against velocity-path perturbations, as per-time kernel fields
// ---------------------------------------------------------------------------

std::vector<ParticleField> attachment_gradient_fields(
    const ShootingTrajectory& traj, const PiecewiseImage& Itarg, double sigma_attach,
    const std::optional<FieldOracle>& tilde_probe) {
  const ShootingProblem& prob = traj.problem;
  const std::size_t ng = prob.grid_nodes.size();
  const std::size_t ncv = prob.curve_nodes.size();
  const ShootingState& fin = traj.final_state();
  const double inv_s2 = 1.0 / (sigma_attach * sigma_attach);

  const IntensityGrid target_lattice = IntensityGrid::from_function(
      Itarg.grid_resolution, [&](Vec2 x) { return Itarg.eval_raw(x); });

  // source gradients per grid node (per-piece extension)
  const SbvDerivative df = sbv_derivative(prob.source);
  std::vector<Vec2> grad_i0(ng);
  for (std::size_t j = 0; j < ng; ++j) {
    const int p = std::max(0, prob.source.piece_at(prob.grid_nodes[j]));
    grad_i0[j] = df.gradients[p].eval(prob.grid_nodes[j]);
  }

  // residuals and jump data at t = 1
  std::vector<double> resid(ng);
  for (std::size_t j = 0; j < ng; ++j)
    resid[j] = fin.contrast_flow.values[j] - target_lattice.eval(fin.grid_flow.positions[j]);

  // probe field for the two-probe target trace (defaults to the final field)
  FieldOracle probe = tilde_probe.value_or(FieldOracle([&traj](Vec2 x) {
    return field_eval(traj.final_field.v, x);
  }));

  std::vector<double> delta_mag(ncv);  // scalar factor of Delta along nu
  for (std::size_t k = 0; k < ncv; ++k) {
    const double ip = traj.eta_push(prob.curve_fplus[k]);
    const double im = traj.eta_push(prob.curve_fminus[k]);
    const Vec2 qk = fin.curve_flow.positions[k];
    const TildeValue tv = tilde_trace(Itarg, probe, qk);
    const double itilde = tv.ok ? tv.value : 0.0;
    delta_mag[k] = (ip * ip - im * im) - 2.0 * (ip - im) * itilde;
  }

  std::vector<ParticleField> fields;
  fields.reserve(traj.states.size());
  for (const ShootingState& st : traj.states) {
    ParticleField G;
    G.spec = traj.cfg.kernel_v;
    G.nodes.reserve(ng + ncv);
    G.covectors.reserve(ng + ncv);
    for (std::size_t j = 0; j < ng; ++j) {
      G.nodes.push_back(st.grid_flow.positions[j]);
      const double e1 = fin.contrast_flow.derivatives[j];  // d eta_{0,1} at the seed
      const Vec2 cov = solve_transposed(st.grid_flow.differentials[j], grad_i0[j] * e1);
      G.covectors.push_back(cov * (-2.0 * inv_s2 * resid[j] * fin.grid_flow.jacobians[j] *
                                   prob.grid_weights[j]));
    }
    for (std::size_t k = 0; k < ncv; ++k) {
      G.nodes.push_back(st.curve_flow.positions[k]);
      const Vec2 dn = fin.curve_flow.differentials[k] * prob.curve_normals[k];
      const double stretch = norm(dn);
      const Vec2 delta = prob.curve_normals[k] * delta_mag[k];
      const Vec2 cov = solve_transposed(st.curve_flow.differentials[k], delta);
      G.covectors.push_back(cov * (-inv_s2 * prob.curve_weights[k] *
                                   fin.curve_flow.jacobians[k] / stretch));
    }
    fields.push_back(std::move(G));
  }
  return fields;
}

double pair_gradient_fields(const ShootingTrajectory& traj,
                            const std::vector<ParticleField>& fields,
                            const std::function<Vec2(Vec2, double)>& dv) {
  const int N = traj.steps();
  const double h = traj.T() / N;
  double acc = 0.0;
  for (int k = 0; k <= N; ++k) {
    const ParticleField& G = fields[k];
    double s = 0.0;
    for (std::size_t j = 0; j < G.nodes.size(); ++j)
      s += dot(G.covectors[j], dv(G.nodes[j], traj.states[k].time));
    acc += (k == 0 || k == N ? 0.5 * h : h) * s;
  }
  return acc;
}

double perturbed_attachment(const ShootingTrajectory& traj, const IntensityGrid& target_lattice,
                            const std::function<Vec2(Vec2, double)>& dv, double eps,
                            double sigma_attach) {
  const VelocityOracle base = stage_record_oracle(traj);
  const VelocityOracle pert = [&, eps](Vec2 x, double t) -> VelocitySample {
    VelocitySample s = base(x, t);
    const Vec2 d = dv(x, t);
    s.v += d * eps;
    const double fh = 1e-6;
    const Vec2 ddx = (dv({x.x + fh, x.y}, t) - dv({x.x - fh, x.y}, t)) / (2 * fh);
    const Vec2 ddy = (dv({x.x, x.y + fh}, t) - dv({x.x, x.y - fh}, t)) / (2 * fh);
    s.dv += Mat2{ddx.x, ddy.x, ddx.y, ddy.y} * eps;
    return s;
  };
  const ShootingProblem& prob = traj.problem;
  const FlowTrajectory ft =
      integrate_flow(pert, prob.grid_nodes, traj.steps(), traj.cfg.scheme, traj.T());
  const FlowState& fs = ft.final_state();
  const double inv_s2 = 1.0 / (sigma_attach * sigma_attach);
  double acc = 0.0;
  for (std::size_t j = 0; j < prob.grid_nodes.size(); ++j) {
    const double z1 = traj.final_state().contrast_flow.values[j];
    const double r = z1 - target_lattice.eval(fs.positions[j]);
    acc += prob.grid_weights[j] * inv_s2 * fs.jacobians[j] * r * r;
  }
  return acc;
}

}  // namespace geomatch
