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
#ifndef GEOMATCH_GEODESIC_SYSTEM_HPP
#define GEOMATCH_GEODESIC_SYSTEM_HPP

#include <cmath>
#include <vector>

#include "geomatch/core.hpp"

namespace geomatch::detail {

// The coupled shooting recursion, templated on the scalar type so the same
// code runs in double (production), dual-number (forward sensitivity) and
// any future extended-precision mode. Spatial particles carry position,
// differential D = d phi_{0,t}, co-integrated inverse E and log det;
// contrast particles carry eta value z and derivative e.
//
// Field assembly per stage:
//   c_j   = w_j D_j^{-T} p_j               (spatial covector)
//   gam_m = w_m pc_m / e_m                 (contrast covector)
//   lambda v(x) = sum_j k_V(x, q_j) c_j
//   beta  s(z)  = sum_m k_S(z, z_m) gam_m

template <class T>
struct SysState {
  // spatial particles (grid nodes first, then curve nodes)
  std::vector<T> qx, qy;
  std::vector<T> D;  // 4 per particle, row-major
  std::vector<T> E;  // inverse differential, co-integrated
  std::vector<T> lj; // log det d phi
  // contrast particles carrying momentum
  std::vector<T> z, e;
  // passive contrast samples (transported by s, no covector)
  std::vector<T> pz, pe;

  std::size_t n_spatial() const { return qx.size(); }
  std::size_t n_contrast() const { return z.size(); }

  void resize_like(const SysState& o) {
    qx.resize(o.qx.size());
    qy.resize(o.qy.size());
    D.resize(o.D.size());
    E.resize(o.E.size());
    lj.resize(o.lj.size());
    z.resize(o.z.size());
    e.resize(o.e.size());
    pz.resize(o.pz.size());
    pe.resize(o.pe.size());
  }
};

template <class T>
struct SysParams {
  std::vector<double> w;   // weights per spatial particle (cell area / segment length)
  std::vector<T> px, py;   // spatial momenta (p_a then p_b), per particle
  std::vector<double> wc;  // weights per contrast particle
  std::vector<T> pc;       // contrast momenta
  double lambda = 1.0, sigma_v = 1.0;
  double beta = 1.0, sigma_s = 1.0;
  double det_floor = 1e-10;
};

template <class T>
struct StageField {
  // covectors and node positions defining (v, s) at one stage
  std::vector<T> qx, qy, cx, cy;  // spatial
  std::vector<T> z, gam;          // contrast
};

inline double value_of(double x) { return x; }

template <class T>
void assemble_covectors(const SysState<T>& X, const SysParams<T>& P, StageField<T>& F) {
  const std::size_t n = X.n_spatial();
  F.qx = X.qx;
  F.qy = X.qy;
  F.cx.resize(n);
  F.cy.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const T a = X.D[4 * j + 0], b = X.D[4 * j + 1], c = X.D[4 * j + 2], d = X.D[4 * j + 3];
    const T det = a * d - b * c;
    if (std::abs(value_of(det)) < P.det_floor)
      throw SingularDifferentialError("shooting differential is singular");
    // D^{-T} p = [d -c; -b a]/det * p
    F.cx[j] = P.w[j] * (d * P.px[j] - c * P.py[j]) / det;
    F.cy[j] = P.w[j] * (-b * P.px[j] + a * P.py[j]) / det;
  }
  const std::size_t nc = X.n_contrast();
  F.z = X.z;
  F.gam.resize(nc);
  for (std::size_t m = 0; m < nc; ++m) F.gam[m] = P.wc[m] * P.pc[m] / X.e[m];
}

// v and dv at one point from a stage field
template <class T>
void eval_spatial(const StageField<T>& F, double lambda, double sigma_v, T x, T y, T& vx, T& vy,
                  T* dv /*4 entries or null*/) {
  using std::exp;
  const double inv2s2 = 0.5 / (sigma_v * sigma_v);
  const double inv_s2 = 1.0 / (sigma_v * sigma_v);
  T svx{}, svy{}, j0{}, j1{}, j2{}, j3{};
  for (std::size_t j = 0; j < F.qx.size(); ++j) {
    const T dx = x - F.qx[j];
    const T dy = y - F.qy[j];
    const T k = exp(-(dx * dx + dy * dy) * inv2s2);
    svx = svx + k * F.cx[j];
    svy = svy + k * F.cy[j];
    if (dv) {
      const T gx = dx * (-inv_s2) * k;
      const T gy = dy * (-inv_s2) * k;
      j0 = j0 + F.cx[j] * gx;
      j1 = j1 + F.cx[j] * gy;
      j2 = j2 + F.cy[j] * gx;
      j3 = j3 + F.cy[j] * gy;
    }
  }
  const double s = 1.0 / lambda;
  vx = svx * s;
  vy = svy * s;
  if (dv) {
    dv[0] = j0 * s;
    dv[1] = j1 * s;
    dv[2] = j2 * s;
    dv[3] = j3 * s;
  }
}

template <class T>
void eval_contrast(const StageField<T>& F, double beta, double sigma_s, T zq, T& s_out, T& ds_out) {
  using std::exp;
  const double inv2s2 = 0.5 / (sigma_s * sigma_s);
  const double inv_s2 = 1.0 / (sigma_s * sigma_s);
  T s{}, ds{};
  for (std::size_t m = 0; m < F.z.size(); ++m) {
    const T d = zq - F.z[m];
    const T k = exp(-d * d * inv2s2);
    s = s + k * F.gam[m];
    ds = ds + d * (-inv_s2) * k * F.gam[m];
  }
  s_out = s / beta;
  ds_out = ds / beta;
}

template <class T>
void sys_rhs(const SysState<T>& X, const SysParams<T>& P, const StageField<T>& F,
             SysState<T>& dX) {
  dX.resize_like(X);
  const std::size_t n = X.n_spatial();
  parallel_for(n, [&](std::size_t i) {
    T vx, vy, dv[4];
    eval_spatial(F, P.lambda, P.sigma_v, X.qx[i], X.qy[i], vx, vy, dv);
    dX.qx[i] = vx;
    dX.qy[i] = vy;
    const T* D = &X.D[4 * i];
    // dD/dt = dv D
    dX.D[4 * i + 0] = dv[0] * D[0] + dv[1] * D[2];
    dX.D[4 * i + 1] = dv[0] * D[1] + dv[1] * D[3];
    dX.D[4 * i + 2] = dv[2] * D[0] + dv[3] * D[2];
    dX.D[4 * i + 3] = dv[2] * D[1] + dv[3] * D[3];
    // dE/dt = -E dv
    const T* E = &X.E[4 * i];
    dX.E[4 * i + 0] = -(E[0] * dv[0] + E[1] * dv[2]);
    dX.E[4 * i + 1] = -(E[0] * dv[1] + E[1] * dv[3]);
    dX.E[4 * i + 2] = -(E[2] * dv[0] + E[3] * dv[2]);
    dX.E[4 * i + 3] = -(E[2] * dv[1] + E[3] * dv[3]);
    dX.lj[i] = dv[0] + dv[3];
  });
  parallel_for(X.n_contrast(), [&](std::size_t m) {
    T s, ds;
    eval_contrast(F, P.beta, P.sigma_s, X.z[m], s, ds);
    dX.z[m] = s;
    dX.e[m] = ds * X.e[m];
  });
  parallel_for(X.pz.size(), [&](std::size_t m) {
    T s, ds;
    eval_contrast(F, P.beta, P.sigma_s, X.pz[m], s, ds);
    dX.pz[m] = s;
    dX.pe[m] = ds * X.pe[m];
  });
}

template <class T>
SysState<T> sys_axpy(const SysState<T>& X, const SysState<T>& K, double h) {
  SysState<T> out = X;
  auto fma = [h](std::vector<T>& o, const std::vector<T>& k) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] + k[i] * h;
  };
  fma(out.qx, K.qx);
  fma(out.qy, K.qy);
  fma(out.D, K.D);
  fma(out.E, K.E);
  fma(out.lj, K.lj);
  fma(out.z, K.z);
  fma(out.e, K.e);
  fma(out.pz, K.pz);
  fma(out.pe, K.pe);
  return out;
}

/// External stage fields: when non-null the stage advances under the given
/// fields instead of re-assembling from the stage state (the Picard map's
/// flow integration). When stages_out is non-null it receives the fields
/// assembled from the momenta at the traversed stage states -- with no
/// external fields that is what drove the step, with external fields it is
/// the Picard image of the candidate.
template <class T>
void sys_rk4_step(SysState<T>& X, const SysParams<T>& P, double h,
                  const StageField<T>* external_stages,
                  std::vector<StageField<T>>* stages_out) {
  auto assembled = [&](const SysState<T>& S) {
    StageField<T> F;
    assemble_covectors(S, P, F);
    return F;
  };
  auto stage_field = [&](const StageField<T>& own, int stage) -> const StageField<T>& {
    return external_stages ? external_stages[stage] : own;
  };
  const StageField<T> R1 = assembled(X);
  SysState<T> k1;
  sys_rhs(X, P, stage_field(R1, 0), k1);
  const SysState<T> x2 = sys_axpy(X, k1, h / 2);
  const StageField<T> R2 = assembled(x2);
  SysState<T> k2;
  sys_rhs(x2, P, stage_field(R2, 1), k2);
  const SysState<T> x3 = sys_axpy(X, k2, h / 2);
  const StageField<T> R3 = assembled(x3);
  SysState<T> k3;
  sys_rhs(x3, P, stage_field(R3, 2), k3);
  const SysState<T> x4 = sys_axpy(X, k3, h);
  const StageField<T> R4 = assembled(x4);
  SysState<T> k4;
  sys_rhs(x4, P, stage_field(R4, 3), k4);
  if (stages_out) *stages_out = {R1, R2, R3, R4};

  auto comb = [h](std::vector<T>& x, const std::vector<T>& a, const std::vector<T>& b,
                  const std::vector<T>& c, const std::vector<T>& d) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = x[i] + (a[i] + (b[i] + c[i]) * 2.0 + d[i]) * (h / 6.0);
  };
  comb(X.qx, k1.qx, k2.qx, k3.qx, k4.qx);
  comb(X.qy, k1.qy, k2.qy, k3.qy, k4.qy);
  comb(X.D, k1.D, k2.D, k3.D, k4.D);
  comb(X.E, k1.E, k2.E, k3.E, k4.E);
  comb(X.lj, k1.lj, k2.lj, k3.lj, k4.lj);
  comb(X.z, k1.z, k2.z, k3.z, k4.z);
  comb(X.e, k1.e, k2.e, k3.e, k4.e);
  comb(X.pz, k1.pz, k2.pz, k3.pz, k4.pz);
  comb(X.pe, k1.pe, k2.pe, k3.pe, k4.pe);
}

template <class T>
void sys_euler_step(SysState<T>& X, const SysParams<T>& P, double h,
                    const StageField<T>* external_stage, std::vector<StageField<T>>* stages_out) {
  StageField<T> R1;
  assemble_covectors(X, P, R1);
  SysState<T> k1;
  sys_rhs(X, P, external_stage ? external_stage[0] : R1, k1);
  if (stages_out) *stages_out = {R1};
  X = sys_axpy(X, k1, h);
}

template <class T>
void sys_rk4_step(SysState<T>& X, const SysParams<T>& P, double h) {
  sys_rk4_step(X, P, h, static_cast<const StageField<T>*>(nullptr),
               static_cast<std::vector<StageField<T>>*>(nullptr));
}

template <class T>
void sys_euler_step(SysState<T>& X, const SysParams<T>& P, double h) {
  sys_euler_step(X, P, h, static_cast<const StageField<T>*>(nullptr),
                 static_cast<std::vector<StageField<T>>*>(nullptr));
}

}  // namespace geomatch::detail

#endif
