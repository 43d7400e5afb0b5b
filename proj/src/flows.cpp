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
#include "geomatch/flows.hpp"

#include <algorithm>
#include <cmath>

namespace geomatch {

VelocityOracle oracle_from_field(const ParticleField& f) {
  return [f](Vec2 x, double) -> VelocitySample { return {field_eval(f, x), field_jacobian(f, x)}; };
}

ContrastOracle oracle_from_field(const ScalarParticleField& f) {
  return [f](double z, double) -> ContrastSample { return {field_eval(f, z), field_deriv(f, z)}; };
}

namespace {

struct ParticleOde {
  Vec2 q;
  Mat2 D;
};

ParticleOde rhs(const VelocityOracle& field, const ParticleOde& s, double t) {
  const VelocitySample vs = field(s.q, t);
  return {vs.v, vs.dv * s.D};
}

ParticleOde axpy(const ParticleOde& s, const ParticleOde& k, double h) {
  return {s.q + k.q * h, s.D + k.D * h};
}

ParticleOde step_particle(const VelocityOracle& field, const ParticleOde& s, double t, double h,
                          Scheme scheme) {
  if (scheme == Scheme::euler) {
    const ParticleOde k1 = rhs(field, s, t);
    return axpy(s, k1, h);
  }
  const ParticleOde k1 = rhs(field, s, t);
  const ParticleOde k2 = rhs(field, axpy(s, k1, h / 2), t + h / 2);
  const ParticleOde k3 = rhs(field, axpy(s, k2, h / 2), t + h / 2);
  const ParticleOde k4 = rhs(field, axpy(s, k3, h), t + h);
  ParticleOde out = s;
  out.q += (k1.q + k2.q * 2.0 + k3.q * 2.0 + k4.q) * (h / 6.0);
  out.D += (k1.D + k2.D * 2.0 + k3.D * 2.0 + k4.D) * (h / 6.0);
  return out;
}

bool inside_box(Vec2 p) { return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0; }

FlowTrajectory integrate_impl(const VelocityOracle& field, const std::vector<Vec2>& seeds,
                              int steps, Scheme scheme, double T) {
  if (steps < 1) throw NumericalError("integrate_flow: steps must be >= 1");
  FlowTrajectory traj;
  const std::size_t n = seeds.size();
  std::vector<ParticleOde> cur(n);
  for (std::size_t i = 0; i < n; ++i) cur[i] = {seeds[i], Mat2::identity()};

  auto snapshot = [&](double t) {
    FlowState st;
    st.time = t;
    st.positions.resize(n);
    st.differentials.resize(n);
    st.jacobians.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      st.positions[i] = cur[i].q;
      st.differentials[i] = cur[i].D;
      st.jacobians[i] = cur[i].D.det();
      if (!finite(cur[i].q) || !finite(cur[i].D))
        throw NonFiniteError("flow state became non-finite at t = " + std::to_string(t));
      if (st.jacobians[i] <= 1e-8)
        throw JacobianCollapseError("flow jacobian collapsed at t = " + std::to_string(t));
      if (!inside_box(cur[i].q)) traj.exited_domain = true;
    }
    traj.states.push_back(std::move(st));
  };

  snapshot(0.0);
  const double h = T / steps;
  std::vector<ParticleOde> next(n);
  for (int k = 0; k < steps; ++k) {
    const double t = k * h;
    parallel_for(n, [&](std::size_t i) { next[i] = step_particle(field, cur[i], t, h, scheme); });
    cur.swap(next);
    snapshot((k + 1) * h);
  }
  return traj;
}

}  // namespace

FlowTrajectory integrate_flow(const VelocityOracle& field, const std::vector<Vec2>& seeds,
                              int steps, Scheme scheme, double T) {
  return integrate_impl(field, seeds, steps, scheme, T);
}

FlowTrajectory integrate_flow_reverse(const VelocityOracle& field, const std::vector<Vec2>& seeds,
                                      int steps, Scheme scheme, double T) {
  VelocityOracle reversed = [&field, T](Vec2 x, double t) -> VelocitySample {
    VelocitySample s = field(x, T - t);
    return {-s.v, s.dv * -1.0};
  };
  return integrate_impl(reversed, seeds, steps, scheme, T);
}

namespace {

struct ContrastOde {
  double z;
  double e;
};

ContrastOde crhs(const ContrastOracle& field, const ContrastOde& s, double t) {
  const ContrastSample cs = field(s.z, t);
  return {cs.s, cs.ds * s.e};
}

ContrastOde caxpy(const ContrastOde& s, const ContrastOde& k, double h) {
  return {s.z + k.z * h, s.e + k.e * h};
}

}  // namespace

ContrastFlowTrajectory integrate_contrast_flow(const ContrastOracle& field,
                                               const std::vector<double>& seeds, int steps,
                                               Scheme scheme, double T) {
  if (steps < 1) throw NumericalError("integrate_contrast_flow: steps must be >= 1");
  ContrastFlowTrajectory traj;
  const std::size_t n = seeds.size();
  std::vector<ContrastOde> cur(n);
  for (std::size_t i = 0; i < n; ++i) cur[i] = {seeds[i], 1.0};

  auto snapshot = [&](double t) {
    ContrastFlowState st;
    st.time = t;
    st.values.resize(n);
    st.derivatives.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      st.values[i] = cur[i].z;
      st.derivatives[i] = cur[i].e;
      if (!std::isfinite(cur[i].z) || !std::isfinite(cur[i].e))
        throw NonFiniteError("contrast flow became non-finite");
      if (cur[i].e <= 1e-8)
        throw JacobianCollapseError("contrast flow derivative collapsed");
    }
    traj.states.push_back(std::move(st));
  };

  snapshot(0.0);
  const double h = T / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = k * h;
    for (std::size_t i = 0; i < n; ++i) {
      if (scheme == Scheme::euler) {
        cur[i] = caxpy(cur[i], crhs(field, cur[i], t), h);
      } else {
        const ContrastOde k1 = crhs(field, cur[i], t);
        const ContrastOde k2 = crhs(field, caxpy(cur[i], k1, h / 2), t + h / 2);
        const ContrastOde k3 = crhs(field, caxpy(cur[i], k2, h / 2), t + h / 2);
        const ContrastOde k4 = crhs(field, caxpy(cur[i], k3, h), t + h);
        cur[i].z += (k1.z + 2 * k2.z + 2 * k3.z + k4.z) * (h / 6.0);
        cur[i].e += (k1.e + 2 * k2.e + 2 * k3.e + k4.e) * (h / 6.0);
      }
    }
    snapshot((k + 1) * h);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Stability bounds
// ---------------------------------------------------------------------------

namespace {

double v_norm(const ParticleField& f) { return std::sqrt(std::max(0.0, rkhs_norm_sq(f)) / f.spec.scale); }

double c1_sup_on_probe(const ParticleField& f, int probe_res) {
  double sup = 0.0;
  for (int j = 0; j <= probe_res; ++j)
    for (int i = 0; i <= probe_res; ++i) {
      const Vec2 x{double(i) / probe_res, double(j) / probe_res};
      sup = std::max(sup, norm(field_eval(f, x)) + field_jacobian(f, x).frobenius());
    }
  return sup;
}

ParticleField field_difference(const ParticleField& u, const ParticleField& v) {
  ParticleField d = v;
  for (std::size_t j = 0; j < u.nodes.size(); ++j) {
    d.nodes.push_back(u.nodes[j]);
    d.covectors.push_back(-u.covectors[j]);
  }
  return d;
}

}  // namespace

FlowBoundsReport check_flow_bounds(const ParticleField& u, const ParticleField& v, double T,
                                   int steps, int probe_res) {
  FlowBoundsReport rep;
  const ParticleField diff = field_difference(u, v);

  const double nv = v_norm(v), nd = v_norm(diff);
  double c = 0.0;
  for (const ParticleField* f : {&u, &v, &diff}) {
    const double nf = v_norm(*f);
    if (nf > 1e-14) c = std::max(c, c1_sup_on_probe(*f, probe_res) / nf);
  }
  rep.c_v = c;

  const CellGrid seeds_grid{probe_res};
  const std::vector<Vec2> seeds = seeds_grid.nodes();
  const FlowTrajectory tu = integrate_flow(oracle_from_field(u), seeds, steps, Scheme::rk4, T);
  const FlowTrajectory tv = integrate_flow(oracle_from_field(v), seeds, steps, Scheme::rk4, T);

  // field-perturbation bound at every recorded time
  double lhs = 0.0;
  for (std::size_t k = 0; k < tu.states.size(); ++k)
    for (std::size_t i = 0; i < seeds.size(); ++i)
      lhs = std::max(lhs, norm(tu.states[k].positions[i] - tv.states[k].positions[i]));
  rep.field_lhs = lhs;
  rep.field_rhs = c * (nd * T) * std::exp(c * nv * T);
  rep.field_ok = lhs <= rep.field_rhs * (1.0 + 1e-9);

  // time bound for v: |phi_{0,t} - phi_{0,s}| <= c sqrt|t-s| ||v||_L2
  const double l2 = nv * std::sqrt(T);
  rep.time_ok = true;
  double worst_ratio = 0.0;
  for (std::size_t k = 0; k < tv.states.size(); ++k)
    for (std::size_t l = k + 1; l < tv.states.size(); ++l) {
      double d = 0.0;
      for (std::size_t i = 0; i < seeds.size(); ++i)
        d = std::max(d, norm(tv.states[l].positions[i] - tv.states[k].positions[i]));
      const double bound = c * std::sqrt(tv.states[l].time - tv.states[k].time) * l2;
      if (d > bound * (1.0 + 1e-9)) rep.time_ok = false;
      if (bound > 0 && d / bound > worst_ratio) {
        worst_ratio = d / bound;
        rep.time_lhs = d;
        rep.time_rhs = bound;
      }
    }
  return rep;
}

}  // namespace geomatch
