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
#include "geomatch/kernels.hpp"

#include <cmath>

namespace geomatch {

void KernelSpec::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("kernel sigma must be > 0");
  if (!(scale > 0.0)) throw ConfigError("kernel scale must be > 0");
  if (dimension < 1) throw ConfigError("kernel dimension must be >= 1");
}

double eval_k(const KernelSpec& spec, Vec2 x, Vec2 y) {
  const double inv2s2 = 0.5 / (spec.sigma * spec.sigma);
  return std::exp(-norm_sq(x - y) * inv2s2);
}

double eval_k(const KernelSpec& spec, double x, double y) {
  const double d = x - y;
  return std::exp(-d * d * 0.5 / (spec.sigma * spec.sigma));
}

Vec2 grad1_k(const KernelSpec& spec, Vec2 x, Vec2 y) {
  const double inv_s2 = 1.0 / (spec.sigma * spec.sigma);
  return (y - x) * (inv_s2 * eval_k(spec, x, y));
}

double grad1_k(const KernelSpec& spec, double x, double y) {
  return (y - x) / (spec.sigma * spec.sigma) * eval_k(spec, x, y);
}

Vec2 field_eval(const ParticleField& f, Vec2 x) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  Accumulator ax(f.spec.compensated), ay(f.spec.compensated);
  for (std::size_t j = 0; j < f.nodes.size(); ++j) {
    const double k = std::exp(-norm_sq(x - f.nodes[j]) * inv2s2);
    ax.add(k * f.covectors[j].x);
    ay.add(k * f.covectors[j].y);
  }
  return Vec2{ax.value(), ay.value()} / f.spec.scale;
}

Mat2 field_jacobian(const ParticleField& f, Vec2 x) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  const double inv_s2 = 1.0 / (f.spec.sigma * f.spec.sigma);
  Accumulator aa(f.spec.compensated), ab(f.spec.compensated), ac(f.spec.compensated),
      ad(f.spec.compensated);
  for (std::size_t j = 0; j < f.nodes.size(); ++j) {
    const Vec2 d = x - f.nodes[j];
    const double k = std::exp(-norm_sq(d) * inv2s2);
    const Vec2 g = d * (-inv_s2 * k);  // grad1_k(x, node_j)
    const Vec2 c = f.covectors[j];
    aa.add(c.x * g.x);
    ab.add(c.x * g.y);
    ac.add(c.y * g.x);
    ad.add(c.y * g.y);
  }
  const double s = 1.0 / f.spec.scale;
  return Mat2{aa.value(), ab.value(), ac.value(), ad.value()} * s;
}

void field_eval_many(const ParticleField& f, const std::vector<Vec2>& xs, Vec2* v_out,
                     Mat2* dv_out) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  const double inv_s2 = 1.0 / (f.spec.sigma * f.spec.sigma);
  const double inv_scale = 1.0 / f.spec.scale;
  parallel_for(xs.size(), [&](std::size_t i) {
    const Vec2 x = xs[i];
    double vx = 0, vy = 0, ja = 0, jb = 0, jc = 0, jd = 0;
    for (std::size_t j = 0; j < f.nodes.size(); ++j) {
      const Vec2 d = x - f.nodes[j];
      const double k = std::exp(-norm_sq(d) * inv2s2);
      const Vec2 c = f.covectors[j];
      vx += k * c.x;
      vy += k * c.y;
      if (dv_out) {
        const double gx = -d.x * inv_s2 * k;
        const double gy = -d.y * inv_s2 * k;
        ja += c.x * gx;
        jb += c.x * gy;
        jc += c.y * gx;
        jd += c.y * gy;
      }
    }
    if (v_out) v_out[i] = Vec2{vx, vy} * inv_scale;
    if (dv_out) dv_out[i] = Mat2{ja, jb, jc, jd} * inv_scale;
  });
}

double rkhs_norm_sq(const ParticleField& f) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  Accumulator acc(f.spec.compensated);
  for (std::size_t i = 0; i < f.nodes.size(); ++i)
    for (std::size_t j = 0; j < f.nodes.size(); ++j) {
      const double k = std::exp(-norm_sq(f.nodes[i] - f.nodes[j]) * inv2s2);
      acc.add(k * dot(f.covectors[i], f.covectors[j]));
    }
  return acc.value() / f.spec.scale;
}

double field_pairing(const ParticleField& f, const ParticleField& g) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  Accumulator acc(f.spec.compensated);
  for (std::size_t i = 0; i < f.nodes.size(); ++i)
    for (std::size_t j = 0; j < g.nodes.size(); ++j) {
      const double k = std::exp(-norm_sq(f.nodes[i] - g.nodes[j]) * inv2s2);
      acc.add(k * dot(f.covectors[i], g.covectors[j]));
    }
  return acc.value() / f.spec.scale;
}

double field_eval(const ScalarParticleField& f, double z) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  Accumulator acc(f.spec.compensated);
  for (std::size_t j = 0; j < f.nodes.size(); ++j) {
    const double d = z - f.nodes[j];
    acc.add(std::exp(-d * d * inv2s2) * f.covectors[j]);
  }
  return acc.value() / f.spec.scale;
}

double field_deriv(const ScalarParticleField& f, double z) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  const double inv_s2 = 1.0 / (f.spec.sigma * f.spec.sigma);
  Accumulator acc(f.spec.compensated);
  for (std::size_t j = 0; j < f.nodes.size(); ++j) {
    const double d = z - f.nodes[j];
    acc.add(-d * inv_s2 * std::exp(-d * d * inv2s2) * f.covectors[j]);
  }
  return acc.value() / f.spec.scale;
}

void field_eval_many(const ScalarParticleField& f, const std::vector<double>& zs, double* s_out,
                     double* ds_out) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  const double inv_s2 = 1.0 / (f.spec.sigma * f.spec.sigma);
  const double inv_scale = 1.0 / f.spec.scale;
  parallel_for(zs.size(), [&](std::size_t i) {
    const double z = zs[i];
    double s = 0, ds = 0;
    for (std::size_t j = 0; j < f.nodes.size(); ++j) {
      if (f.covectors[j] == 0.0) continue;  // exact zeros contribute exactly zero
      const double d = z - f.nodes[j];
      const double k = std::exp(-d * d * inv2s2);
      s += k * f.covectors[j];
      if (ds_out) ds += -d * inv_s2 * k * f.covectors[j];
    }
    if (s_out) s_out[i] = s * inv_scale;
    if (ds_out) ds_out[i] = ds * inv_scale;
  });
}

double rkhs_norm_sq(const ScalarParticleField& f) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  Accumulator acc(f.spec.compensated);
  for (std::size_t i = 0; i < f.nodes.size(); ++i)
    for (std::size_t j = 0; j < f.nodes.size(); ++j) {
      const double d = f.nodes[i] - f.nodes[j];
      acc.add(std::exp(-d * d * inv2s2) * f.covectors[i] * f.covectors[j]);
    }
  return acc.value() / f.spec.scale;
}

double field_pairing(const ScalarParticleField& f, const ScalarParticleField& g) {
  const double inv2s2 = 0.5 / (f.spec.sigma * f.spec.sigma);
  Accumulator acc(f.spec.compensated);
  for (std::size_t i = 0; i < f.nodes.size(); ++i)
    for (std::size_t j = 0; j < g.nodes.size(); ++j) {
      const double d = f.nodes[i] - g.nodes[j];
      acc.add(std::exp(-d * d * inv2s2) * f.covectors[i] * g.covectors[j]);
    }
  return acc.value() / f.spec.scale;
}

}  // namespace geomatch
