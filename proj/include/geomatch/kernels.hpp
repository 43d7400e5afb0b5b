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
#ifndef GEOMATCH_KERNELS_HPP
#define GEOMATCH_KERNELS_HPP

#include <vector>

#include "geomatch/core.hpp"

namespace geomatch {

enum class KernelFamily { gaussian };

/// Reproducing-kernel parameters for the spatial space V (dimension 2) and
/// the contrast space S (dimension 1). `scale` is the metric weight: lambda
/// for V, beta for S. Every momentum-to-velocity conversion divides by it
/// exactly once.
struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  double sigma = 1.0;
  double scale = 1.0;
  int dimension = 2;
  bool compensated = false;  // Kahan accumulation in Gram sums

  void validate() const;
};

/// Scalar Gaussian kernel exp(-|x-y|^2 / (2 sigma^2)), acting as scalar x
/// identity on covectors.
double eval_k(const KernelSpec& spec, Vec2 x, Vec2 y);
double eval_k(const KernelSpec& spec, double x, double y);

/// Derivative in the first argument: -(x-y)/sigma^2 * k(x,y).
Vec2 grad1_k(const KernelSpec& spec, Vec2 x, Vec2 y);
double grad1_k(const KernelSpec& spec, double x, double y);

/// v(.) = (1/scale) sum_j k(., node_j) covector_j on R^2.
/// Quadrature weights are folded into the covectors by the caller.
struct ParticleField {
  KernelSpec spec;
  std::vector<Vec2> nodes;
  std::vector<Vec2> covectors;

  std::size_t size() const { return nodes.size(); }
};

Vec2 field_eval(const ParticleField& f, Vec2 x);
Mat2 field_jacobian(const ParticleField& f, Vec2 x);

/// Batch evaluation; either output may be null. Parallel over query points,
/// the per-point source loop stays index-ascending.
void field_eval_many(const ParticleField& f, const std::vector<Vec2>& xs, Vec2* v_out,
                     Mat2* dv_out);

/// Momentum pairing (1/scale) sum_ij <c_i, c_j> k(q_i, q_j). This equals
/// scale * <v,v>_V; divide by scale once more for the bare RKHS norm.
double rkhs_norm_sq(const ParticleField& f);

/// Pairing between two fields sharing a spec: (1/scale) c1^T K12 c2.
double field_pairing(const ParticleField& f, const ParticleField& g);

/// 1-D analogue on the intensity axis.
struct ScalarParticleField {
  KernelSpec spec;
  std::vector<double> nodes;
  std::vector<double> covectors;

  std::size_t size() const { return nodes.size(); }
};

double field_eval(const ScalarParticleField& f, double z);
double field_deriv(const ScalarParticleField& f, double z);
void field_eval_many(const ScalarParticleField& f, const std::vector<double>& zs, double* s_out,
                     double* ds_out);
double rkhs_norm_sq(const ScalarParticleField& f);
double field_pairing(const ScalarParticleField& f, const ScalarParticleField& g);

}  // namespace geomatch

#endif
