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
#ifndef GEOMATCH_CONFIG_HPP
#define GEOMATCH_CONFIG_HPP

#include <cstdint>
#include <string>

#include "geomatch/matching.hpp"

namespace geomatch {

/// Flat key-value run configuration. Parsing is strict: unknown keys are
/// errors.
struct RunConfig {
  KernelSpec kernel_v;
  KernelSpec kernel_s;
  Scheme scheme = Scheme::rk4;
  int steps = 20;
  double sigma_attach = 1.0;
  int max_iters = 100;
  double armijo_c = 1e-4;
  double armijo_shrink = 0.5;
  double grad_tol = 1e-6;
  double attach_stop = 0.0;
  int channels = 1;
  int grid_n = 0;
  int area_m = 512;
  int curve_subdiv = 4;
  std::string output_dir = "out";
  std::uint64_t seed = 42;
  bool compensated = false;

  RunConfig();
  MatchConfig match_config() const;
  GeodesicConfig geodesic_config() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace geomatch

#endif
