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
#ifndef GEOMATCH_IO_HPP
#define GEOMATCH_IO_HPP

#include <string>
#include <vector>

#include "geomatch/geodesic.hpp"
#include "geomatch/geometry.hpp"
#include "geomatch/hamiltonian.hpp"

namespace geomatch {

/// Writes content to a temporary file in the target directory, then renames.
void atomic_write(const std::string& path, const std::string& content);

std::string format_g17(double x);

// --- PGM ---

struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<double> values;  // normalized to [0,1], row-major, top row first
};

PgmImage load_pgm(const std::string& path);
void save_pgm(const std::string& path, const PgmImage& img, bool binary = false);

/// PGM samples as an intensity lattice (width == height == res+1 required).
IntensityGrid grid_from_pgm(const PgmImage& img);
PgmImage pgm_from_grid(const IntensityGrid& grid, int maxval = 255);

// --- images with sidecars ---

/// Sidecar format (text, key-value + vertex lists):
///   single                        -- one piece covering the square, or
///   piece <gridref> polygon <k> x y ...   (gridref "=main" is path_pgm)
PiecewiseImage load_image(const std::string& path_pgm, const std::string& path_sidecar);
void save_image(const std::string& dir, const std::string& base, const PiecewiseImage& img,
                int maxval = 255);

// --- curve files: ax ay bx by nux nuy fplus fminus per record ---

void save_curve(const std::string& path, const JumpCurve& curve);
JumpCurve load_curve(const std::string& path);

// --- momenta files ---

/// Header "momenta <grid_n> <n_curve>", then records
///   a <ix> <iy> <px> <py> | b <k> <px> <py> | c <ix> <iy> <p>
/// Missing records are zeros. An empty body is the zero momentum.
void save_momenta(const std::string& path, const MomentumTriple& mom, int grid_n);
MomentumTriple load_momenta(const std::string& path, int* grid_n_out = nullptr,
                            int* n_curve_out = nullptr);

// --- hamiltonian state files ---

void save_hamiltonian_state(const std::string& path, const HamiltonianState& state);
HamiltonianState load_hamiltonian_state(const std::string& path);

// --- CSV writers ---

void save_trajectory_csv(const std::string& path, const ShootingTrajectory& traj);
void save_flow_csv(const std::string& path, const FlowTrajectory& traj);
void save_speed_csv(const std::string& path, const ShootingTrajectory& traj);
void save_series_csv(const std::string& path, const std::string& header,
                     const std::vector<std::vector<double>>& rows);

}  // namespace geomatch

#endif
