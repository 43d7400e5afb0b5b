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
#include "geomatch/config.hpp"

#include <fstream>
#include <sstream>

#include "geomatch/io.hpp"

namespace geomatch {

RunConfig::RunConfig() {
  kernel_v.dimension = 2;
  kernel_v.sigma = 0.15;
  kernel_v.scale = 1.0;
  kernel_s.dimension = 1;
  kernel_s.sigma = 0.2;
  kernel_s.scale = 1.0;
}

MatchConfig RunConfig::match_config() const {
  MatchConfig m;
  m.lambda = kernel_v.scale;
  m.beta = kernel_s.scale;
  m.sigma_v = kernel_v.sigma;
  m.sigma_s = kernel_s.sigma;
  m.sigma_attach = sigma_attach;
  m.steps = steps;
  m.scheme = scheme;
  m.grid_n = grid_n;
  m.max_iters = max_iters;
  m.armijo_c = armijo_c;
  m.armijo_shrink = armijo_shrink;
  m.grad_tol = grad_tol;
  m.attach_stop = attach_stop;
  m.channels = channels;
  return m;
}

GeodesicConfig RunConfig::geodesic_config() const {
  GeodesicConfig g;
  g.kernel_v = kernel_v;
  g.kernel_s = kernel_s;
  g.steps = steps;
  g.scheme = scheme;
  return g;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x != int(x)) throw ConfigError("config: integer expected for " + key);
  return int(x);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string key, value, eq;
    if (!(ls >> key)) continue;
    if (!(ls >> value)) throw ConfigError("config line " + std::to_string(lineno) + ": no value");
    if (value == "=" && !(ls >> value))
      throw ConfigError("config line " + std::to_string(lineno) + ": no value");
    std::string extra;
    if (ls >> extra) throw ConfigError("config line " + std::to_string(lineno) + ": trailing text");

    if (key == "kernel_v.family" || key == "kernel_s.family") {
      if (value != "gaussian") throw ConfigError("config: unknown kernel family " + value);
    } else if (key == "kernel_v.sigma")
      cfg.kernel_v.sigma = to_double(key, value);
    else if (key == "kernel_v.scale")
      cfg.kernel_v.scale = to_double(key, value);
    else if (key == "kernel_v.dimension")
      cfg.kernel_v.dimension = to_int(key, value);
    else if (key == "kernel_s.sigma")
      cfg.kernel_s.sigma = to_double(key, value);
    else if (key == "kernel_s.scale")
      cfg.kernel_s.scale = to_double(key, value);
    else if (key == "kernel_s.dimension")
      cfg.kernel_s.dimension = to_int(key, value);
    else if (key == "integrator.scheme") {
      if (value == "rk4")
        cfg.scheme = Scheme::rk4;
      else if (value == "euler")
        cfg.scheme = Scheme::euler;
      else
        throw ConfigError("config: unknown scheme " + value);
    } else if (key == "integrator.steps")
      cfg.steps = to_int(key, value);
    else if (key == "match.sigma_attach")
      cfg.sigma_attach = to_double(key, value);
    else if (key == "match.max_iters")
      cfg.max_iters = to_int(key, value);
    else if (key == "match.armijo_c")
      cfg.armijo_c = to_double(key, value);
    else if (key == "match.armijo_shrink")
      cfg.armijo_shrink = to_double(key, value);
    else if (key == "match.grad_tol")
      cfg.grad_tol = to_double(key, value);
    else if (key == "match.attach_stop")
      cfg.attach_stop = to_double(key, value);
    else if (key == "match.channels")
      cfg.channels = to_int(key, value);
    else if (key == "match.grid_n")
      cfg.grid_n = to_int(key, value);
    else if (key == "quadrature.area_m")
      cfg.area_m = to_int(key, value);
    else if (key == "quadrature.curve_subdiv")
      cfg.curve_subdiv = to_int(key, value);
    else if (key == "output.dir")
      cfg.output_dir = value;
    else if (key == "rng.seed")
      cfg.seed = std::uint64_t(to_double(key, value));
    else if (key == "sum.compensated")
      cfg.compensated = to_int(key, value) != 0;
    else
      throw ConfigError("config: unknown key '" + key + "'");
  }
  cfg.kernel_v.compensated = cfg.compensated;
  cfg.kernel_s.compensated = cfg.compensated;
  cfg.kernel_v.validate();
  cfg.kernel_s.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "kernel_v.family gaussian\n";
  out << "kernel_v.sigma " << format_g17(cfg.kernel_v.sigma) << "\n";
  out << "kernel_v.scale " << format_g17(cfg.kernel_v.scale) << "\n";
  out << "kernel_v.dimension " << cfg.kernel_v.dimension << "\n";
  out << "kernel_s.family gaussian\n";
  out << "kernel_s.sigma " << format_g17(cfg.kernel_s.sigma) << "\n";
  out << "kernel_s.scale " << format_g17(cfg.kernel_s.scale) << "\n";
  out << "kernel_s.dimension " << cfg.kernel_s.dimension << "\n";
  out << "integrator.scheme " << (cfg.scheme == Scheme::rk4 ? "rk4" : "euler") << "\n";
  out << "integrator.steps " << cfg.steps << "\n";
  out << "match.sigma_attach " << format_g17(cfg.sigma_attach) << "\n";
  out << "match.max_iters " << cfg.max_iters << "\n";
  out << "match.armijo_c " << format_g17(cfg.armijo_c) << "\n";
  out << "match.armijo_shrink " << format_g17(cfg.armijo_shrink) << "\n";
  out << "match.grad_tol " << format_g17(cfg.grad_tol) << "\n";
  out << "match.attach_stop " << format_g17(cfg.attach_stop) << "\n";
  out << "match.channels " << cfg.channels << "\n";
  out << "match.grid_n " << cfg.grid_n << "\n";
  out << "quadrature.area_m " << cfg.area_m << "\n";
  out << "quadrature.curve_subdiv " << cfg.curve_subdiv << "\n";
  out << "output.dir " << cfg.output_dir << "\n";
  out << "rng.seed " << cfg.seed << "\n";
  out << "sum.compensated " << (cfg.compensated ? 1 : 0) << "\n";
  return out.str();
}

}  // namespace geomatch
