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
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "geomatch/config.hpp"
#include "geomatch/io.hpp"
#include "geomatch/matching.hpp"
#include "geomatch/shape_derivative.hpp"

namespace fs = std::filesystem;
using namespace geomatch;

namespace {

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

int run_shoot(const std::string& image_path, const std::string& sidecar_path,
              const std::string& momenta_path, const std::string& config_path,
              const std::string& out_dir) {
  const RunConfig cfg = config_or_default(config_path);
  const PiecewiseImage I0 = load_image(image_path, sidecar_path);
  int grid_n = 0, n_curve = 0;
  const MomentumTriple mom = load_momenta(momenta_path, &grid_n, &n_curve);
  const ShootingProblem prob = ShootingProblem::build(I0, grid_n);
  if (prob.curve_nodes.size() != std::size_t(n_curve))
    throw FormatError("momenta file curve count does not match the image jump curve");

  const ShootingTrajectory traj = shoot(prob, mom, cfg.geodesic_config());
  fs::create_directories(out_dir);
  save_trajectory_csv((fs::path(out_dir) / "trajectory.csv").string(), traj);
  save_speed_csv((fs::path(out_dir) / "speeds.csv").string(), traj);
  save_image(out_dir, "final", final_image(traj));
  std::cout << "shoot: " << traj.states.size() - 1 << " steps, "
            << prob.n_spatial() << " particles\n";
  return 0;
}

int run_match(const std::string& source_path, const std::string& source_sidecar,
              const std::string& target_path, const std::string& target_sidecar,
              const std::string& config_path, const std::string& out_dir) {
  const RunConfig cfg = config_or_default(config_path);
  const PiecewiseImage I0 = load_image(source_path, source_sidecar);
  const PiecewiseImage It = load_image(target_path, target_sidecar);
  const MatchConfig mc = cfg.match_config();
  const MatchResult res = match(I0, It, mc);

  fs::create_directories(out_dir);
  save_image(out_dir, "final", res.final_image);
  save_momenta((fs::path(out_dir) / "momenta.txt").string(), res.momenta,
               res.trajectory.problem.grid.n);
  {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < res.energy_history.size(); ++i)
      rows.push_back({double(i), res.energy_history[i], res.attachment_history[i]});
    save_series_csv((fs::path(out_dir) / "energy_history.csv").string(),
                    "iter,energy,attachment", rows);
  }
  save_speed_csv((fs::path(out_dir) / "speeds.csv").string(), res.trajectory);

  // deformed grid overlay: grid-line particles under the matched flow
  {
    std::vector<Vec2> seeds;
    const int lines = 17, samples = 65;
    for (int l = 0; l < lines; ++l)
      for (int s = 0; s < samples; ++s) {
        seeds.push_back({double(l) / (lines - 1), double(s) / (samples - 1)});
        seeds.push_back({double(s) / (samples - 1), double(l) / (lines - 1)});
      }
    const FlowTrajectory ft = integrate_flow(stage_record_oracle(res.trajectory), seeds,
                                             res.trajectory.steps(), mc.scheme, 1.0);
    save_flow_csv((fs::path(out_dir) / "deformed_grid.csv").string(), ft);
  }
  std::cout << "match: " << res.iterations << " iterations, final energy "
            << res.energy_history.back() << ", attachment " << res.attachment_history.back()
            << "\n";
  return 0;
}

struct SceneFile {
  DomainFunctionalProblem prob;
  std::vector<double> hs{1e-2, 1e-3};
  int m = 512;
  int subdiv = 4;
  double tol = 1e-2;
};

ScalarOracle quad_oracle(double c0, double cx, double cy, double cxx, double cxy, double cyy) {
  return [=](Vec2 p) {
    return c0 + cx * p.x + cy * p.y + cxx * p.x * p.x + cxy * p.x * p.y + cyy * p.y * p.y;
  };
}

SceneFile load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scene file " + path);
  SceneFile scene;
  bool have_u = false, have_v = false, have_f = false, have_g = false, have_x = false;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "polygon") {
      std::string which;
      int k;
      if (!(ls >> which >> k)) throw FormatError("scene: bad polygon record");
      LipschitzDomain d;
      for (int i = 0; i < k; ++i) {
        Vec2 p;
        if (!(ls >> p.x >> p.y)) throw FormatError("scene: truncated polygon");
        d.vertices.push_back(p);
      }
      if (which == "U") {
        scene.prob.U = d;
        have_u = true;
      } else if (which == "V") {
        scene.prob.V = d;
        have_v = true;
      } else
        throw FormatError("scene: polygon must be U or V");
    } else if (word == "field") {
      std::string kind;
      double a11, a12, a21, a22, b1, b2;
      if (!(ls >> kind >> a11 >> a12 >> a21 >> a22 >> b1 >> b2) || kind != "affine")
        throw FormatError("scene: bad field record (affine a11 a12 a21 a22 b1 b2)");
      scene.prob.X = [=](Vec2 p) {
        return Vec2{a11 * p.x + a12 * p.y + b1, a21 * p.x + a22 * p.y + b2};
      };
      have_x = true;
    } else if (word == "f" || word == "g") {
      std::string kind;
      double c0, cx, cy, cxx, cxy, cyy;
      if (!(ls >> kind >> c0 >> cx >> cy >> cxx >> cxy >> cyy) || kind != "quad")
        throw FormatError("scene: bad oracle record (quad c0 cx cy cxx cxy cyy)");
      if (word == "f") {
        scene.prob.f = quad_oracle(c0, cx, cy, cxx, cxy, cyy);
        have_f = true;
      } else {
        scene.prob.g = quad_oracle(c0, cx, cy, cxx, cxy, cyy);
        have_g = true;
      }
    } else if (word == "h") {
      scene.hs.clear();
      double h;
      while (ls >> h) scene.hs.push_back(h);
    } else if (word == "m") {
      ls >> scene.m;
    } else if (word == "subdiv") {
      ls >> scene.subdiv;
    } else if (word == "tol") {
      ls >> scene.tol;
    } else {
      throw FormatError("scene: unknown record '" + word + "'");
    }
  }
  if (!(have_u && have_v && have_f && have_g && have_x))
    throw FormatError("scene: U, V, f, g and field are all required");
  return scene;
}

int run_verify_lemma(const std::string& scene_path, bool suite, const std::string& out_csv,
                     int m, double tol) {
  struct Row {
    std::string name;
    double h, fd, analytic, rel;
  };
  std::vector<Row> rows;
  bool all_ok = true;

  auto run_one = [&](const std::string& name, const DomainFunctionalProblem& prob,
                     const std::vector<double>& hs, int mm, int subdiv, double tolerance,
                     bool count) {
    const double analytic = boundary_derivative(prob, mm, subdiv).total();
    for (double h : hs) {
      const double j0 = domain_functional_clipped(prob, 0.0, mm);
      const double jh = domain_functional_clipped(prob, h, mm);
      const double fd = (jh - j0) / h;
      const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic), 1e-6);
      rows.push_back({name, h, fd, analytic, rel});
      if (count && h <= 1.1e-3 && rel > tolerance) all_ok = false;
    }
  };

  if (suite) {
    for (const LemmaScene& scene : lemma_scene_suite())
      run_one(scene.name, scene.prob, {1e-2, 1e-3}, m, 4, tol, !scene.degenerate);
    {
      const ImageLemmaScene s = lemma_image_scene();
      const double analytic = image_derivative(s.f_img, s.g_img, s.X, 256, 4).total();
      for (double h : {1e-2, 1e-3}) {
        const double j0 = image_functional_clipped(s.f_img, s.g_img, s.X, 0.0, m);
        const double jh = image_functional_clipped(s.f_img, s.g_img, s.X, h, m);
        const double fd = (jh - j0) / h;
        const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic), 1e-6);
        rows.push_back({s.name, h, fd, analytic, rel});
        if (h <= 1.1e-3 && rel > tol) all_ok = false;
      }
    }
  } else {
    const SceneFile scene = load_scene(scene_path);
    run_one(fs::path(scene_path).stem().string(), scene.prob, scene.hs, scene.m, scene.subdiv,
            scene.tol, true);
  }

  std::ostringstream csv;
  csv << "scene,h,fd_value,analytic_value,rel_err\n";
  for (const Row& r : rows)
    csv << r.name << "," << format_g17(r.h) << "," << format_g17(r.fd) << ","
        << format_g17(r.analytic) << "," << format_g17(r.rel) << "\n";
  if (!out_csv.empty())
    atomic_write(out_csv, csv.str());
  else
    std::cout << csv.str();
  std::cout << (all_ok ? "verify-lemma: PASS\n" : "verify-lemma: FAIL\n");
  return all_ok ? 0 : 2;
}

int run_ham_integrate(const std::string& state_path, const std::string& config_path, double T,
                      int steps, const std::string& out_dir) {
  const RunConfig cfg = config_or_default(config_path);
  HamiltonianConfig hc;
  hc.kernel_v = cfg.kernel_v;
  hc.kernel_s = cfg.kernel_s;
  const HamiltonianState state0 = load_hamiltonian_state(state_path);
  const int n = steps > 0 ? steps : cfg.steps;
  const HamiltonianTrajectory traj = integrate_hamiltonian(state0, hc, T, n, cfg.scheme);
  fs::create_directories(out_dir);
  {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < traj.energy.size(); ++i)
      rows.push_back({traj.times[i], traj.energy[i]});
    save_series_csv((fs::path(out_dir) / "hamiltonian_energy.csv").string(), "t,H", rows);
  }
  save_hamiltonian_state((fs::path(out_dir) / "final_state.txt").string(), traj.states.back());
  const double drift = std::abs(traj.energy.back() - traj.energy.front()) /
                       std::max(std::abs(traj.energy.front()), 1e-300);
  std::cout << "ham-integrate: H(0) = " << traj.energy.front() << ", relative drift " << drift
            << "\n";
  return 0;
}

int run_report(const std::string& run_dir) {
  auto tail_ratio = [](const std::vector<std::vector<double>>& rows, int col) {
    if (rows.size() < 2) return 0.0;
    double first = rows.front()[col], worst = 0.0;
    for (const auto& r : rows)
      worst = std::max(worst, std::abs(r[col] - first) / std::max(std::abs(first), 1e-300));
    return worst;
  };
  auto read_csv = [](const std::string& path, std::vector<std::vector<double>>& rows) {
    std::ifstream in(path);
    if (!in) return false;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      std::vector<double> row;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
      if (!row.empty()) rows.push_back(std::move(row));
    }
    return true;
  };

  bool any = false;
  std::vector<std::vector<double>> rows;
  if (read_csv((fs::path(run_dir) / "speeds.csv").string(), rows)) {
    any = true;
    std::cout << "speeds.csv: " << rows.size() << " knots, |v|^2 drift " << tail_ratio(rows, 1)
              << ", |s|^2 drift " << tail_ratio(rows, 2) << "\n";
  }
  rows.clear();
  if (read_csv((fs::path(run_dir) / "hamiltonian_energy.csv").string(), rows)) {
    any = true;
    std::cout << "hamiltonian_energy.csv: H drift " << tail_ratio(rows, 1) << "\n";
  }
  rows.clear();
  if (read_csv((fs::path(run_dir) / "energy_history.csv").string(), rows)) {
    any = true;
    bool monotone = true;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i][1] > rows[i - 1][1] + 1e-12) monotone = false;
    std::cout << "energy_history.csv: " << rows.size() << " iterations, energy "
              << rows.front()[1] << " -> " << rows.back()[1] << " ("
              << (monotone ? "non-increasing" : "NOT monotone") << "), attachment reduction "
              << (rows.front()[2] > 0 ? 1.0 - rows.back()[2] / rows.front()[2] : 0.0) << "\n";
  }
  rows.clear();
  if (read_csv((fs::path(run_dir) / "gradcheck.csv").string(), rows)) {
    any = true;
    double worst = 0.0;
    for (const auto& r : rows) worst = std::max(worst, r.back());
    std::cout << "gradcheck.csv: worst rel err " << worst << "\n";
  }
  if (!any) {
    std::cerr << "report: no recognized artifacts in " << run_dir << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geodesic matching of discontinuous images under spatial and contrast actions"};
  app.require_subcommand(1);

  std::string image, sidecar, momenta, config, out_dir = "out";
  std::string source, source_sidecar, target, target_sidecar;
  std::string scene, out_csv, state, run_dir;
  bool suite = false;
  double T = 1.0, tol = 1e-2;
  int steps = 0, m = 512;

  CLI::App* shoot_cmd = app.add_subcommand("shoot", "integrate a geodesic from initial momenta");
  shoot_cmd->add_option("--image", image, "source PGM")->required();
  shoot_cmd->add_option("--sidecar", sidecar, "source sidecar")->required();
  shoot_cmd->add_option("--momenta", momenta, "momenta file")->required();
  shoot_cmd->add_option("--config", config, "run config");
  shoot_cmd->add_option("--out-dir", out_dir, "output directory");

  CLI::App* match_cmd = app.add_subcommand("match", "minimize the matching energy");
  match_cmd->add_option("--source", source, "source PGM")->required();
  match_cmd->add_option("--source-sidecar", source_sidecar, "source sidecar")->required();
  match_cmd->add_option("--target", target, "target PGM")->required();
  match_cmd->add_option("--target-sidecar", target_sidecar, "target sidecar")->required();
  match_cmd->add_option("--config", config, "run config");
  match_cmd->add_option("--out-dir", out_dir, "output directory");

  CLI::App* lemma_cmd = app.add_subcommand("verify-lemma", "derivation-lemma FD verification");
  lemma_cmd->add_option("--scene", scene, "scene file (polygons + field spec)");
  lemma_cmd->add_flag("--suite", suite, "run the bundled polygon scene suite");
  lemma_cmd->add_option("--out", out_csv, "CSV output path (default stdout)");
  lemma_cmd->add_option("--m", m, "area quadrature resolution");
  lemma_cmd->add_option("--tol", tol, "acceptance tolerance at h = 1e-3");

  CLI::App* ham_cmd = app.add_subcommand("ham-integrate", "integrate the weak Hamiltonian system");
  ham_cmd->add_option("--state", state, "state file")->required();
  ham_cmd->add_option("--config", config, "run config");
  ham_cmd->add_option("--T", T, "final time");
  ham_cmd->add_option("--steps", steps, "override step count");
  ham_cmd->add_option("--out-dir", out_dir, "output directory");

  CLI::App* report_cmd = app.add_subcommand("report", "summarize a completed run directory");
  report_cmd->add_option("--run-dir", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (shoot_cmd->parsed()) return run_shoot(image, sidecar, momenta, config, out_dir);
    if (match_cmd->parsed())
      return run_match(source, source_sidecar, target, target_sidecar, config, out_dir);
    if (lemma_cmd->parsed()) {
      if (scene.empty() && !suite) {
        std::cerr << "verify-lemma: --scene or --suite required\n";
        return 1;
      }
      return run_verify_lemma(scene, suite, out_csv, m, tol);
    }
    if (ham_cmd->parsed()) return run_ham_integrate(state, config, T, steps, out_dir);
    if (report_cmd->parsed()) return run_report(run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
