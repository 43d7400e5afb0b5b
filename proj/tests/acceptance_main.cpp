// Acceptance suite: one pass/fail line per criterion, exit 0 iff all
// requested criteria pass. Tolerances are pinned in code.
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "geomatch/config.hpp"
#include "geomatch/matching.hpp"
#include "geomatch/shape_derivative.hpp"
#include "support/ham_states.hpp"
#include "support/oracles.hpp"

using namespace geomatch;

namespace {

int g_failures = 0;

void report(int crit, bool ok, const std::string& what) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", crit, what.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Derivation-lemma oracle
// ---------------------------------------------------------------------------

void criterion_1() {
  const int m = 512;
  bool all_ok = true;
  std::string detail;
  int scenes = 0;
  for (const LemmaScene& scene : lemma_scene_suite()) {
    if (scene.degenerate) continue;
    ++scenes;
    const double analytic = boundary_derivative(scene.prob, m, 4).total();
    const double j0 = domain_functional_clipped(scene.prob, 0.0, m);
    const double jh = domain_functional_clipped(scene.prob, 1e-3, m);
    const double fd = (jh - j0) / 1e-3;
    const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic), 1e-6);
    detail += fmt("%s %.2e; ", scene.name.c_str(), rel);
    if (rel > 1e-2) all_ok = false;
  }
  {
    ++scenes;
    const ImageLemmaScene s = lemma_image_scene();
    const double analytic = image_derivative(s.f_img, s.g_img, s.X, 512, 512).total();
    const double j0 = image_functional_clipped(s.f_img, s.g_img, s.X, 0.0, m);
    const double jh = image_functional_clipped(s.f_img, s.g_img, s.X, 1e-3, m);
    const double fd = (jh - j0) / 1e-3;
    const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic), 1e-6);
    detail += fmt("%s %.2e", s.name.c_str(), rel);
    if (rel > 1e-2) all_ok = false;
  }
  report(1, all_ok && scenes >= 6,
         fmt("derivation lemma, %d scenes, FD(h=1e-3) rel err <= 1e-2 [%s]", scenes,
             detail.c_str()));
}

// ---------------------------------------------------------------------------
// 2. Constant speed
// ---------------------------------------------------------------------------

MomentumTriple random_triple(std::mt19937_64& rng, const ShootingProblem& prob, double mag) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vec2 c1{0.35 + 0.1 * u(rng), 0.45 + 0.1 * u(rng)};
  const Vec2 c2{0.6 + 0.1 * u(rng), 0.55 + 0.1 * u(rng)};
  const double a1 = mag * u(rng), a2 = mag * u(rng), b1 = mag * (0.5 + 0.5 * std::abs(u(rng)));
  MomentumTriple mom = MomentumTriple::zero(prob.grid_nodes.size(), prob.curve_nodes.size());
  auto smooth = [&](Vec2 x) {
    const double g1 = std::exp(-norm_sq(x - c1) / (2 * 0.15 * 0.15));
    const double g2 = std::exp(-norm_sq(x - c2) / (2 * 0.2 * 0.2));
    return Vec2{a1 * g1 - 0.4 * a2 * g2, a2 * g2 + 0.3 * a1 * g1};
  };
  for (std::size_t j = 0; j < prob.grid_nodes.size(); ++j) {
    mom.p_a[j] = smooth(prob.grid_nodes[j]);
    mom.p_c[j] = b1 * std::exp(-norm_sq(prob.grid_nodes[j] - c1) / (2 * 0.2 * 0.2));
  }
  for (std::size_t k = 0; k < prob.curve_nodes.size(); ++k)
    mom.p_b[k] = smooth(prob.curve_nodes[k]) * 0.5;
  return mom;
}

GeodesicConfig speed_cfg(int steps) {
  GeodesicConfig cfg;
  cfg.kernel_v.sigma = 0.18;
  cfg.kernel_s.sigma = 0.2;
  cfg.steps = steps;
  return cfg;
}

void criterion_2() {
  // 16x16 grid + 32-node curve
  std::vector<LipschitzDomain> parts = testing::disk_partition({0.5, 0.5}, 0.22, 32);
  std::vector<IntensityGrid> grids;
  grids.push_back(IntensityGrid::constant(32, 1.0));
  for (int i = 0; i < 4; ++i) grids.push_back(IntensityGrid::constant(32, 0.0));
  const PiecewiseImage img = project(std::move(grids), std::move(parts));
  const ShootingProblem prob = ShootingProblem::build(img, 16);

  std::mt19937_64 rng(2024);
  bool all_ok = true;
  double worst40 = 0.0, worst_ratio = 1e300;
  for (int trial = 0; trial < 10; ++trial) {
    const MomentumTriple mom = random_triple(rng, prob, 2.2);
    auto drift = [&](int steps) {
      const ShootingTrajectory traj = shoot(prob, mom, speed_cfg(steps));
      const double v0 = traj.states.front().speed_v_sq;
      const double s0 = traj.states.front().speed_s_sq;
      double worst = 0.0;
      for (const auto& st : traj.states) {
        worst = std::max(worst, std::abs(st.speed_v_sq - v0) / std::max(v0, 1e-300));
        if (s0 > 1e-14) worst = std::max(worst, std::abs(st.speed_s_sq - s0) / s0);
      }
      return worst;
    };
    const double d40 = drift(40);
    const double d80 = drift(80);
    worst40 = std::max(worst40, d40);
    const double ratio = d80 > 0 ? d40 / d80 : 1e300;
    worst_ratio = std::min(worst_ratio, ratio);
    if (d40 > 1e-3) all_ok = false;
    if (ratio < 8.0 && d80 > 1e-13) all_ok = false;
  }
  report(2, all_ok,
         fmt("constant speed, 10 triples: max drift %.2e <= 1e-3, min N40/N80 ratio %.1f >= 8",
             worst40, worst_ratio));
}

// ---------------------------------------------------------------------------
// 3 + 4. Hamiltonian conservation and the uniqueness-theorem shadow
// ---------------------------------------------------------------------------

HamiltonianConfig ham_cfg() {
  HamiltonianConfig cfg;
  cfg.kernel_v.sigma = 0.2;
  cfg.kernel_s.sigma = 0.25;
  return cfg;
}

std::vector<testing::HamStateDraw> ham_draws() {
  std::mt19937_64 rng(7771);
  std::vector<testing::HamStateDraw> draws;
  for (int i = 0; i < 10; ++i)
    draws.push_back(testing::HamStateDraw::random(rng, 0.35 + 0.02 * i));
  return draws;
}

void criterion_3() {
  const HamiltonianConfig cfg = ham_cfg();
  bool all_ok = true;
  double worst40 = 0.0, worst_ratio = 1e300;
  int measurable = 0;
  for (const auto& draw : ham_draws()) {
    const HamiltonianState st = draw.sample(24);
    auto drift = [&](int steps) {
      const HamiltonianTrajectory traj = integrate_hamiltonian(st, cfg, 1.0, steps);
      const double h0 = traj.energy.front();
      double worst = 0.0;
      for (double h : traj.energy) worst = std::max(worst, std::abs(h - h0) / std::abs(h0));
      return worst;
    };
    const double d40 = drift(40);
    const double d80 = drift(80);
    worst40 = std::max(worst40, d40);
    if (d40 > 1e-3) all_ok = false;
    // the 4th-order shrink is only measurable above the double-precision floor
    if (d80 > 1e-13) {
      ++measurable;
      worst_ratio = std::min(worst_ratio, d40 / d80);
      if (d40 / d80 < 8.0) all_ok = false;
    }
  }
  // the shrink must be demonstrated on at least one state: add a stronger
  // draw (same family) if every tolerance state sits at the precision floor
  if (measurable == 0) {
    std::mt19937_64 rng(42);
    const HamiltonianState st = testing::HamStateDraw::random(rng, 1.0).sample(24);
    auto drift = [&](int steps) {
      const HamiltonianTrajectory traj = integrate_hamiltonian(st, cfg, 1.0, steps);
      const double h0 = traj.energy.front();
      double worst = 0.0;
      for (double h : traj.energy) worst = std::max(worst, std::abs(h - h0) / std::abs(h0));
      return worst;
    };
    worst_ratio = drift(40) / drift(80);
    if (worst_ratio < 8.0) all_ok = false;
  }
  report(3, all_ok,
         fmt("hamiltonian conservation, 10 states (r=2): max drift %.2e <= 1e-3; shrink >= 8x "
             "(worst measurable ratio %.1f, %d/10 above the precision floor)",
             worst40, worst_ratio, measurable));
}

void criterion_4() {
  const HamiltonianConfig cfg = ham_cfg();
  const auto draws = ham_draws();
  bool all_ok = true;
  double worst = 0.0;
  std::vector<double> coarse_errs;
  for (const auto& draw : draws) {
    const testing::TwoRouteErrors err = testing::two_route_errors(draw.sample(24), cfg, 40);
    coarse_errs.push_back(err.max());
    worst = std::max(worst, err.max());
    if (err.max() > 1e-2) all_ok = false;
  }
  // joint space/time refinement on the first three draws
  bool refine_ok = true;
  std::string rdetail;
  for (int i = 0; i < 3; ++i) {
    const testing::TwoRouteErrors fine = testing::two_route_errors(draws[i].sample(32), cfg, 80);
    rdetail += fmt("%.2e->%.2e ", coarse_errs[i], fine.max());
    if (fine.max() >= coarse_errs[i]) refine_ok = false;
  }
  report(4, all_ok && refine_ok,
         fmt("reconstruct vs weak integration, 10 states: max componentwise rel err %.2e <= "
             "1e-2 at N=40; refinement decreases error [%s]",
             worst, rdetail.c_str()));
}

// ---------------------------------------------------------------------------
// 5. Picard contraction
// ---------------------------------------------------------------------------

void criterion_5() {
  const PiecewiseImage img = testing::disk_image(32, {0.5, 0.5}, 0.2);
  const ShootingProblem prob = ShootingProblem::build(img, 16);
  GeodesicConfig cfg = speed_cfg(10);
  std::mt19937_64 rng(555);
  MomentumTriple mom = random_triple(rng, prob, 0.5);
  const ShootingTrajectory probe = shoot(prob, mom, cfg);
  mom = mom.scaled(1.0 / std::sqrt(probe.states.front().speed_v_sq +
                                   probe.states.front().speed_s_sq));

  // contraction at T = 0.1
  FieldRecord cand = zero_field_record(prob, cfg, 10, 0.1);
  std::vector<double> dist;
  for (int it = 0; it < 6; ++it) {
    const FieldRecord next = picard_step(cand, prob, mom, cfg);
    dist.push_back(field_record_distance(next, cand));
    cand = next;
  }
  bool ratios_ok = true;
  double worst_ratio = 0.0;
  for (std::size_t i = 1; i < dist.size(); ++i) {
    if (dist[i - 1] <= 1e-14) break;
    worst_ratio = std::max(worst_ratio, dist[i] / dist[i - 1]);
    if (dist[i] / dist[i - 1] > 0.9) ratios_ok = false;
  }

  // fixed-point identity at the shoot output (T = 1)
  GeodesicConfig full = speed_cfg(20);
  const ShootingTrajectory traj = shoot(prob, mom, full);
  const FieldRecord rec = field_record_of(traj);
  const double move = field_record_distance(picard_step(rec, prob, mom, full), rec);
  const double scale = field_record_distance(rec, zero_field_record(prob, full, 20, 1.0));
  const bool fixed_ok = move <= 1e-6 * scale;
  report(5, ratios_ok && fixed_ok,
         fmt("Picard: successive-distance ratios <= 0.9 (worst %.3f); fixed-point move %.2e <= "
             "1e-6 relative",
             worst_ratio, move / scale));
}

// ---------------------------------------------------------------------------
// 6. Gradient correctness
// ---------------------------------------------------------------------------

MomentumTriple random_dir(std::mt19937_64& rng, const ShootingProblem& prob) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MomentumTriple d = MomentumTriple::zero(prob.grid_nodes.size(), prob.curve_nodes.size());
  const Vec2 c{0.4 + 0.2 * u(rng), 0.4 + 0.2 * u(rng)};
  for (std::size_t j = 0; j < prob.grid_nodes.size(); ++j) {
    const double g = std::exp(-norm_sq(prob.grid_nodes[j] - c) / (2 * 0.2 * 0.2));
    d.p_a[j] = {u(rng) * g, u(rng) * g};
    d.p_c[j] = u(rng) * g;
  }
  for (std::size_t k = 0; k < prob.curve_nodes.size(); ++k) d.p_b[k] = {u(rng), u(rng)};
  return d;
}

double triple_dot(const MomentumTriple& a, const MomentumTriple& b) {
  double acc = 0;
  for (std::size_t j = 0; j < a.p_a.size(); ++j)
    acc += dot(a.p_a[j], b.p_a[j]) + a.p_c[j] * b.p_c[j];
  for (std::size_t k = 0; k < a.p_b.size(); ++k) acc += dot(a.p_b[k], b.p_b[k]);
  return acc;
}

void criterion_6() {
  std::mt19937_64 rng(909);
  bool all_ok = true;
  std::string detail;

  auto check_scene = [&](const MatchProblem& mp, const MatchConfig& cfg, double tol,
                         const char* name) {
    const MomentumTriple mom = random_dir(rng, mp.shooting).scaled(0.2);
    const MomentumTriple grad = energy_gradient(mom, mp, cfg);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      MomentumTriple dir = random_dir(rng, mp.shooting);
      const double h = 1e-4;
      MomentumTriple plus = mom, minus = mom;
      for (std::size_t j = 0; j < mom.p_a.size(); ++j) {
        plus.p_a[j] += dir.p_a[j] * h;
        minus.p_a[j] -= dir.p_a[j] * h;
        plus.p_c[j] += h * dir.p_c[j];
        minus.p_c[j] -= h * dir.p_c[j];
      }
      for (std::size_t k = 0; k < mom.p_b.size(); ++k) {
        plus.p_b[k] += dir.p_b[k] * h;
        minus.p_b[k] -= dir.p_b[k] * h;
      }
      const double fd = (energy(plus, mp, cfg).total - energy(minus, mp, cfg).total) / (2 * h);
      const double adj = triple_dot(grad, dir);
      worst = std::max(worst, std::abs(adj - fd) / std::max(std::abs(fd), 1e-9));
    }
    detail += fmt("%s %.2e; ", name, worst);
    if (worst > tol) all_ok = false;
  };

  {
    MatchConfig cfg;
    cfg.sigma_v = 0.15;
    cfg.sigma_attach = 0.1;
    cfg.steps = 10;
    cfg.grid_n = 32;
    const PiecewiseImage I0 = single_piece_image(testing::blob_grid(32, {0.45, 0.5}, 0.13));
    const PiecewiseImage It = single_piece_image(testing::blob_grid(32, {0.55, 0.5}, 0.13));
    check_scene(MatchProblem::build(I0, It, cfg), cfg, 1e-2, "smooth 32x32");
  }
  {
    MatchConfig cfg;
    cfg.sigma_v = 0.15;
    cfg.sigma_attach = 0.1;
    cfg.steps = 10;
    cfg.grid_n = 24;
    const PiecewiseImage I0 = testing::disk_image(32, {0.45, 0.5}, 0.16);
    const PiecewiseImage It = testing::disk_image(32, {0.55, 0.5}, 0.16);
    check_scene(MatchProblem::build(I0, It, cfg), cfg, 5e-2, "jump 24x24");
  }
  report(6, all_ok,
         fmt("gradient vs central FD, 5 directions: rel err [%s] (<= 1e-2 smooth, 5e-2 jump)",
             detail.c_str()));
}

// ---------------------------------------------------------------------------
// 7. End-to-end matching
// ---------------------------------------------------------------------------

void criterion_7() {
  bool all_ok = true;
  std::string detail;

  // translated Gaussian, 32x32
  {
    MatchConfig cfg;
    cfg.sigma_v = 0.18;
    cfg.sigma_s = 0.25;
    cfg.sigma_attach = 0.05;
    cfg.steps = 10;
    cfg.grid_n = 32;
    cfg.max_iters = 100;
    cfg.attach_stop = 0.095;
    const PiecewiseImage I0 = single_piece_image(testing::blob_grid(32, {0.42, 0.5}, 0.13));
    const PiecewiseImage It = single_piece_image(testing::blob_grid(32, {0.54, 0.5}, 0.13));
    const MatchResult res = match(I0, It, cfg);
    const double frac = res.attachment_history.back() / res.attachment_history.front();
    detail += fmt("gaussian: %.0f%% in %d iters; ", 100 * (1 - frac), res.iterations);
    if (frac > 0.10) all_ok = false;
  }

  // translated disk (jump curve active)
  double curve_share = 0.0;
  {
    MatchConfig cfg;
    cfg.sigma_v = 0.16;
    cfg.sigma_s = 0.25;
    cfg.sigma_attach = 0.08;
    cfg.steps = 10;
    cfg.grid_n = 28;
    cfg.max_iters = 100;
    cfg.attach_stop = 0.19;
    const PiecewiseImage I0 = testing::disk_image(32, {0.42, 0.5}, 0.16);
    const PiecewiseImage It = testing::disk_image(32, {0.54, 0.5}, 0.16);
    const MatchResult res = match(I0, It, cfg);
    const double frac = res.attachment_history.back() / res.attachment_history.front();
    detail += fmt("disk: %.0f%% in %d iters", 100 * (1 - frac), res.iterations);
    if (frac > 0.20) all_ok = false;

    // momentum decomposition: curve share of the initial velocity pairing
    const ShootingProblem& prob = res.trajectory.problem;
    ParticleField total, curve_part;
    total.spec = curve_part.spec = res.trajectory.cfg.kernel_v;
    for (std::size_t j = 0; j < prob.grid_nodes.size(); ++j) {
      total.nodes.push_back(prob.grid_nodes[j]);
      total.covectors.push_back(res.momenta.p_a[j] * prob.grid_weights[j]);
    }
    for (std::size_t k = 0; k < prob.curve_nodes.size(); ++k) {
      total.nodes.push_back(prob.curve_nodes[k]);
      total.covectors.push_back(res.momenta.p_b[k] * prob.curve_weights[k]);
      curve_part.nodes.push_back(prob.curve_nodes[k]);
      curve_part.covectors.push_back(res.momenta.p_b[k] * prob.curve_weights[k]);
    }
    curve_share = field_pairing(curve_part, total) / std::max(rkhs_norm_sq(total), 1e-300);
    detail += fmt(", curve share %.0f%%; ", 100 * curve_share);
    if (curve_share < 0.5) all_ok = false;
  }

  // pure contrast (multi-modal): same geometry, remapped gray levels
  {
    MatchConfig cfg;
    cfg.sigma_v = 0.15;
    cfg.sigma_s = 0.15;
    cfg.sigma_attach = 0.1;
    cfg.steps = 10;
    cfg.grid_n = 24;
    cfg.max_iters = 40;
    auto src = [](Vec2 p) {
      return 0.15 + 0.3 * p.x +
             0.4 * std::exp(-norm_sq(p - Vec2{0.5, 0.5}) / (2 * 0.18 * 0.18));
    };
    // affine gray remap: a gain the spatial action cannot synthesize
    auto remap = [](double z) { return 0.25 + 0.55 * z; };
    const PiecewiseImage I0 = single_piece_image(IntensityGrid::from_function(32, src));
    const PiecewiseImage It = single_piece_image(
        IntensityGrid::from_function(32, [&](Vec2 p) { return remap(src(p)); }));
    const MatchResult res = match(I0, It, cfg);
    const ShootingProblem& prob = res.trajectory.problem;
    double spatial = 0.0, contrast = 0.0;
    for (std::size_t j = 0; j < prob.grid_nodes.size(); ++j) {
      spatial += prob.grid_weights[j] * norm_sq(res.momenta.p_a[j]);
      contrast += prob.grid_weights[j] * res.momenta.p_c[j] * res.momenta.p_c[j];
    }
    const double ratio = std::sqrt(spatial) / std::max(std::sqrt(contrast), 1e-300);
    detail += fmt("contrast scene: spatial/contrast %.1f%%", 100 * ratio);
    if (ratio > 0.10) all_ok = false;
  }

  report(7, all_ok, fmt("end-to-end matching [%s]", detail.c_str()));
}

// ---------------------------------------------------------------------------
// 8. Flow-bound inequalities
// ---------------------------------------------------------------------------

void criterion_8() {
  std::mt19937_64 rng(321);
  int violations = 0;
  for (int pair = 0; pair < 20; ++pair) {
    ParticleField u = testing::random_field(rng, 8, 0.25 + 0.05 * (pair % 3), 1.0, 0.3);
    ParticleField v = testing::random_field(rng, 8, 0.25 + 0.05 * (pair % 3), 1.0, 0.3);
    for (auto* f : {&u, &v}) {
      const double n = std::sqrt(rkhs_norm_sq(*f) / f->spec.scale);
      if (n > 1.0)
        for (auto& c : f->covectors) c *= 1.0 / n;
    }
    const FlowBoundsReport rep = check_flow_bounds(u, v, 1.0, 20, 16);
    if (!rep.field_ok || !rep.time_ok) ++violations;
  }
  report(8, violations == 0,
         fmt("flow-bound inequalities on 20 random kernel-field pairs: %d violations",
             violations));
}

// ---------------------------------------------------------------------------
// 9. Kernel/FD micro-suite
// ---------------------------------------------------------------------------

void criterion_9() {
  std::mt19937_64 rng(111);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  bool ok = true;
  double worst = 0.0;

  KernelSpec spec;
  spec.sigma = 0.3;
  spec.dimension = 2;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec2 x{u(rng), u(rng)}, y{u(rng), u(rng)};
    const Vec2 an = grad1_k(spec, x, y);
    const Vec2 fd = testing::fd_gradient([&](Vec2 p) { return eval_k(spec, p, y); }, x, 1e-5);
    const double rel = norm(an - fd) / std::max(norm(fd), 1e-9);
    worst = std::max(worst, rel);
    if (rel > 1e-4) ok = false;
  }
  for (int trial = 0; trial < 10; ++trial) {
    ParticleField f = testing::random_field(rng, 7, 0.3, 1.4, 1.0);
    const Vec2 x{u(rng), u(rng)};
    const Mat2 an = field_jacobian(f, x);
    const double h = 1e-5;
    const Vec2 dx = (field_eval(f, {x.x + h, x.y}) - field_eval(f, {x.x - h, x.y})) / (2 * h);
    const Vec2 dy = (field_eval(f, {x.x, x.y + h}) - field_eval(f, {x.x, x.y - h})) / (2 * h);
    const Mat2 fd{dx.x, dy.x, dx.y, dy.y};
    const double rel = (an - fd).frobenius() / std::max(fd.frobenius(), 1e-9);
    worst = std::max(worst, rel);
    if (rel > 1e-4) ok = false;
  }
  // hamiltonian_value directional derivatives
  {
    std::mt19937_64 hrng(17);
    const HamiltonianConfig cfg = ham_cfg();
    const HamiltonianState st = testing::HamStateDraw::random(hrng, 0.6).sample(10);
    const HamiltonianGradients g = ham_gradients(st, cfg);
    for (int dir = 0; dir < 3; ++dir) {
      HamiltonianState d = testing::HamStateDraw::random(hrng, 1.0).sample(10);
      for (int i = 0; i < d.r; ++i)
        for (auto& q : d.Q[i]) q = 0.3 * std::sin(5.0 * q + dir);
      auto perturbed = [&](double eps) {
        HamiltonianState out = st;
        for (std::size_t k = 0; k < st.Q0.size(); ++k) {
          out.Q0[k] += d.Q0[k] * eps;
          out.P0[k] += d.P0[k] * eps;
        }
        for (int i = 0; i < st.r; ++i)
          for (std::size_t f = 0; f < st.Q[i].size(); ++f) {
            out.Q[i][f] += eps * d.Q[i][f];
            out.P[i][f] += eps * d.P[i][f];
          }
        return out;
      };
      const double eps = 1e-5;
      const double fd =
          (hamiltonian_value(perturbed(eps), cfg) - hamiltonian_value(perturbed(-eps), cfg)) /
          (2 * eps);
      double an = 0.0;
      for (std::size_t k = 0; k < st.Q0.size(); ++k)
        an += st.curve_weights[k] * (dot(g.gP0[k], d.P0[k]) + dot(g.gQ0[k], d.Q0[k]));
      for (int i = 0; i < st.r; ++i)
        for (std::size_t f = 0; f < st.Q[i].size(); ++f)
          an += st.cell_weight() * (g.gP[i][f] * d.P[i][f] + g.gQ[i][f] * d.Q[i][f]);
      const double rel = std::abs(an - fd) / std::max(std::abs(fd), 1e-9);
      worst = std::max(worst, rel);
      if (rel > 1e-4) ok = false;
    }
  }
  // Gram positive semidefiniteness, 100 draws
  int psd_fail = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ParticleField f = testing::random_field(rng, 1 + int(rng() % 10), 0.2 + 0.02 * (trial % 10),
                                            1.0, 2.0);
    if (rkhs_norm_sq(f) < -1e-12) ++psd_fail;
  }
  report(9, ok && psd_fail == 0,
         fmt("kernel/FD micro-suite: worst FD rel err %.2e <= 1e-4; PSD failures %d/100", worst,
             psd_fail));
}

}  // namespace

int main(int argc, char** argv) {
  setenv("GEOMATCH_THREADS", "2", 0);  // cap only when unset
  int which = 0;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc) which = std::atoi(argv[++i]);
  }
  using Fn = void (*)();
  const Fn criteria[] = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                         criterion_6, criterion_7, criterion_8, criterion_9};
  if (which >= 1 && which <= 9) {
    criteria[which - 1]();
  } else {
    for (Fn fn : criteria) fn();
  }
  return g_failures == 0 ? 0 : 1;
}
